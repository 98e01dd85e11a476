"""Training losses for the detection heads, with analytic gradients.

Every ``*_grad`` function returns the gradient of its loss with respect to the
prediction argument, so :func:`grad_check` can compare it against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    weights: Tuple[float, float, float, float, float] = (1.0, 0.1, 1.0, 1.0, 0.1)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("focal exponents must be non-negative")
        if len(self.weights) != 5:
            raise ValueError("expected five loss weights")
        if any(w < 0 for w in self.weights):
            raise ValueError("loss weights must be non-negative")


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def _focal_parts(pred, gt, cfg):
    pred, gt = _pair(pred, gt)
    pred = np.clip(pred, EPS, 1.0 - EPS)
    pos = gt == 1.0
    n = max(int(pos.sum()), 1)
    return pred, gt, pos, n


def focal_loss(pred, gt, cfg: LossConfig = LossConfig()) -> float:
    """Penalty-reduced focal loss on the center heatmap.

    Positive cells (gt == 1) contribute ``(1-p)^a log p``; all other cells
    ``(1-g)^b p^a log(1-p)``. The negated sum is divided by the number of
    positive cells (or 1 if there are none). ``pred`` is clamped to
    ``[EPS, 1-EPS]``.
    """
    p, g, pos, n = _focal_parts(pred, gt, cfg)
    a, b = cfg.alpha, cfg.beta
    terms = np.where(
        pos,
        (1.0 - p) ** a * np.log(p),
        (1.0 - g) ** b * p**a * np.log(1.0 - p),
    )
    return float(-terms.sum() / n)


def focal_loss_grad(pred, gt, cfg: LossConfig = LossConfig()) -> np.ndarray:
    p, g, pos, n = _focal_parts(pred, gt, cfg)
    a, b = cfg.alpha, cfg.beta
    d_pos = -a * (1.0 - p) ** (a - 1.0) * np.log(p) + (1.0 - p) ** a / p
    d_neg = (1.0 - g) ** b * (
        a * p ** (a - 1.0) * np.log(1.0 - p) - p**a / (1.0 - p)
    )
    return -np.where(pos, d_pos, d_neg) / n


def _l1_rows(pred, target) -> Tuple[np.ndarray, np.ndarray, int]:
    pred, target = _pair(pred, target)
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    n = pred.shape[0]
    if n == 0:
        raise ValueError("L1 losses need at least one object")
    return pred, target, n


def _l1(pred, target) -> float:
    pred, target, n = _l1_rows(pred, target)
    return float(np.abs(pred - target).sum() / n)


def _l1_grad(pred, target) -> np.ndarray:
    pred_arr = np.asarray(pred, dtype=np.float64)
    p, t, n = _l1_rows(pred, target)
    return (np.sign(p - t) / n).reshape(pred_arr.shape)


def l1_size_loss(pred_sizes, gt_sizes) -> float:
    """Mean over objects of the L1 box-size error summed over (w, h)."""
    return _l1(pred_sizes, gt_sizes)


def l1_size_loss_grad(pred_sizes, gt_sizes) -> np.ndarray:
    return _l1_grad(pred_sizes, gt_sizes)


def l1_offset_loss(pred_offsets, gt_offsets) -> float:
    return _l1(pred_offsets, gt_offsets)


def l1_offset_loss_grad(pred_offsets, gt_offsets) -> np.ndarray:
    return _l1_grad(pred_offsets, gt_offsets)


def track_target(current_centers, previous_centers) -> np.ndarray:
    """Regression target for the track head: previous minus current center."""
    cur, prev = _pair(current_centers, previous_centers)
    return prev - cur


def l1_track_loss(pred_track_offsets, current_centers, previous_centers) -> float:
    return _l1(pred_track_offsets, track_target(current_centers, previous_centers))


def l1_track_loss_grad(pred_track_offsets, current_centers, previous_centers) -> np.ndarray:
    return _l1_grad(pred_track_offsets, track_target(current_centers, previous_centers))


def log_distance_loss(pred_log_d, gt_d_meters) -> float:
    """Mean absolute error between predicted log-distance and log of true range."""
    gt = np.asarray(gt_d_meters, dtype=np.float64)
    if np.any(gt <= 0):
        raise ValueError("ground-truth distances must be positive")
    return _l1(pred_log_d, np.log(gt))


def log_distance_loss_grad(pred_log_d, gt_d_meters) -> np.ndarray:
    gt = np.asarray(gt_d_meters, dtype=np.float64)
    if np.any(gt <= 0):
        raise ValueError("ground-truth distances must be positive")
    return _l1_grad(pred_log_d, np.log(gt))


def total_loss(components: Sequence[float], cfg: LossConfig = LossConfig()) -> float:
    """Weighted sum of (heat, size, offset, track, distance) losses."""
    if len(components) != 5:
        raise ValueError("expected five loss components")
    return float(sum(w * c for w, c in zip(cfg.weights, components)))


def numerical_grad(
    loss: Callable[[np.ndarray], float], x, eps: float = 1e-4
) -> np.ndarray:
    """Fourth-order central difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        vals = []
        for k in (2, 1, -1, -2):
            flat[i] = orig + k * eps
            vals.append(loss(x))
        flat[i] = orig
        f2, f1, fm1, fm2 = vals
        gflat[i] = (-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * eps)
    return grad


def grad_check(
    loss: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x,
    eps: float = 1e-4,
) -> float:
    """Max relative error between ``grad(x)`` and central finite differences.

    The denominator per coordinate is ``max(1e-8, |analytic|)``. ``x`` must be
    away from kinks and clamps by at least ``2 * eps``.
    """
    analytic = np.asarray(grad(np.array(x, dtype=np.float64)), dtype=np.float64)
    numeric = numerical_grad(loss, x, eps)
    denom = np.maximum(1e-8, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
