"""Self-check suites run by ``daatrack check``.

Each suite returns a :class:`CheckResult` whose ``lines`` hold printable
diagnostics. Suites are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .alignment import AffineTransform, affine_to_flow, fit_affine, sample_affine
from .kalman import NoiseConfig, kf_init, kf_predict, kf_step, kf_update, tcpa
from .losses import (
    EPS,
    focal_loss,
    focal_loss_grad,
    grad_check,
    l1_offset_loss,
    l1_size_loss,
    l1_track_loss,
    log_distance_loss,
    log_distance_loss_grad,
    total_loss,
)

GRAD_TOL = 1e-5
VALUE_TOL = 1e-6
AFFINE_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool = True
    lines: List[str] = field(default_factory=list)

    def expect(self, ok: bool, message: str) -> None:
        self.passed &= bool(ok)
        self.lines.append(f"[{'ok' if ok else 'FAIL'}] {message}")


FD_STEP = 1e-3


def focal_grad_errors(n_points: int = 50, seed: int = 0, shape=(4, 5)) -> List[float]:
    """Gradient errors at random interior points.

    Negative cells keep ``gt <= 0.9`` so the penalty weight stays above 1e-4;
    closer to 1 the true gradient sinks under the finite-difference roundoff
    of the summed loss.
    """
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_points):
        gt = rng.uniform(0.0, 0.9, size=shape)
        gt[rng.random(shape) < 0.2] = 1.0
        pred = rng.uniform(0.05, 0.95, size=shape)
        errs.append(
            grad_check(lambda p: focal_loss(p, gt), lambda p: focal_loss_grad(p, gt), pred, FD_STEP)
        )
    return errs


def log_distance_grad_errors(n_points: int = 50, seed: int = 1, n_obj: int = 6) -> List[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_points):
        d = rng.uniform(100.0, 3000.0, size=n_obj)
        # stay well clear of the kink at pred == log(d)
        delta = rng.uniform(0.01, 0.5, size=n_obj) * rng.choice([-1.0, 1.0], size=n_obj)
        pred = np.log(d) + delta
        errs.append(
            grad_check(lambda p: log_distance_loss(p, d), lambda p: log_distance_loss_grad(p, d),
                       pred, FD_STEP)
        )
    return errs


def suite_losses() -> CheckResult:
    res = CheckResult("losses")
    fe = max(focal_grad_errors())
    le = max(log_distance_grad_errors())
    res.expect(fe <= GRAD_TOL, f"focal max relative grad error {fe:.3e} (tol {GRAD_TOL:g})")
    res.expect(le <= GRAD_TOL, f"log-distance max relative grad error {le:.3e} (tol {GRAD_TOL:g})")
    half = -(0.5**2) * math.log(0.5)
    examples = [
        ("focal gt=1 p=0.5", focal_loss([0.5], [1.0]), half),
        ("focal gt=0 p=0.5", focal_loss([0.5], [0.0]), half),
        ("size (4,6) vs (3,3)", l1_size_loss([[4.0, 6.0]], [[3.0, 3.0]]), 4.0),
        ("offset (.5,.5) vs (.25,.75)", l1_offset_loss([[0.5, 0.5]], [[0.25, 0.75]]), 0.5),
        ("track moved (-2,0)", l1_track_loss([[0.0, 0.0]], [[8.0, 10.0]], [[10.0, 10.0]]), 2.0),
        ("log-distance 2000 vs 1000", log_distance_loss([math.log(2000.0)], [1000.0]), math.log(2.0)),
        ("total default weights", total_loss([1, 1, 1, 1, 1]), 3.2),
    ]
    for label, got, want in examples:
        res.expect(abs(got - want) <= VALUE_TOL, f"{label}: {got:.6f} (expected {want:.6f})")
    perfect = focal_loss([1.0 - EPS], [1.0])
    res.expect(perfect < 10 * EPS, f"focal perfect prediction {perfect:.3e}")
    return res


def affine_roundtrip_errors(n: int = 100, seed: int = 0, grid=(16, 12)) -> List[float]:
    rng = np.random.default_rng(seed)
    gw, gh = grid
    center = (gw * 16.0, gh * 16.0)
    errs = []
    for _ in range(n):
        t = sample_affine(rng, scale_sigma=0.05, rot_sigma_deg=5.0, trans_sigma_px=20.0, center=center)
        fit = fit_affine(affine_to_flow(t, gw, gh))
        errs.append(float(np.max(np.abs(fit.params - t.params))))
    return errs


def suite_alignment() -> CheckResult:
    res = CheckResult("alignment")
    err = max(affine_roundtrip_errors())
    res.expect(err <= AFFINE_TOL, f"affine round-trip max parameter error {err:.3e} (tol {AFFINE_TOL:g})")
    rng = np.random.default_rng(7)
    t = sample_affine(rng, center=(256.0, 192.0))
    flow = affine_to_flow(t, 16, 12)
    clean = fit_affine(flow)
    mask = rng.random(flow.confidence.shape) < 0.3
    flow.confidence[mask] = 0.0
    flow.offsets[:, mask] = rng.normal(0, 50, size=(2, int(mask.sum())))
    dirty = fit_affine(flow)
    diff = float(np.max(np.abs(dirty.params - clean.params)))
    res.expect(diff <= AFFINE_TOL, f"30% zero-confidence corruption changes fit by {diff:.3e}")
    ident = AffineTransform.identity()
    comp = t.compose(t.inverse())
    cerr = float(np.max(np.abs(comp.params - ident.params)))
    res.expect(cerr <= AFFINE_TOL, f"t o t^-1 identity error {cerr:.3e}")
    return res


def covariance_health(cycles: int = 10_000, seed: int = 0, dt: float = 0.1):
    """(max asymmetry, min eigenvalue) over repeated predict/update cycles."""
    rng = np.random.default_rng(seed)
    noise = NoiseConfig()
    s = kf_init((100.0, 100.0), 0.0, noise)
    worst_asym, worst_eig = 0.0, math.inf
    for _ in range(cycles):
        s = kf_predict(s, dt, noise)
        s = kf_update(s, s.position + rng.normal(0, noise.meas_sigma, 2), noise)
        worst_asym = max(worst_asym, float(np.max(np.abs(s.P - s.P.T))))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(s.P).min()))
    return worst_asym, worst_eig


def static_target_errors(trials: int = 200, updates: int = 50, seed: int = 0,
                         sigma: float = 2.0, dt: float = 0.1):
    """Mean final (position error px, speed px/s) for a static target."""
    rng = np.random.default_rng(seed)
    noise = NoiseConfig(meas_sigma=sigma)
    truth = np.array([640.0, 480.0])
    pos_err, speed = [], []
    for _ in range(trials):
        s = kf_init(truth + rng.normal(0, sigma, 2), 0.0, noise)
        for k in range(1, updates):
            s = kf_step(s, truth + rng.normal(0, sigma, 2), k * dt, noise)
        pos_err.append(float(np.linalg.norm(s.position - truth)))
        speed.append(float(np.linalg.norm(s.velocity)))
    return float(np.mean(pos_err)), float(np.mean(speed))


def static_position_bound(updates: int = 50, sigma: float = 2.0, dt: float = 0.1) -> float:
    """Per-axis sd of the newest position from a noise-free quadratic fit.

    This is the best any constant-acceleration estimator can do without a
    prior on velocity and acceleration.
    """
    t = np.arange(updates) * dt
    X = np.column_stack([np.ones_like(t), t - t[-1], 0.5 * (t - t[-1]) ** 2])
    return float(sigma * math.sqrt(np.linalg.inv(X.T @ X)[0, 0]))


def suite_kalman() -> CheckResult:
    res = CheckResult("kalman")
    asym, eig = covariance_health()
    res.expect(asym <= 1e-9, f"max covariance asymmetry after 1e4 cycles {asym:.3e}")
    res.expect(eig > 0, f"min covariance eigenvalue {eig:.3e}")
    pos, vel = static_target_errors()
    res.expect(pos < 0.5, f"static target mean position error {pos:.3f} px")
    res.expect(vel < 0.5, f"static target mean speed {vel:.3f} px/s")
    sd = static_position_bound()
    res.lines.append(
        f"[info] quadratic-fit bound: per-axis sd {sd:.3f} px, mean error {sd * math.sqrt(math.pi / 2):.3f} px"
    )
    return res


def constant_closure_tcpa(r0_m: float = 1000.0, v_mps: float = 50.0, window_s: float = 1.0,
                          rate_hz: float = 10.0) -> float:
    """tCPA after ``window_s`` of noise-free areas with area proportional to 1/R^2."""
    n = int(round(window_s * rate_hz)) + 1
    times = np.arange(n) / rate_hz
    areas = 1e6 / (r0_m - v_mps * times) ** 2
    return tcpa(times, areas, window_s=window_s)


def suite_tcpa() -> CheckResult:
    res = CheckResult("tcpa")
    got = constant_closure_tcpa()
    res.expect(got is not None and abs(got - 19.0) <= 1e-6,
               f"constant closure R0=1000 m, v=50 m/s, 1 s window: tCPA {got:.9f} s (expected 19 s)")
    flat = tcpa(np.arange(11) / 10.0, np.full(11, 25.0))
    res.expect(flat == math.inf, f"constant area: tCPA {flat} (no closure)")
    return res


SUITES: Dict[str, Callable[[], CheckResult]] = {
    "losses": suite_losses,
    "alignment": suite_alignment,
    "kalman": suite_kalman,
    "tcpa": suite_tcpa,
}
