"""scikit-learn style wrappers for the stateless stages.

Only stages that really have a fit/transform shape are wrapped here; the
tracker itself is stateful per stream and lives in :mod:`daatrack.tracker`.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alignment import (
    DEFAULT_CONF_THRESHOLD,
    DEFAULT_DET_BOUNDS,
    FLOW_STRIDE,
    AffineTransform,
    FlowField,
    fit_affine,
    residual_rms,
    warp_image,
)
from .core import Detection
from .heatmap import STRIDE, HeadMaps, decode


class HeatmapDecoder(BaseEstimator, TransformerMixin):
    """Decode per-frame head maps into detection lists.

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(self, conf_threshold: float = 0.5, max_dets: int = 100, stride: int = STRIDE):
        self.conf_threshold = conf_threshold
        self.max_dets = max_dets
        self.stride = stride

    def fit(self, X=None, y=None):
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must lie in [0, 1]")
        if self.max_dets <= 0 or self.stride <= 0:
            raise ValueError("max_dets and stride must be positive")
        self.n_features_in_ = 8  # head-map channels
        return self

    def transform(self, X: Sequence[HeadMaps]) -> List[List[Detection]]:
        check_is_fitted(self, "n_features_in_")
        if isinstance(X, HeadMaps):
            X = [X]
        return [
            decode(m, self.conf_threshold, self.max_dets, self.stride, frame_index=k)
            for k, m in enumerate(X)
        ]


class AffineMotionEstimator(BaseEstimator):
    """Fit a background affine transform to a flow field.

    Attributes
    ----------
    transform_ : AffineTransform
        Map from previous-frame to current-frame pixels.
    residual_rms_ : float
        Confidence-weighted RMS of the flow residual under ``transform_``.
    """

    def __init__(
        self,
        conf_threshold: float = DEFAULT_CONF_THRESHOLD,
        det_bounds: Optional[Tuple[float, float]] = DEFAULT_DET_BOUNDS,
        stride: int = FLOW_STRIDE,
    ):
        self.conf_threshold = conf_threshold
        self.det_bounds = det_bounds
        self.stride = stride

    def _as_flow(self, X, confidence=None) -> FlowField:
        if isinstance(X, FlowField):
            return X
        offsets = np.asarray(X, dtype=np.float64)
        if offsets.ndim != 3 or offsets.shape[0] != 2:
            raise ValueError("flow offsets must have shape (2, H, W)")
        if confidence is None:
            confidence = np.ones(offsets.shape[1:])
        return FlowField(offsets, np.asarray(confidence, dtype=np.float64), self.stride)

    def fit(self, X, y=None, confidence=None):
        """``X`` is a :class:`FlowField` or a ``(2, H, W)`` offset array."""
        flow = self._as_flow(X, confidence)
        self.transform_ = fit_affine(flow, self.conf_threshold, self.det_bounds)
        self.residual_rms_ = residual_rms(flow, self.transform_, self.conf_threshold)
        return self

    def predict(self, points) -> np.ndarray:
        """Map ``(N, 2)`` previous-frame points into the current frame."""
        check_is_fitted(self, "transform_")
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (N, 2)")
        return self.transform_.apply(pts)

    def transform(self, image) -> np.ndarray:
        """Warp a previous-frame image into current-frame coordinates."""
        check_is_fitted(self, "transform_")
        img = np.asarray(image)
        if img.ndim != 2:
            raise ValueError("expected a single-channel image")
        return warp_image(img, self.transform_)
