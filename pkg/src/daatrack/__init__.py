"""Vision-based detect-and-avoid tracking toolkit.

Heatmap target codec, training losses, ego-motion alignment, offset-vector
tracking, per-track Kalman/tCPA/range estimation, a synthetic encounter
simulator and ASTM F3442-style evaluation.
"""

from .alignment import AffineTransform, AlignmentError, FlowField, affine_to_flow, fit_affine
from .core import BoundingBox, CameraModel, Detection, DetectionSource, FrameMeta
from .estimators import AffineMotionEstimator, HeatmapDecoder
from .evaluation import (
    MetricsAccumulator,
    MetricsReport,
    OwnshipSpec,
    astm_check,
    compute_metrics,
    match_frame,
    r95,
)
from .heatmap import HeadMaps, decode, render_targets
from .kalman import IntruderEstimate, KalmanState, NoiseConfig
from .pipeline import evaluate_encounters, run_tracker
from .sim import (
    CALIBRATED,
    NOISELESS,
    EncounterScenario,
    NoiseModel,
    head_on_template,
    run_encounter,
    sample_encounters,
)
from .tracker import OffsetTracker, TrackStatus

__version__ = "0.1.0"

__all__ = [
    "AffineMotionEstimator", "AffineTransform", "AlignmentError", "BoundingBox", "CALIBRATED",
    "CameraModel", "Detection", "DetectionSource", "EncounterScenario", "FlowField", "FrameMeta",
    "HeadMaps", "HeatmapDecoder", "IntruderEstimate", "KalmanState", "MetricsAccumulator",
    "MetricsReport", "NOISELESS", "NoiseConfig", "NoiseModel", "OffsetTracker", "OwnshipSpec",
    "TrackStatus", "affine_to_flow", "astm_check", "compute_metrics", "decode",
    "evaluate_encounters", "fit_affine", "head_on_template", "match_frame", "r95",
    "render_targets", "run_encounter", "run_tracker", "sample_encounters",
]
