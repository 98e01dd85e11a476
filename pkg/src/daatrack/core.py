"""Shared geometry and camera types.

All detection coordinates live in full-resolution pixel space. Conversions to
and from the 1/8 output grid happen only inside :mod:`daatrack.heatmap`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

Vec2 = Tuple[float, float]

MIN_IMAGE_SIDE = 64


@dataclass(frozen=True)
class CameraModel:
    width_px: int = 2448
    height_px: int = 2048
    hfov_deg: float = 36.7
    vfov_deg: float = 31.0
    frame_rate_hz: float = 10.0

    def __post_init__(self):
        if self.width_px < MIN_IMAGE_SIDE or self.height_px < MIN_IMAGE_SIDE:
            raise ValueError(
                f"image must be at least {MIN_IMAGE_SIDE}px per side, "
                f"got {self.width_px}x{self.height_px}"
            )
        for name in ("hfov_deg", "vfov_deg", "frame_rate_hz"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.hfov_deg >= 180 or self.vfov_deg >= 180:
            raise ValueError("field of view must be below 180 degrees")

    @property
    def focal_px(self) -> float:
        """Pinhole focal length in pixels, from the horizontal field of view."""
        return self.width_px / (2.0 * math.tan(math.radians(self.hfov_deg) / 2.0))

    @property
    def deg_per_pixel_h(self) -> float:
        return self.hfov_deg / self.width_px

    @property
    def deg_per_pixel_v(self) -> float:
        return self.vfov_deg / self.height_px

    @property
    def frame_period_s(self) -> float:
        return 1.0 / self.frame_rate_hz


def deg_per_pixel(camera: CameraModel) -> float:
    """Degrees per pixel of ``camera``.

    Uses the horizontal ratio; the same scalar is applied to both image axes
    when converting pixel velocity to angular rate.
    """
    return camera.deg_per_pixel_h


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> Vec2:
        return (self.cx, self.cy)

    def area(self) -> float:
        return self.w * self.h

    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.cx + dx, self.cy + dy, self.w, self.h)


class DetectionSource(enum.Enum):
    PRIMARY_PASS = "primary_pass"
    CROPPED_PASS = "cropped_pass"
    SIMULATOR = "simulator"


# exp(log_distance) must fall in this open interval (meters)
LOG_DISTANCE_BOUNDS = (0.0, math.log(1e5))


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    track_offset: Vec2 = (0.0, 0.0)
    log_distance: Optional[float] = None
    frame_index: int = 0
    source: DetectionSource = DetectionSource.PRIMARY_PASS
    # simulator ground-truth label; not part of a real detector's output
    is_false_positive: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.log_distance is not None:
            lo, hi = LOG_DISTANCE_BOUNDS
            if not lo < self.log_distance < hi:
                raise ValueError(
                    f"distance exp({self.log_distance}) outside (1, 1e5) m"
                )

    @property
    def center(self) -> Vec2:
        return self.box.center

    @property
    def distance_m(self) -> Optional[float]:
        if self.log_distance is None:
            return None
        return math.exp(self.log_distance)

    def offset_adjusted_center(self) -> Vec2:
        """Center recovered in the previous frame: center minus track offset."""
        return (self.box.cx - self.track_offset[0], self.box.cy - self.track_offset[1])


@dataclass(frozen=True)
class FrameMeta:
    frame_index: int
    timestamp_s: float
    camera: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
