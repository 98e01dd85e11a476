"""Target rendering and peak decoding for the five detection heads.

The detector emits, on a grid at 1/``stride`` of the input resolution:

* ``center_heat``  (H, W)    object-center likelihood in [0, 1]
* ``size``         (2, H, W) box width/height in grid units
* ``center_offset``(2, H, W) sub-cell position of the center, in [0, 1)
* ``track_offset`` (2, H, W) center motion since the previous frame, grid units
* ``log_distance`` (H, W)    natural log of range in meters

Everything outside this module works in full-resolution pixels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    LOG_DISTANCE_BOUNDS,
    BoundingBox,
    CameraModel,
    Detection,
    DetectionSource,
    Vec2,
)

STRIDE = 8
MIN_FOOTPRINT_CELLS = 3.0
CROP_SIZE = 512
DEFAULT_TOP_K = 4
DEDUP_RADIUS_PX = 4.0

_MAGIC = b"HMAP"
_HEADER = struct.Struct("<4sII")


def grid_shape(width_px: int, height_px: int, stride: int = STRIDE) -> Tuple[int, int]:
    """Output grid ``(grid_w, grid_h)`` for an input image."""
    return math.ceil(width_px / stride), math.ceil(height_px / stride)


@dataclass
class HeadMaps:
    center_heat: np.ndarray
    size: np.ndarray
    center_offset: np.ndarray
    track_offset: np.ndarray
    log_distance: np.ndarray

    def __post_init__(self):
        h, w = np.shape(self.center_heat)
        for name, shape in (
            ("size", (2, h, w)),
            ("center_offset", (2, h, w)),
            ("track_offset", (2, h, w)),
            ("log_distance", (h, w)),
        ):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        heat = np.asarray(self.center_heat)
        if heat.size and (heat.min() < 0.0 or heat.max() > 1.0):
            raise ValueError("center_heat values must lie in [0, 1]")

    @classmethod
    def zeros(cls, grid_w: int, grid_h: int) -> "HeadMaps":
        if grid_w <= 0 or grid_h <= 0:
            raise ValueError("grid dimensions must be positive")
        return cls(
            center_heat=np.zeros((grid_h, grid_w)),
            size=np.zeros((2, grid_h, grid_w)),
            center_offset=np.zeros((2, grid_h, grid_w)),
            track_offset=np.zeros((2, grid_h, grid_w)),
            log_distance=np.zeros((grid_h, grid_w)),
        )

    @property
    def grid_w(self) -> int:
        return self.center_heat.shape[1]

    @property
    def grid_h(self) -> int:
        return self.center_heat.shape[0]

    def channels(self) -> np.ndarray:
        """All eight scalar channels stacked as (8, H, W)."""
        return np.concatenate(
            [
                self.center_heat[None],
                self.size,
                self.center_offset,
                self.track_offset,
                self.log_distance[None],
            ]
        )

    def to_bytes(self) -> bytes:
        """Header ``b"HMAP", grid_w, grid_h`` (uint32 LE) then eight float32 LE
        channels, each row-major: heat, size w/h, offset x/y, track x/y, log-distance.
        """
        header = _HEADER.pack(_MAGIC, self.grid_w, self.grid_h)
        return header + self.channels().astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "HeadMaps":
        magic, grid_w, grid_h = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ValueError("not a head-map blob")
        expected = _HEADER.size + 8 * grid_w * grid_h * 4
        if len(data) != expected:
            raise ValueError(f"expected {expected} bytes, got {len(data)}")
        ch = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
        ch = ch.reshape(8, grid_h, grid_w).astype(np.float64)
        return cls(
            center_heat=ch[0],
            size=ch[1:3],
            center_offset=ch[3:5],
            track_offset=ch[5:7],
            log_distance=ch[7],
        )


@dataclass(frozen=True)
class Annotation:
    """One ground-truth object for target rendering, in full-resolution pixels."""

    box: BoundingBox
    prev_center: Optional[Vec2] = None
    distance_m: Optional[float] = None


def _as_annotation(item) -> Annotation:
    if isinstance(item, Annotation):
        return item
    box, prev_center, distance_m = item
    return Annotation(box, prev_center, distance_m)


def gaussian_sigma(w_cells: float, h_cells: float) -> Tuple[float, int]:
    """Gaussian sigma and truncation radius (cells) for a box given in grid units.

    Boxes are first inflated to the 3x3-cell minimum footprint.
    """
    radius = max(w_cells, h_cells, MIN_FOOTPRINT_CELLS) / 2.0
    sigma = max(1.0, radius / 3.0)
    return sigma, max(1, math.ceil(radius))


def render_targets(
    annotations: Iterable,
    grid_w: int,
    grid_h: int,
    stride: int = STRIDE,
) -> HeadMaps:
    """Render training targets for all heads.

    Each object puts a peak of exactly 1.0 on the cell containing its center,
    with Gaussian falloff; overlapping objects combine by element-wise max.
    Regression channels are written only at object-center cells.
    """
    maps = HeadMaps.zeros(grid_w, grid_h)
    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    for ann in map(_as_annotation, annotations):
        gx, gy = ann.box.cx / stride, ann.box.cy / stride
        ix, iy = math.floor(gx), math.floor(gy)
        if not (0 <= ix < grid_w and 0 <= iy < grid_h):
            raise ValueError(
                f"object center ({ann.box.cx}, {ann.box.cy}) falls outside the "
                f"{grid_w}x{grid_h} grid"
            )
        sigma, support = gaussian_sigma(ann.box.w / stride, ann.box.h / stride)
        d2 = (xs - ix) ** 2 + (ys - iy) ** 2
        inside = (np.abs(xs - ix) <= support) & (np.abs(ys - iy) <= support)
        blob = np.where(inside, np.exp(-d2 / (2.0 * sigma**2)), 0.0)
        np.maximum(maps.center_heat, blob, out=maps.center_heat)

        maps.size[:, iy, ix] = (ann.box.w / stride, ann.box.h / stride)
        maps.center_offset[:, iy, ix] = (gx - ix, gy - iy)
        if ann.prev_center is not None:
            maps.track_offset[:, iy, ix] = (
                (ann.box.cx - ann.prev_center[0]) / stride,
                (ann.box.cy - ann.prev_center[1]) / stride,
            )
        if ann.distance_m is not None:
            if ann.distance_m <= 0:
                raise ValueError("distance_m must be positive")
            maps.log_distance[iy, ix] = math.log(ann.distance_m)
    return maps


def find_peaks(heat: np.ndarray, threshold: float) -> np.ndarray:
    """Cells strictly greater than all 8 neighbors and >= threshold.

    Returns an (n, 2) integer array of (row, col).
    """
    heat = np.asarray(heat, dtype=np.float64)
    padded = np.pad(heat, 1, mode="constant", constant_values=-np.inf)
    h, w = heat.shape
    is_peak = heat >= threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            is_peak &= heat > neighbor
    return np.argwhere(is_peak)


def decode(
    maps: HeadMaps,
    conf_threshold: float = 0.5,
    max_dets: int = 100,
    stride: int = STRIDE,
    frame_index: int = 0,
    source: DetectionSource = DetectionSource.PRIMARY_PASS,
) -> List[Detection]:
    """Turn head maps into full-resolution detections.

    Output is sorted by confidence (descending), then ``cy``, then ``cx``,
    and truncated to ``max_dets``.
    """
    if max_dets <= 0:
        raise ValueError("max_dets must be positive")
    dets = []
    lo, hi = LOG_DISTANCE_BOUNDS
    for row, col in find_peaks(maps.center_heat, conf_threshold):
        conf = float(np.clip(maps.center_heat[row, col], 0.0, 1.0))
        cx = stride * (col + float(maps.center_offset[0, row, col]))
        cy = stride * (row + float(maps.center_offset[1, row, col]))
        # boxes narrower than a pixel are not meaningful at full resolution
        w = max(1.0, stride * float(maps.size[0, row, col]))
        h = max(1.0, stride * float(maps.size[1, row, col]))
        log_d = float(maps.log_distance[row, col])
        dets.append(
            Detection(
                box=BoundingBox(cx, cy, w, h),
                confidence=conf,
                track_offset=(
                    stride * float(maps.track_offset[0, row, col]),
                    stride * float(maps.track_offset[1, row, col]),
                ),
                log_distance=log_d if lo < log_d < hi else None,
                frame_index=frame_index,
                source=source,
            )
        )
    dets.sort(key=lambda d: (-d.confidence, d.box.cy, d.box.cx))
    return dets[:max_dets]


@dataclass(frozen=True)
class CropWindow:
    x0: int
    y0: int
    parent_peak_confidence: float
    size: int = CROP_SIZE

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x0 + self.size and self.y0 <= y < self.y0 + self.size


def _clamp_origin(center: float, size: int, limit: int) -> int:
    return int(min(max(round(center - size / 2.0), 0), limit - size))


def select_crops(
    detections: Sequence[Detection],
    k: int = DEFAULT_TOP_K,
    camera: CameraModel = CameraModel(),
    size: int = CROP_SIZE,
) -> List[CropWindow]:
    """Fixed-size windows around the ``k`` most confident detections.

    Windows are shifted, not shrunk, to stay inside the image; they may overlap.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if camera.width_px < size or camera.height_px < size:
        raise ValueError(f"image {camera.width_px}x{camera.height_px} smaller than {size}px crop")
    ranked = sorted(detections, key=lambda d: (-d.confidence, d.box.cy, d.box.cx))[:k]
    return [
        CropWindow(
            x0=_clamp_origin(d.box.cx, size, camera.width_px),
            y0=_clamp_origin(d.box.cy, size, camera.height_px),
            parent_peak_confidence=d.confidence,
            size=size,
        )
        for d in ranked
    ]


def _dedup(dets: List[Detection], radius: float) -> List[Detection]:
    kept: List[Detection] = []
    for d in sorted(dets, key=lambda d: (-d.confidence, d.box.cy, d.box.cx)):
        if all(
            math.hypot(d.box.cx - k.box.cx, d.box.cy - k.box.cy) >= radius for k in kept
        ):
            kept.append(d)
    return kept


def merge_cascade(
    primary_dets: Sequence[Detection],
    secondary_dets_per_crop: Sequence[Sequence[Detection]],
    windows: Sequence[CropWindow],
    dedup_radius: float = DEDUP_RADIUS_PX,
) -> List[Detection]:
    """Combine full-frame detections with the cropped second pass.

    Crop-pass detections arrive in crop-local pixels and are shifted by the
    window origin. Any primary detection inside a window is superseded by that
    window's results. Detections closer than ``dedup_radius`` keep only the
    most confident one.
    """
    if len(secondary_dets_per_crop) != len(windows):
        raise ValueError(
            f"{len(secondary_dets_per_crop)} crop results for {len(windows)} windows"
        )
    if not windows:
        return list(primary_dets)
    merged = [
        d for d in primary_dets if not any(w.contains(d.box.cx, d.box.cy) for w in windows)
    ]
    for window, crop_dets in zip(windows, secondary_dets_per_crop):
        for d in crop_dets:
            merged.append(
                Detection(
                    box=d.box.translated(window.x0, window.y0),
                    confidence=d.confidence,
                    track_offset=d.track_offset,
                    log_distance=d.log_distance,
                    frame_index=d.frame_index,
                    source=DetectionSource.CROPPED_PASS,
                    is_false_positive=d.is_false_positive,
                )
            )
    return _dedup(merged, dedup_radius)
