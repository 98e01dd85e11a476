"""Offset-vector tracking.

Each detection carries a predicted track offset (its center motion since the
previous frame). Subtracting it recovers where the object was one frame ago,
and that point is matched against the previous-frame centers of live tracks.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator

from .alignment import AffineTransform
from .core import BoundingBox, Detection, FrameMeta, Vec2, deg_per_pixel
from .kalman import (
    IntruderEstimate,
    KalmanState,
    NoiseConfig,
    angular_rate,
    estimate_range,
    kf_init,
    kf_predict,
    kf_step,
    kf_transform,
    tcpa,
)

FP_MINING_CONF = 0.2


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass(frozen=True)
class TrackerConfig:
    kappa: float = 30.0
    max_misses: int = 3
    confirm_after: int = 2

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.max_misses < 1 or self.confirm_after < 1:
            raise ValueError("max_misses and confirm_after must be positive")


@dataclass(frozen=True)
class Snapshot:
    timestamp_s: float
    area: float
    center: Vec2
    range_m: Optional[float]


@dataclass
class Track:
    id: int
    status: TrackStatus
    last_center: Vec2
    box: BoundingBox
    kf: KalmanState
    misses: int = 0
    hits: int = 1
    age_frames: int = 1
    range_m: Optional[float] = None
    updated: bool = True
    history: Deque[Snapshot] = field(default_factory=lambda: deque(maxlen=100))

    def record(self, t_s: float) -> None:
        if self.history and t_s <= self.history[-1].timestamp_s:
            raise ValueError("track history timestamps must increase")
        self.history.append(Snapshot(t_s, self.box.area(), self.last_center, self.range_m))

    def tcpa(self, window_s: float = 1.0) -> Optional[float]:
        return tcpa(
            [s.timestamp_s for s in self.history],
            [s.area for s in self.history],
            window_s=window_s,
        )

    def estimate(self, theta_dpp: float, tcpa_window_s: float = 1.0) -> IntruderEstimate:
        return IntruderEstimate(
            angular_rate_dps=angular_rate(self.kf, theta_dpp),
            tcpa_s=self.tcpa(tcpa_window_s),
            range_m=self.range_m,
        )


@dataclass(frozen=True)
class TrackView:
    """Read-only per-frame output for one live track."""

    id: int
    status: TrackStatus
    box: BoundingBox
    updated: bool
    misses: int
    age_frames: int
    estimate: IntruderEstimate


class Association(NamedTuple):
    matches: List[Tuple[int, int]]
    unmatched_dets: List[int]
    unmatched_tracks: List[int]


def associate(
    tracks: Sequence[Tuple[int, Vec2]],
    detections: Sequence[Detection],
    kappa: float,
) -> Association:
    """Greedy one-to-one matching of detections to tracks.

    Detections are visited in descending confidence; each takes the nearest
    free track whose previous center lies strictly within ``kappa`` of the
    detection's offset-adjusted center. Equal distances go to the lower id.
    """
    free = dict(tracks)
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].confidence, detections[i].box.cy, detections[i].box.cx, i),
    )
    matches = []
    unmatched_dets = []
    for i in order:
        ax, ay = detections[i].offset_adjusted_center()
        best = None
        for tid, (px, py) in free.items():
            dist = math.hypot(ax - px, ay - py)
            if dist < kappa and (best is None or (dist, tid) < best):
                best = (dist, tid)
        if best is None:
            unmatched_dets.append(i)
        else:
            matches.append((best[1], i))
            del free[best[1]]
    return Association(matches, sorted(unmatched_dets), sorted(free))


@dataclass(frozen=True)
class CropDescriptor:
    detection: Detection
    crop: Optional[np.ndarray] = None


Verdict = Callable[[CropDescriptor], Union[bool, Tuple[bool, float]]]


def extract_crop(image: np.ndarray, box: BoundingBox, size: int = 64) -> np.ndarray:
    """Square zero-padded crop of side ``size`` centered on ``box``."""
    h, w = image.shape[:2]
    out = np.zeros((size, size) + image.shape[2:], dtype=image.dtype)
    x0 = int(round(box.cx - size / 2.0))
    y0 = int(round(box.cy - size / 2.0))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return out


def apply_secondary_filter(
    detections: Sequence[Detection],
    verdict: Optional[Verdict],
    image: Optional[np.ndarray] = None,
    crop_size: int = 64,
) -> List[Detection]:
    """Drop detections the secondary classifier rejects.

    ``verdict`` receives a :class:`CropDescriptor` and returns ``accept`` or
    ``(accept, score)``. Without a verdict the detections pass through.
    """
    if verdict is None:
        return list(detections)
    kept = []
    for det in detections:
        crop = extract_crop(image, det.box, crop_size) if image is not None else None
        result = verdict(CropDescriptor(det, crop))
        accept = result[0] if isinstance(result, tuple) else result
        if accept:
            kept.append(det)
    return kept


@dataclass(frozen=True)
class FalsePositiveRecord:
    frame_index: int
    cx: float
    cy: float
    w: float
    h: float
    confidence: float


def mine_false_positives(
    detections: Sequence[Detection],
    gt_boxes: Sequence[BoundingBox],
    conf_min: float = FP_MINING_CONF,
    match_radius: float = 20.0,
    frame_index: Optional[int] = None,
) -> List[FalsePositiveRecord]:
    """Confident detections with no ground-truth center within ``match_radius``."""
    records = []
    for det in detections:
        if det.confidence <= conf_min:
            continue
        if any(math.hypot(det.box.cx - g.cx, det.box.cy - g.cy) < match_radius for g in gt_boxes):
            continue
        records.append(
            FalsePositiveRecord(
                frame_index=det.frame_index if frame_index is None else frame_index,
                cx=det.box.cx,
                cy=det.box.cy,
                w=det.box.w,
                h=det.box.h,
                confidence=det.confidence,
            )
        )
    return records


class MiningStore:
    """Append-only JSONL file of mined false positives."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def append(self, records: Sequence[FalsePositiveRecord]) -> int:
        with self.path.open("a", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r.__dict__) + "\n")
        return len(records)

    def read(self) -> List[FalsePositiveRecord]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as fh:
            return [FalsePositiveRecord(**json.loads(line)) for line in fh if line.strip()]


class OffsetTracker(BaseEstimator):
    """Stateful multi-object tracker for one camera stream.

    Parameters
    ----------
    kappa : float
        Association gate in full-resolution pixels.
    max_misses : int
        A track dies once it has missed more than this many consecutive frames.
    confirm_after : int
        Consecutive matched frames (the spawning one included) before a track
        is confirmed.
    accel_psd, meas_sigma : float
        Kalman filter tuning, see :class:`~daatrack.kalman.NoiseConfig`.
    range_alpha : float
        Log-space EMA weight for fusing per-frame distance predictions.
    tcpa_window_s : float
        Time span of the box-area pair used for time to closest approach.
    secondary_filter : callable, optional
        Verdict function applied to detections before association.
    """

    def __init__(
        self,
        kappa: float = 30.0,
        max_misses: int = 3,
        confirm_after: int = 2,
        accel_psd: float = 10.0,
        meas_sigma: float = 2.0,
        range_alpha: float = 0.3,
        tcpa_window_s: float = 1.0,
        secondary_filter: Optional[Verdict] = None,
    ):
        self.kappa = kappa
        self.max_misses = max_misses
        self.confirm_after = confirm_after
        self.accel_psd = accel_psd
        self.meas_sigma = meas_sigma
        self.range_alpha = range_alpha
        self.tcpa_window_s = tcpa_window_s
        self.secondary_filter = secondary_filter

    def reset(self) -> "OffsetTracker":
        self.config_ = TrackerConfig(self.kappa, self.max_misses, self.confirm_after)
        self.noise_ = NoiseConfig(self.accel_psd, self.meas_sigma)
        self.tracks_: List[Track] = []
        self.next_id_ = 1
        self.last_frame_: Optional[FrameMeta] = None
        self.n_dead_ = 0
        return self

    def _prev_center(self, track: Track, prev_t: float) -> Vec2:
        if track.misses == 0:
            return track.last_center
        dt = prev_t - track.kf.last_update_s
        pos = kf_predict(track.kf, max(dt, 0.0), self.noise_).position
        return (float(pos[0]), float(pos[1]))

    def step(
        self,
        detections: Sequence[Detection],
        frame_meta: FrameMeta,
        ego: Optional[AffineTransform] = None,
        alignment_failed: bool = False,
        image: Optional[np.ndarray] = None,
    ) -> List[TrackView]:
        """Advance the tracker by one frame and return all live tracks.

        ``ego`` maps previous-frame pixels into the current frame. When the
        alignment for this frame failed, pass ``alignment_failed=True`` and the
        gate is doubled for this frame only.
        """
        if not hasattr(self, "tracks_"):
            self.reset()
        last = self.last_frame_
        if last is not None and (
            frame_meta.frame_index <= last.frame_index
            or frame_meta.timestamp_s <= last.timestamp_s
        ):
            raise ValueError(
                f"frame {frame_meta.frame_index} at {frame_meta.timestamp_s}s arrives "
                f"after frame {last.frame_index} at {last.timestamp_s}s"
            )
        t = frame_meta.timestamp_s
        dets = apply_secondary_filter(detections, self.secondary_filter, image)

        if ego is not None:
            for tr in self.tracks_:
                tr.last_center = ego(tr.last_center)
                tr.kf = kf_transform(tr.kf, ego.linear, (ego.tx, ego.ty))

        prev_t = last.timestamp_s if last is not None else t
        kappa = self.config_.kappa * (2.0 if alignment_failed else 1.0)
        result = associate(
            [(tr.id, self._prev_center(tr, prev_t)) for tr in self.tracks_], dets, kappa
        )

        by_id = {tr.id: tr for tr in self.tracks_}
        for tid, di in result.matches:
            self._update(by_id[tid], dets[di], t)
        for tid in result.unmatched_tracks:
            tr = by_id[tid]
            tr.misses += 1
            tr.hits = 0
            tr.age_frames += 1
            tr.updated = False
            if tr.misses > self.config_.max_misses:
                tr.status = TrackStatus.DEAD
        for di in result.unmatched_dets:
            self._spawn(dets[di], t)

        self.n_dead_ += sum(tr.status is TrackStatus.DEAD for tr in self.tracks_)
        self.tracks_ = [tr for tr in self.tracks_ if tr.status is not TrackStatus.DEAD]
        self.last_frame_ = frame_meta
        theta = deg_per_pixel(frame_meta.camera)
        return [self._view(tr, theta) for tr in sorted(self.tracks_, key=lambda tr: tr.id)]

    def _update(self, tr: Track, det: Detection, t: float) -> None:
        tr.last_center = det.center
        tr.box = det.box
        tr.kf = kf_step(tr.kf, det.center, t, self.noise_)
        tr.misses = 0
        tr.hits += 1
        tr.age_frames += 1
        tr.updated = True
        if det.log_distance is not None:
            tr.range_m = estimate_range(tr.range_m, det.log_distance, self.range_alpha)
        if tr.status is TrackStatus.TENTATIVE and tr.hits >= self.config_.confirm_after:
            tr.status = TrackStatus.CONFIRMED
        tr.record(t)

    def _spawn(self, det: Detection, t: float) -> Track:
        status = (
            TrackStatus.CONFIRMED if self.config_.confirm_after <= 1 else TrackStatus.TENTATIVE
        )
        tr = Track(
            id=self.next_id_,
            status=status,
            last_center=det.center,
            box=det.box,
            kf=kf_init(det.center, t, self.noise_),
        )
        if det.log_distance is not None:
            tr.range_m = estimate_range(None, det.log_distance, self.range_alpha)
        tr.record(t)
        self.next_id_ += 1
        self.tracks_.append(tr)
        return tr

    def _view(self, tr: Track, theta: float) -> TrackView:
        return TrackView(
            id=tr.id,
            status=tr.status,
            box=tr.box,
            updated=tr.updated,
            misses=tr.misses,
            age_frames=tr.age_frames,
            estimate=tr.estimate(theta, self.tcpa_window_s),
        )
