"""Run the tracker over labeled frame streams and score the output."""

from __future__ import annotations

from typing import Iterable, Iterator, List, Optional, Sequence

from .evaluation import (
    DEFAULT_BIN_EDGES,
    MetricsAccumulator,
    MetricsReport,
)
from .records import TrackRecord, eval_frames
from .sim import CALIBRATED, EncounterScenario, LabeledFrame, NoiseModel, run_encounter
from .tracker import OffsetTracker, TrackView


def track_records(frame_index: int, views: Sequence[TrackView]) -> List[TrackRecord]:
    """Records for tracks refreshed by a detection in this frame."""
    out = []
    for v in views:
        if not v.updated:
            continue
        est = v.estimate
        out.append(
            TrackRecord(
                frame_index=frame_index,
                track_id=v.id,
                status=v.status.value,
                cx=v.box.cx,
                cy=v.box.cy,
                w=v.box.w,
                h=v.box.h,
                angular_rate_dps=est.angular_rate_dps,
                tcpa_s=est.tcpa_s,
                range_m=est.range_m,
            )
        )
    return out


def run_tracker(
    frames: Iterable[LabeledFrame], tracker: Optional[OffsetTracker] = None
) -> Iterator[TrackRecord]:
    """Stream TrackRecords for a stream of frames (one encounter)."""
    tracker = OffsetTracker() if tracker is None else tracker
    tracker.reset()
    for fr in frames:
        views = tracker.step(fr.observed, fr.meta)
        yield from track_records(fr.meta.frame_index, views)


def evaluate_encounters(
    scenarios: Iterable[EncounterScenario],
    noise: NoiseModel = CALIBRATED,
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
    tracker_params: Optional[dict] = None,
) -> MetricsReport:
    """Simulate, track and score a batch of encounters."""
    acc = MetricsAccumulator(bin_edges)
    for sc in scenarios:
        frames = run_encounter(sc, noise)
        tracks = list(run_tracker(frames, OffsetTracker(**(tracker_params or {}))))
        acc.add_stream(eval_frames(frames, tracks))
    return acc.report()
