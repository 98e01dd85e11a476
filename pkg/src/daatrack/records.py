"""JSONL line formats shared by the command-line tools.

FrameRecord::

    {"frame_index", "timestamp_s",
     "gt": null | {"cx", "cy", "w", "h", "range_m", "angular_rate_dps"},
     "observed": [{"cx", "cy", "w", "h", "conf", "track_off_x", "track_off_y",
                   "log_dist", "is_fp"}, ...]}

TrackRecord::

    {"frame_index", "track_id", "status", "cx", "cy", "w", "h",
     "angular_rate_dps", "tcpa_s", "range_m"}

``tcpa_s`` is null when the intruder is not closing or not yet known;
``range_m`` and ``log_dist`` are null when unavailable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .core import BoundingBox, CameraModel, Detection, DetectionSource, FrameMeta
from .evaluation import EvalFrame, GtObject, TrackOutput
from .sim import GroundTruth, LabeledFrame

GT_KEYS = ("cx", "cy", "w", "h", "range_m", "angular_rate_dps")
OBS_KEYS = ("cx", "cy", "w", "h", "conf", "track_off_x", "track_off_y", "log_dist", "is_fp")
TRACK_KEYS = (
    "frame_index", "track_id", "status", "cx", "cy", "w", "h",
    "angular_rate_dps", "tcpa_s", "range_m",
)


class RecordError(ValueError):
    """A JSONL line could not be parsed; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def frame_record(frame: LabeledFrame) -> Dict[str, object]:
    gt = None
    if frame.gt is not None:
        g = frame.gt
        gt = {
            "cx": g.box.cx, "cy": g.box.cy, "w": g.box.w, "h": g.box.h,
            "range_m": g.range_m, "angular_rate_dps": g.angular_rate_dps,
        }
    observed = [
        {
            "cx": d.box.cx, "cy": d.box.cy, "w": d.box.w, "h": d.box.h,
            "conf": d.confidence,
            "track_off_x": d.track_offset[0], "track_off_y": d.track_offset[1],
            "log_dist": d.log_distance, "is_fp": d.is_false_positive,
        }
        for d in frame.observed
    ]
    return {
        "frame_index": frame.meta.frame_index,
        "timestamp_s": frame.meta.timestamp_s,
        "gt": gt,
        "observed": observed,
    }


def write_frames(fh: IO[str], frames: Iterable[LabeledFrame]) -> int:
    n = 0
    for fr in frames:
        fh.write(dumps(frame_record(fr)) + "\n")
        n += 1
    return n


def _number(obj, key, lineno, nullable=False):
    if key not in obj:
        raise RecordError(lineno, f"missing field {key!r}")
    v = obj[key]
    if v is None and nullable:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise RecordError(lineno, f"field {key!r} must be a finite number, got {v!r}")
    return float(v)


def _loads(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise RecordError(lineno, "expected a JSON object")
    return obj


def parse_frame(line: str, lineno: int, camera: CameraModel = CameraModel()) -> LabeledFrame:
    obj = _loads(line, lineno)
    idx = _number(obj, "frame_index", lineno)
    if idx < 0 or idx != int(idx):
        raise RecordError(lineno, "frame_index must be a non-negative integer")
    idx = int(idx)
    t = _number(obj, "timestamp_s", lineno)
    try:
        gt = None
        if obj.get("gt") is not None:
            g = obj["gt"]
            if not isinstance(g, dict):
                raise RecordError(lineno, "gt must be an object or null")
            vals = {k: _number(g, k, lineno) for k in GT_KEYS}
            gt = GroundTruth(
                BoundingBox(vals["cx"], vals["cy"], vals["w"], vals["h"]),
                vals["range_m"],
                vals["angular_rate_dps"],
            )
        observed = obj.get("observed")
        if not isinstance(observed, list):
            raise RecordError(lineno, "observed must be an array")
        dets = []
        for o in observed:
            if not isinstance(o, dict):
                raise RecordError(lineno, "observed entries must be objects")
            dets.append(
                Detection(
                    box=BoundingBox(*(_number(o, k, lineno) for k in ("cx", "cy", "w", "h"))),
                    confidence=_number(o, "conf", lineno),
                    track_offset=(_number(o, "track_off_x", lineno), _number(o, "track_off_y", lineno)),
                    log_distance=_number(o, "log_dist", lineno, nullable=True),
                    frame_index=idx,
                    source=DetectionSource.SIMULATOR,
                    is_false_positive=bool(o.get("is_fp", False)),
                )
            )
    except RecordError:
        raise
    except ValueError as exc:
        raise RecordError(lineno, str(exc)) from None
    return LabeledFrame(FrameMeta(idx, t, camera), gt, tuple(dets))


def read_frames(lines: Iterable[str], camera: CameraModel = CameraModel()) -> Iterator[LabeledFrame]:
    """Parse FrameRecords lazily, enforcing increasing frame indices."""
    prev = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fr = parse_frame(line, lineno, camera)
        if prev is not None and fr.meta.frame_index <= prev:
            raise RecordError(lineno, "frame_index must strictly increase")
        prev = fr.meta.frame_index
        yield fr


@dataclass(frozen=True)
class TrackRecord:
    frame_index: int
    track_id: int
    status: str
    cx: float
    cy: float
    w: float
    h: float
    angular_rate_dps: float
    tcpa_s: Optional[float]
    range_m: Optional[float]

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in TRACK_KEYS}
        if d["tcpa_s"] is not None and math.isinf(d["tcpa_s"]):
            d["tcpa_s"] = None
        return dumps(d)

    def as_output(self) -> TrackOutput:
        return TrackOutput(
            track_id=self.track_id, cx=self.cx, cy=self.cy, w=self.w, h=self.h,
            angular_rate_dps=self.angular_rate_dps, range_m=self.range_m,
            status=self.status, tcpa_s=self.tcpa_s,
        )


def parse_track(line: str, lineno: int) -> TrackRecord:
    obj = _loads(line, lineno)
    status = obj.get("status")
    if status not in ("tentative", "confirmed", "dead"):
        raise RecordError(lineno, f"bad status {status!r}")
    tid = _number(obj, "track_id", lineno)
    idx = _number(obj, "frame_index", lineno)
    return TrackRecord(
        frame_index=int(idx),
        track_id=int(tid),
        status=status,
        cx=_number(obj, "cx", lineno),
        cy=_number(obj, "cy", lineno),
        w=_number(obj, "w", lineno),
        h=_number(obj, "h", lineno),
        angular_rate_dps=_number(obj, "angular_rate_dps", lineno),
        tcpa_s=_number(obj, "tcpa_s", lineno, nullable=True),
        range_m=_number(obj, "range_m", lineno, nullable=True),
    )


def read_tracks(lines: Iterable[str]) -> Iterator[TrackRecord]:
    prev = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        rec = parse_track(line, lineno)
        if prev is not None and rec.frame_index < prev:
            raise RecordError(lineno, "frame_index must not decrease")
        prev = rec.frame_index
        yield rec


def eval_frames(
    frames: Sequence[LabeledFrame], tracks: Iterable[TrackRecord]
) -> List[EvalFrame]:
    """Join ground truth with tracker output by frame index."""
    by_frame: Dict[int, List[TrackOutput]] = {}
    for rec in tracks:
        by_frame.setdefault(rec.frame_index, []).append(rec.as_output())
    out = []
    for fr in frames:
        gts: Tuple[GtObject, ...] = ()
        if fr.gt is not None:
            g = fr.gt
            gts = (GtObject(g.box.cx, g.box.cy, g.box.w, g.box.h, g.range_m, g.angular_rate_dps),)
        out.append(
            EvalFrame(fr.meta.frame_index, fr.meta.timestamp_s, gts,
                      tuple(by_frame.get(fr.meta.frame_index, ())))
        )
    return out
