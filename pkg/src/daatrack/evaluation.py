"""Detection/tracking metrics and ASTM F3442/F3442M interpretation.

Probability of track is taken to be tracker recall, per range bin. Reports
from separate streams merge by summing raw counts before any ratio is formed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

FT_2000_M = 2000 * 0.3048
EDR_WINDOW_S = 3.0
PTRACK_LEVEL = 0.95
MAX_RANGE_ERROR = 0.15
MAX_ANGULAR_RATE_ERROR_DPS = 0.9
MIN_BIN_SUPPORT = 50
DEFAULT_BIN_EDGES = tuple(float(r) for r in range(0, 2501, 100))
MIN_MATCH_RADIUS_PX = 20.0


@dataclass(frozen=True)
class GtObject:
    cx: float
    cy: float
    w: float
    h: float
    range_m: float
    angular_rate_dps: float
    object_id: int = 0

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    cx: float
    cy: float
    w: float = 1.0
    h: float = 1.0
    angular_rate_dps: float = 0.0
    range_m: Optional[float] = None
    status: str = "confirmed"
    tcpa_s: Optional[float] = None


@dataclass(frozen=True)
class EvalFrame:
    frame_index: int
    timestamp_s: float
    gts: Tuple[GtObject, ...]
    preds: Tuple[TrackOutput, ...]


@dataclass(frozen=True)
class FrameMatch:
    tp: int
    fp: int
    fn: int
    pairs: Tuple[Tuple[int, int], ...]  # (pred index, gt index)


def match_radius(gt: GtObject, min_radius: float = MIN_MATCH_RADIUS_PX) -> float:
    return max(min_radius, gt.diagonal)


def match_frame(
    preds: Sequence[TrackOutput],
    gts: Sequence[GtObject],
    radius_px: Optional[float] = None,
) -> FrameMatch:
    """Greedy nearest-center one-to-one matching.

    Pairs are taken in increasing center distance (ties by gt then prediction
    index) while both ends are free. A pair is admissible when its distance is
    at most ``radius_px``, which defaults per ground truth to
    ``max(20 px, box diagonal)``.
    """
    cand = []
    for gi, g in enumerate(gts):
        r = match_radius(g) if radius_px is None else radius_px
        for pi, p in enumerate(preds):
            d = math.hypot(p.cx - g.cx, p.cy - g.cy)
            if d <= r:
                cand.append((d, gi, pi))
    cand.sort()
    used_g, used_p, pairs = set(), set(), []
    for _, gi, pi in cand:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        pairs.append((pi, gi))
    tp = len(pairs)
    return FrameMatch(tp, len(preds) - tp, len(gts) - tp, tuple(sorted(pairs)))


def _bin_index(edges: Sequence[float], value: float) -> int:
    """Index into ``edges`` bins; ``len(edges) - 1`` is the overflow bin."""
    i = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(i, 0), len(edges) - 1)


@dataclass
class EncounterLog:
    """Per-frame ground-truth range and matched track id, for EDR."""

    times: List[float] = field(default_factory=list)
    ranges: List[Optional[float]] = field(default_factory=list)
    matched_ids: List[Optional[int]] = field(default_factory=list)


def _frame_period(times: Sequence[float]) -> float:
    if len(times) < 2:
        return 0.0
    return float(np.median(np.diff(times)))


def encounter_detected(log: EncounterLog, window_s: float = EDR_WINDOW_S,
                       threshold_m: float = FT_2000_M) -> Tuple[bool, bool]:
    """``(lenient, strict)`` detection verdicts for one encounter.

    An encounter is detected when one track id is matched to the intruder in
    every frame of a run lasting at least ``window_s`` (frames x frame period)
    that ends at or before the first frame with range below ``threshold_m``.
    If the range never drops below the threshold, the lenient reading lets
    the run end anywhere in the stream; the strict reading counts the
    encounter as not detected.
    """
    period = _frame_period(log.times)
    crossing = next(
        (k for k, r in enumerate(log.ranges) if r is not None and r < threshold_m), None
    )
    last = crossing if crossing is not None else len(log.times) - 1
    best = run = 0
    prev_id = None
    for k in range(last + 1):
        tid = log.matched_ids[k]
        if tid is not None and log.ranges[k] is not None:
            run = run + 1 if tid == prev_id else 1
            prev_id = tid
        else:
            run, prev_id = 0, None
        best = max(best, run)
    detected = best > 0 and best * period >= window_s - 1e-9
    return detected, detected and crossing is not None


def encounter_detection_rate(logs: Sequence[EncounterLog]) -> Tuple[float, float]:
    """EDR over encounters under the lenient and strict conventions."""
    if not logs:
        return 0.0, 0.0
    verdicts = [encounter_detected(log) for log in logs]
    n = len(verdicts)
    return sum(v[0] for v in verdicts) / n, sum(v[1] for v in verdicts) / n


@dataclass(frozen=True)
class PTrackBin:
    range_lo_m: float
    range_hi_m: Optional[float]  # None: open-ended
    recall: Optional[float]
    support: int
    flagged: bool


@dataclass(frozen=True)
class RangeErrorBin:
    range_lo_m: float
    range_hi_m: Optional[float]
    median_frac_error: Optional[float]
    support: int


@dataclass
class MetricsReport:
    precision: float
    recall: float
    edr: float
    fppi: float
    idspi: float
    are_dps: float
    tp: int
    fp: int
    fn: int
    frames: int
    id_switches: int
    encounters: int
    precision_defined: bool
    edr_strict: float
    edr_conventions_differ: bool
    ptrack_bins: List[PTrackBin]
    range_err_bins: List[RangeErrorBin]
    astm: List["AstmVerdict"] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "edr": self.edr,
            "fppi": self.fppi,
            "idspi": self.idspi,
            "are_dps": self.are_dps,
            "counts": {
                "tp": self.tp,
                "fp": self.fp,
                "fn": self.fn,
                "frames": self.frames,
                "id_switches": self.id_switches,
                "encounters": self.encounters,
            },
            "precision_defined": self.precision_defined,
            "edr_strict": self.edr_strict,
            "edr_conventions_differ": self.edr_conventions_differ,
            "ptrack_bins": [b.__dict__ for b in self.ptrack_bins],
            "range_err_bins": [b.__dict__ for b in self.range_err_bins],
            "astm": [v.to_dict() for v in self.astm],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class MetricsAccumulator:
    """Streams frames in, one encounter (stream) at a time."""

    def __init__(self, bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
                 radius_px: Optional[float] = None):
        edges = [float(e) for e in bin_edges]
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be strictly increasing with at least two entries")
        self.edges = edges
        self.radius_px = radius_px
        self.tp = self.fp = self.fn = self.frames = self.id_switches = 0
        self.are_errs: List[float] = []  # summed with fsum so merge order cannot matter
        n_bins = len(edges)  # last slot is the overflow bin
        self.bin_tp = [0] * n_bins
        self.bin_fn = [0] * n_bins
        self.bin_err: List[List[float]] = [[] for _ in range(n_bins)]
        self.logs: List[EncounterLog] = []

    def add_stream(self, frames: Iterable[EvalFrame]) -> "MetricsAccumulator":
        log = EncounterLog()
        last_id: Dict[int, int] = {}
        for fr in frames:
            self.frames += 1
            m = match_frame(fr.preds, fr.gts, self.radius_px)
            self.tp += m.tp
            self.fp += m.fp
            self.fn += m.fn
            matched = {gi: pi for pi, gi in m.pairs}
            for gi, g in enumerate(fr.gts):
                b = _bin_index(self.edges, g.range_m)
                pi = matched.get(gi)
                if pi is None:
                    self.bin_fn[b] += 1
                    continue
                p = fr.preds[pi]
                self.bin_tp[b] += 1
                self.are_errs.append(abs(p.angular_rate_dps - g.angular_rate_dps))
                if p.range_m is not None:
                    self.bin_err[b].append(abs(p.range_m - g.range_m) / g.range_m)
                prev = last_id.get(g.object_id)
                if prev is not None and prev != p.track_id:
                    self.id_switches += 1
                last_id[g.object_id] = p.track_id
            # EDR follows the primary (first) intruder of the encounter
            log.times.append(fr.timestamp_s)
            if fr.gts:
                g0 = fr.gts[0]
                pi = matched.get(0)
                log.ranges.append(g0.range_m)
                log.matched_ids.append(fr.preds[pi].track_id if pi is not None else None)
            else:
                log.ranges.append(None)
                log.matched_ids.append(None)
        self.logs.append(log)
        return self

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        if other.edges != self.edges:
            raise ValueError("cannot merge accumulators with different bins")
        for name in ("tp", "fp", "fn", "frames", "id_switches"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for k in range(len(self.edges)):
            self.bin_tp[k] += other.bin_tp[k]
            self.bin_fn[k] += other.bin_fn[k]
            self.bin_err[k].extend(other.bin_err[k])
        self.are_errs.extend(other.are_errs)
        self.logs.extend(other.logs)
        return self

    def _bounds(self, k: int) -> Tuple[float, Optional[float]]:
        hi = self.edges[k + 1] if k + 1 < len(self.edges) else None
        return self.edges[k], hi

    def _slots(self) -> List[int]:
        # the overflow slot only appears when it holds data
        last = len(self.edges) - 1
        slots = list(range(last))
        if self.bin_tp[last] + self.bin_fn[last] > 0:
            slots.append(last)
        return slots

    def ptrack_bins(self) -> List[PTrackBin]:
        out = []
        for k in self._slots():
            lo, hi = self._bounds(k)
            support = self.bin_tp[k] + self.bin_fn[k]
            out.append(
                PTrackBin(lo, hi, self.bin_tp[k] / support if support else None, support,
                          support < MIN_BIN_SUPPORT)
            )
        return out

    def range_err_bins(self) -> List[RangeErrorBin]:
        out = []
        for k in self._slots():
            lo, hi = self._bounds(k)
            errs = self.bin_err[k]
            out.append(RangeErrorBin(lo, hi, float(np.median(errs)) if errs else None, len(errs)))
        return out

    def report(self) -> MetricsReport:
        predicted = self.tp + self.fp
        positives = self.tp + self.fn
        edr, edr_strict = encounter_detection_rate(self.logs)
        return MetricsReport(
            precision=self.tp / predicted if predicted else 1.0,
            recall=self.tp / positives if positives else 0.0,
            edr=edr,
            fppi=self.fp / self.frames if self.frames else 0.0,
            idspi=self.id_switches / self.frames if self.frames else 0.0,
            are_dps=math.fsum(self.are_errs) / len(self.are_errs) if self.are_errs else 0.0,
            tp=self.tp,
            fp=self.fp,
            fn=self.fn,
            frames=self.frames,
            id_switches=self.id_switches,
            encounters=len(self.logs),
            precision_defined=predicted > 0,
            edr_strict=edr_strict,
            edr_conventions_differ=edr != edr_strict,
            ptrack_bins=self.ptrack_bins(),
            range_err_bins=self.range_err_bins(),
        )


def compute_metrics(
    streams: Sequence[Sequence[EvalFrame]],
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
    radius_px: Optional[float] = None,
) -> MetricsReport:
    """Aggregate metrics over one or more encounter streams."""
    acc = MetricsAccumulator(bin_edges, radius_px)
    for s in streams:
        acc.add_stream(s)
    return acc.report()


def ptrack_by_range(streams, bin_edges: Sequence[float] = DEFAULT_BIN_EDGES) -> List[PTrackBin]:
    acc = MetricsAccumulator(bin_edges)
    for s in streams:
        acc.add_stream(s)
    return acc.ptrack_bins()


def range_error_stats(streams, bin_edges: Sequence[float] = DEFAULT_BIN_EDGES) -> List[RangeErrorBin]:
    acc = MetricsAccumulator(bin_edges)
    for s in streams:
        acc.add_stream(s)
    return acc.range_err_bins()


# --- ASTM F3442/F3442M -----------------------------------------------------

@dataclass(frozen=True)
class OwnshipSpec:
    cruise_kts: float
    turn_rate_dps: float
    vertical_fpm: Tuple[float, float] = (250.0, 500.0)

    def __post_init__(self):
        if not (self.cruise_kts > 0 and self.turn_rate_dps > 0):
            raise ValueError("ownship specs must be positive")
        lo, hi = self.vertical_fpm
        if not 0 < lo <= hi:
            raise ValueError("vertical speed range must be positive and ordered")

    def label(self) -> str:
        lo, hi = self.vertical_fpm
        return f"{self.cruise_kts:g} kts, {self.turn_rate_dps:g} deg/s, {lo:g}-{hi:g} ft/min"


# Minimum detection range with P(track) >= 95% at 0.9 deg/s angular-rate error.
SPEC_TABLE: Tuple[Tuple[OwnshipSpec, float], ...] = (
    (OwnshipSpec(30, 63.05), 1222.0),
    (OwnshipSpec(60, 10.51), 963.0),
    (OwnshipSpec(60, 31.53), 703.0),
    (OwnshipSpec(90, 7.01), 1018.0),
    (OwnshipSpec(90, 21.02), 666.0),
)
OWNSHIP_SPECS = tuple(spec for spec, _ in SPEC_TABLE)


def min_required_range(spec: OwnshipSpec) -> float:
    """Table lookup; specs outside the table are rejected, never interpolated."""
    for known, rng in SPEC_TABLE:
        if (
            math.isclose(known.cruise_kts, spec.cruise_kts, abs_tol=1e-9)
            and math.isclose(known.turn_rate_dps, spec.turn_rate_dps, abs_tol=1e-9)
            and known.vertical_fpm == tuple(spec.vertical_fpm)
        ):
            return rng
    raise KeyError(f"no F3442 table entry for ownship spec {spec.label()}")


def r95(bins: Sequence[PTrackBin], level: float = PTRACK_LEVEL) -> float:
    """Range up to which P(track) stays at or above ``level``.

    The curve runs through the centers of supported, bounded bins. The result
    is the linear-interpolated crossing before the first bin under ``level``,
    or the upper edge of the last supported bin when none falls under it.
    """
    pts = [
        (0.5 * (b.range_lo_m + b.range_hi_m), b.recall, b.range_hi_m)
        for b in bins
        if not b.flagged and b.recall is not None and b.range_hi_m is not None
    ]
    if not pts:
        return 0.0
    prev = None
    for center, recall, _ in pts:
        if recall < level:
            if prev is None:
                return 0.0
            c0, r0 = prev
            return c0 + (r0 - level) / (r0 - recall) * (center - c0)
        prev = (center, recall)
    return pts[-1][2]


@dataclass(frozen=True)
class AstmVerdict:
    spec: OwnshipSpec
    min_required_range_m: float
    r95_m: float
    range_ok: bool
    range_error_ok: bool
    angular_rate_ok: bool

    @property
    def passed(self) -> bool:
        return self.range_ok and self.range_error_ok and self.angular_rate_ok

    def to_dict(self) -> Dict[str, object]:
        return {
            "spec": self.spec.label(),
            "cruise_kts": self.spec.cruise_kts,
            "turn_rate_dps": self.spec.turn_rate_dps,
            "min_required_range_m": self.min_required_range_m,
            "r95_m": self.r95_m,
            "range_ok": self.range_ok,
            "range_error_ok": self.range_error_ok,
            "angular_rate_ok": self.angular_rate_ok,
            "passed": self.passed,
        }


def astm_check(
    report: MetricsReport, specs: Sequence[OwnshipSpec] = OWNSHIP_SPECS
) -> List[AstmVerdict]:
    """Judge each ownship class against tracking range, range error and ARE.

    A class passes when P(track) >= 95% out to its required range, the median
    fractional range error is within 15% in every populated bin inside that
    range, and the mean angular-rate error is within 0.9 deg/s.
    """
    reach = r95(report.ptrack_bins)
    verdicts = []
    for spec in specs:
        need = min_required_range(spec)
        errs = [
            b.median_frac_error
            for b in report.range_err_bins
            if b.median_frac_error is not None and b.range_lo_m < need
            and b.support >= MIN_BIN_SUPPORT
        ]
        verdicts.append(
            AstmVerdict(
                spec=spec,
                min_required_range_m=need,
                r95_m=reach,
                range_ok=reach >= need,
                range_error_ok=all(e <= MAX_RANGE_ERROR for e in errs),
                angular_rate_ok=report.are_dps <= MAX_ANGULAR_RATE_ERROR_DPS,
            )
        )
    return verdicts


def curves_csv(report: MetricsReport) -> str:
    """Plot-ready CSV with both per-range curves."""
    lines = ["curve,range_lo_m,range_hi_m,value,support,flagged"]

    def fmt(v):
        return "" if v is None else repr(float(v))

    for b in report.ptrack_bins:
        lines.append(f"ptrack,{fmt(b.range_lo_m)},{fmt(b.range_hi_m)},{fmt(b.recall)},{b.support},{int(b.flagged)}")
    for b in report.range_err_bins:
        flagged = int(b.support < MIN_BIN_SUPPORT)
        lines.append(
            f"range_error,{fmt(b.range_lo_m)},{fmt(b.range_hi_m)},{fmt(b.median_frac_error)},{b.support},{flagged}"
        )
    return "\n".join(lines) + "\n"
