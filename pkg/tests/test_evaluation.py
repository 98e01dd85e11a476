import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import norm

from daatrack.evaluation import (
    FT_2000_M,
    OWNSHIP_SPECS,
    EncounterLog,
    EvalFrame,
    GtObject,
    MetricsAccumulator,
    OwnshipSpec,
    PTrackBin,
    TrackOutput,
    astm_check,
    compute_metrics,
    curves_csv,
    encounter_detected,
    encounter_detection_rate,
    match_frame,
    min_required_range,
    ptrack_by_range,
    r95,
    range_error_stats,
)
from daatrack.pipeline import run_tracker
from daatrack.records import eval_frames
from daatrack.sim import NOISELESS, head_on_template, run_encounter

from oracles import brute_force_match, random_eval_stream


def gt(cx, cy, rng_m=1000.0, rate=0.1, side=10.0, oid=0):
    return GtObject(cx, cy, side, side, rng_m, rate, oid)


def pred(cx, cy, tid=1, rate=0.1, rng_m=None):
    return TrackOutput(tid, cx, cy, 10.0, 10.0, rate, rng_m)


def test_match_exact():
    gts = [gt(10, 10), gt(300, 300)]
    m = match_frame([pred(10, 10), pred(300, 300, 2)], gts)
    assert (m.tp, m.fp, m.fn) == (2, 0, 0)


def test_match_three_preds_two_gts():
    gts = [gt(100, 100), gt(900, 900)]
    preds = [pred(105, 100), pred(400, 400), pred(600, 100)]
    m = match_frame(preds, gts)
    assert (m.tp, m.fp, m.fn) == (1, 2, 1)
    assert m.pairs == ((0, 0),)
    assert set(m.pairs) == brute_force_match(preds, gts, lambda g: max(20.0, g.diagonal))


def test_match_empty_and_radius():
    assert (lambda m: (m.tp, m.fp, m.fn))(match_frame([], [gt(1, 1), gt(50, 50)])) == (0, 0, 2)
    # radius is max(20, diagonal); 60 px box -> 84.85 px radius
    big = GtObject(0, 0, 60, 60, 500, 0.0)
    assert match_frame([pred(84, 0)], [big]).tp == 1
    assert match_frame([pred(19.9, 0)], [gt(0, 0, side=2)]).tp == 1
    assert match_frame([pred(20.1, 0)], [gt(0, 0, side=2)]).tp == 0


def test_single_forced_id_switch():
    frames = [EvalFrame(k, 0.1 * k, (gt(100, 100),), (pred(100, 100, tid=1 if k < 5 else 2),))
              for k in range(10)]
    rep = compute_metrics([frames])
    assert rep.id_switches == 1
    assert rep.idspi == pytest.approx(1 / 10)


def test_empty_tracker_conventions():
    frames = [EvalFrame(k, 0.1 * k, (gt(100, 100),), ()) for k in range(10)]
    rep = compute_metrics([frames])
    assert rep.recall == 0.0
    assert rep.precision == 1.0 and not rep.precision_defined
    assert rep.tp + rep.fp == 0


def test_perfect_tracker_on_noiseless_stream():
    frames = run_encounter(head_on_template(3000.0, 60.0, 40.0, duration_s=45.0, seed=1), NOISELESS)
    rep = compute_metrics([eval_frames(frames, run_tracker(frames))])
    assert rep.precision == 1.0 and rep.recall == 1.0
    assert rep.fppi == 0.0 and rep.idspi == 0.0
    assert rep.are_dps < 0.05
    assert rep.edr == 1.0


def _log(n, period=0.1, ranges=None, ids=None):
    times = [k * period for k in range(n)]
    return EncounterLog(times, list(ranges), list(ids))


def test_edr_thirty_frames_before_crossing():
    ranges = [1000 - 10 * k for k in range(60)]  # crosses 609.6 m at k=40
    ids = [None] * 10 + [4] * 30 + [None] * 20
    assert encounter_detected(_log(60, ranges=ranges, ids=ids)) == (True, True)


def test_edr_window_must_end_by_crossing():
    ranges = [1000 - 10 * k for k in range(60)]
    ids = [None] * 20 + [4] * 40  # run spans the crossing; only 20 frames before it count
    lenient, strict = encounter_detected(_log(60, ranges=ranges, ids=ids))
    assert not lenient and not strict


def test_edr_short_window_not_detected():
    ranges = [1000 - 5 * k for k in range(60)]
    ids = [None] * 5 + [4] * 29 + [None] * 26
    assert encounter_detected(_log(60, ranges=ranges, ids=ids)) == (False, False)


def test_edr_broken_by_id_change():
    ranges = [1000 - 5 * k for k in range(60)]
    ids = [4] * 20 + [5] * 20 + [None] * 20
    assert encounter_detected(_log(60, ranges=ranges, ids=ids)) == (False, False)


def test_edr_never_close_conventions():
    ranges = [2000.0] * 40
    ids = [3] * 40
    lenient, strict = encounter_detected(_log(40, ranges=ranges, ids=ids))
    assert lenient and not strict
    assert encounter_detection_rate([_log(40, ranges=ranges, ids=ids)]) == (1.0, 0.0)
    frames = [EvalFrame(k, 0.1 * k, (gt(100, 100, rng_m=2000.0),), (pred(100, 100),)) for k in range(40)]
    rep = compute_metrics([frames])
    assert rep.edr_conventions_differ


def test_crossing_threshold_is_2000_ft():
    assert FT_2000_M == pytest.approx(609.6)


@given(st.integers(0, 2**32 - 1))
def test_count_identities(seed):
    rng = np.random.default_rng(seed)
    rep = compute_metrics([random_eval_stream(rng), random_eval_stream(rng)])
    if rep.tp + rep.fp:
        assert rep.precision * (rep.tp + rep.fp) == pytest.approx(rep.tp, abs=1e-9)
    if rep.tp + rep.fn:
        assert rep.recall * (rep.tp + rep.fn) == pytest.approx(rep.tp, abs=1e-9)
    assert rep.fppi == rep.fp / rep.frames
    total = sum(b.recall * b.support for b in rep.ptrack_bins if b.recall is not None)
    assert total / sum(b.support for b in rep.ptrack_bins) == pytest.approx(rep.recall, abs=1e-12)
    assert 0 <= rep.edr <= 1


@given(st.integers(0, 2**32 - 1))
def test_merge_is_associative(seed):
    rng = np.random.default_rng(seed)
    streams = [random_eval_stream(rng, 20) for _ in range(3)]
    whole = compute_metrics(streams).to_dict()
    a = MetricsAccumulator().add_stream(streams[0])
    b = MetricsAccumulator().add_stream(streams[1]).add_stream(streams[2])
    assert a.merge(b).report().to_dict() == whole


def test_ptrack_bins_and_flags():
    frames = [EvalFrame(k, 0.1 * k, (gt(100, 100, rng_m=650.0),), (pred(100, 100),) if k % 4 else ())
              for k in range(60)]
    bins = ptrack_by_range([frames])
    b = next(b for b in bins if b.range_lo_m == 600.0)
    assert b.support == 60 and b.recall == pytest.approx(45 / 60) and not b.flagged
    empty = next(b for b in bins if b.range_lo_m == 1000.0)
    assert empty.recall is None and empty.flagged
    assert bins[-1].range_hi_m == 2500.0  # no overflow bin without data


def test_overflow_bin_appears_with_data():
    frames = [EvalFrame(0, 0.0, (gt(1, 1, rng_m=3000.0),), ())]
    bins = ptrack_by_range([frames])
    assert bins[-1].range_lo_m == 2500.0 and bins[-1].range_hi_m is None


def test_range_error_examples():
    frames = [EvalFrame(k, 0.1 * k, (gt(1, 1, rng_m=r),), (pred(1, 1, rng_m=r),))
              for k, r in enumerate(np.linspace(150, 2400, 200))]
    assert all(b.median_frac_error in (None, 0.0) for b in range_error_stats([frames]))
    frames = [EvalFrame(k, 0.1 * k, (gt(1, 1, rng_m=r),), (pred(1, 1, rng_m=1.2 * r),))
              for k, r in enumerate(np.linspace(150, 2400, 200))]
    for b in range_error_stats([frames]):
        assert b.median_frac_error is None or b.median_frac_error == pytest.approx(0.2)


def test_range_error_lognormal_oracle():
    sigma = 0.1
    # median m of |e^n - 1|, n ~ N(0, sigma): P(ln(1-m) < n < ln(1+m)) = 1/2
    m_star = brentq(
        lambda m: norm.cdf(math.log1p(m) / sigma) - norm.cdf(math.log1p(-m) / sigma) - 0.5, 1e-6, 0.9
    )
    assert 0.067 <= m_star <= 0.070
    rng = np.random.default_rng(0)
    ranges = rng.uniform(100, 2500, 40_000)
    est = ranges * np.exp(rng.normal(0, sigma, ranges.size))
    frames = [EvalFrame(k, 0.1 * k, (gt(1, 1, rng_m=r),), (pred(1, 1, rng_m=e),))
              for k, (r, e) in enumerate(zip(ranges, est))]
    for b in range_error_stats([frames]):
        if b.support >= 1000:
            assert b.median_frac_error == pytest.approx(m_star, abs=0.006)


def test_spec_table_lookup():
    assert [min_required_range(s) for s in OWNSHIP_SPECS] == [1222.0, 963.0, 703.0, 1018.0, 666.0]
    assert min_required_range(OwnshipSpec(60, 31.53, (250, 500))) == 703.0
    with pytest.raises(KeyError):
        min_required_range(OwnshipSpec(45, 20.0))
    with pytest.raises(ValueError):
        OwnshipSpec(0, 10)


def _bins_crossing_at(r_cross):
    """Supported bins whose interpolated 0.95 crossing lies at ``r_cross``."""
    bins = []
    for lo in range(0, 2500, 100):
        center = lo + 50
        rec = min(1.0, max(0.0, 0.95 - 0.0005 * (center - r_cross)))
        bins.append(PTrackBin(float(lo), float(lo + 100), rec, 100, False))
    return bins


def _report_with(bins, are=0.1, err=0.05):
    rep = compute_metrics([])
    rep.ptrack_bins = bins
    from daatrack.evaluation import RangeErrorBin
    rep.range_err_bins = [RangeErrorBin(b.range_lo_m, b.range_hi_m, err, 100) for b in bins]
    rep.are_dps = are
    return rep


def test_r95_interpolates():
    bins = [PTrackBin(600.0, 700.0, 1.0, 100, False), PTrackBin(700.0, 800.0, 0.9, 100, False)]
    assert r95(bins) == pytest.approx(700.0)
    assert r95(_bins_crossing_at(700.0)) == pytest.approx(700.0)
    # flagged bins are skipped
    bins.insert(1, PTrackBin(650.0, 700.0, 0.1, 3, True))
    assert r95(bins) == pytest.approx(700.0)


def test_astm_verdicts_at_700():
    rep = _report_with(_bins_crossing_at(700.0))
    v = {(s.spec.cruise_kts, s.spec.turn_rate_dps): s for s in astm_check(rep)}
    assert v[(90, 21.02)].passed and v[(60, 31.53)].passed is False
    assert not v[(30, 63.05)].passed
    assert len(v) == 5
    assert not astm_check(_report_with(_bins_crossing_at(900.0), are=1.0))[4].passed
    assert not astm_check(_report_with(_bins_crossing_at(900.0), err=0.2))[4].passed


@given(st.floats(300, 1500), st.floats(0, 400))
def test_astm_monotone_in_r95(r, dr):
    a = astm_check(_report_with(_bins_crossing_at(r)))
    b = astm_check(_report_with(_bins_crossing_at(r + dr)))
    for va, vb in zip(a, b):
        assert not (va.passed and not vb.passed)


def test_report_serialization_stable():
    rng = np.random.default_rng(1)
    rep = compute_metrics([random_eval_stream(rng)])
    rep.astm = astm_check(rep)
    text = rep.to_json()
    import json
    assert json.dumps(json.loads(text), indent=2) + "\n" == text
    assert list(json.loads(text))[:6] == ["precision", "recall", "edr", "fppi", "idspi", "are_dps"]
    csv = curves_csv(rep).splitlines()
    assert csv[0] == "curve,range_lo_m,range_hi_m,value,support,flagged"
    assert sum(l.startswith("ptrack,") for l in csv) == len(rep.ptrack_bins)
