import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from daatrack.alignment import AffineTransform
from daatrack.core import BoundingBox, CameraModel, Detection, FrameMeta
from daatrack.pipeline import run_tracker
from daatrack.sim import NOISELESS, NoiseModel, head_on_template, run_encounter
from daatrack.tracker import (
    FalsePositiveRecord,
    MiningStore,
    OffsetTracker,
    TrackStatus,
    apply_secondary_filter,
    associate,
    extract_crop,
    mine_false_positives,
)

from oracles import optimal_assignment, random_association_instance

CAM = CameraModel()


def det(cx, cy, conf=0.9, off=(0.0, 0.0), side=6.0):
    return Detection(BoundingBox(cx, cy, side, side), conf, track_offset=off)


def meta(k):
    return FrameMeta(k, 0.1 * k, CAM)


def test_associate_exact_offset():
    res = associate([(1, (100.0, 100.0))], [det(104, 103, off=(4, 3))], 30.0)
    assert res.matches == [(1, 0)]
    assert res.unmatched_dets == [] and res.unmatched_tracks == []


def test_associate_strict_gate():
    res = associate([(1, (100.0, 100.0))], [det(130, 100)], 30.0)
    assert res.matches == [] and res.unmatched_dets == [0] and res.unmatched_tracks == [1]
    assert associate([(1, (100.0, 100.0))], [det(129.999, 100)], 30.0).matches == [(1, 0)]


def test_associate_tie_goes_to_lower_id():
    res = associate([(7, (90.0, 0.0)), (3, (110.0, 0.0))], [det(100, 0)], 30.0)
    assert res.matches == [(3, 0)]


def test_associate_confidence_order():
    tracks = [(1, (100.0, 100.0))]
    dets = [det(105, 100, conf=0.4), det(110, 100, conf=0.9)]
    assert associate(tracks, dets, 30.0).matches == [(1, 1)]


def test_associate_cross_ambiguous_matches_optimal():
    tracks = [(1, (0.0, 0.0)), (2, (20.0, 0.0))]
    dets = [det(9, 0, conf=0.9), det(21, 0, conf=0.8)]
    res = associate(tracks, dets, 30.0)
    assert set(res.matches) == optimal_assignment(tracks, dets, 30.0) == {(1, 0), (2, 1)}


@given(st.integers(0, 2**32 - 1))
def test_associate_is_partial_one_to_one(seed):
    rng = np.random.default_rng(seed)
    tracks, dets = random_association_instance(rng)
    res = associate(tracks, dets, 30.0)
    tids = [t for t, _ in res.matches]
    dis = [d for _, d in res.matches]
    assert len(set(tids)) == len(tids) and len(set(dis)) == len(dis)
    assert sorted(dis + res.unmatched_dets) == list(range(len(dets)))
    assert sorted(tids + res.unmatched_tracks) == sorted(t for t, _ in tracks)
    centers = dict(tracks)
    for tid, di in res.matches:
        ax, ay = dets[di].offset_adjusted_center()
        assert math.hypot(ax - centers[tid][0], ay - centers[tid][1]) < 30.0


def test_noiseless_stream_single_confirmed_track():
    frames = run_encounter(head_on_template(3000.0, 50.0, 60.0, duration_s=10.0), NOISELESS)[:100]
    tracker = OffsetTracker()
    ids = set()
    for fr in frames:
        views = tracker.step(fr.observed, fr.meta)
        ids.update(v.id for v in views)
    assert ids == {1}
    assert views[0].status is TrackStatus.CONFIRMED


def _run_with_gap(gap, max_misses=3):
    tracker = OffsetTracker(max_misses=max_misses)
    seen = []
    k = 0
    for _ in range(5):
        seen.append([v.id for v in tracker.step([det(500 + 2 * k, 400, off=(2, 0))], meta(k))])
        k += 1
    for _ in range(gap):
        seen.append([v.id for v in tracker.step([], meta(k))])
        k += 1
    views = tracker.step([det(500 + 2 * k, 400, off=(2, 0))], meta(k))
    return views, seen


def test_gap_of_max_misses_keeps_id():
    views, _ = _run_with_gap(3)
    assert [v.id for v in views] == [1]
    assert views[0].misses == 0


def test_longer_gap_spawns_new_id():
    views, seen = _run_with_gap(4)
    assert [v.id for v in views] == [2]
    assert seen[-1] == []  # old track died after its fourth miss


def test_confirmation_lifecycle():
    tracker = OffsetTracker(confirm_after=2)
    (v,) = tracker.step([det(100, 100)], meta(0))
    assert v.status is TrackStatus.TENTATIVE
    (v,) = tracker.step([det(100, 100)], meta(1))
    assert v.status is TrackStatus.CONFIRMED


def test_out_of_order_frames_rejected():
    tracker = OffsetTracker()
    tracker.step([], meta(5))
    with pytest.raises(ValueError):
        tracker.step([], meta(5))
    with pytest.raises(ValueError):
        tracker.step([], meta(3))


def test_ids_increase_and_never_repeat():
    tracker = OffsetTracker(max_misses=1)
    rng = np.random.default_rng(0)
    spawned = []
    for k in range(60):
        dets = [det(float(x), float(y)) for x, y in rng.uniform(0, 2000, size=(2, 2))]
        views = tracker.step(dets, meta(k))
        live = [v.id for v in views]
        assert len(live) == len(set(live))
        spawned.extend(i for i in live if i not in spawned)
    assert spawned == sorted(spawned)


def test_deterministic_replay():
    frames = run_encounter(head_on_template(2500.0, 60.0, 80.0, duration_s=30.0, seed=4))
    a = list(run_tracker(frames))
    b = list(run_tracker(frames))
    assert a == b


def test_ego_motion_compensation():
    tracker = OffsetTracker(kappa=10.0)
    tracker.step([det(100, 100)], meta(0))
    # camera pans: the static object moves 50 px in the image, detector offset sees it
    views = tracker.step([det(150, 100, off=(0.0, 0.0))], meta(1), ego=AffineTransform.translation(50, 0))
    assert [v.id for v in views] == [1]


def test_alignment_failure_doubles_gate():
    base = OffsetTracker(kappa=30.0)
    base.step([det(100, 100)], meta(0))
    assert [v.id for v in base.step([det(140, 100)], meta(1)) if v.updated] == [2]
    wide = OffsetTracker(kappa=30.0)
    wide.step([det(100, 100)], meta(0))
    views = wide.step([det(140, 100)], meta(1), alignment_failed=True)
    assert [v.id for v in views] == [1]
    # gate returns to normal on the next frame
    assert [v.id for v in wide.step([det(180, 100)], meta(2)) if v.updated] == [2]


def test_separated_intruders_no_switches():
    tracker = OffsetTracker()
    history = {}
    for k in range(200):
        dets = [det(300 + 3 * k, 500, off=(3, 0)), det(300 + 3 * k, 800, off=(3, 0))]
        for v in tracker.step(dets, meta(k)):
            history.setdefault(round(v.box.cy), set()).add(v.id)
    assert history == {500: {1}, 800: {2}}


def test_secondary_filter():
    dets = [det(10, 10), det(50, 50)]
    assert apply_secondary_filter(dets, None) == dets
    assert apply_secondary_filter(dets, lambda c: True) == dets
    assert apply_secondary_filter(dets, lambda c: (False, 0.1)) == []


def test_secondary_filter_removes_labelled_fps():
    noise = NoiseModel(fp_rate_per_frame=0.5, miss_midpoint_m=None)
    frames = run_encounter(head_on_template(2000.0, 50.0, 50.0, duration_s=20.0, seed=2), noise)
    oracle = lambda crop: not crop.detection.is_false_positive
    n_fp = n_true = 0
    for fr in frames:
        kept = apply_secondary_filter(fr.observed, oracle)
        assert all(not d.is_false_positive for d in kept)
        assert len(kept) == sum(not d.is_false_positive for d in fr.observed)
        n_fp += sum(d.is_false_positive for d in fr.observed)
        n_true += len(kept)
    assert n_fp > 0 and n_true > 0


def test_filter_receives_crops():
    img = np.arange(100 * 100, dtype=np.uint16).reshape(100, 100)
    seen = []
    apply_secondary_filter([det(50, 50)], lambda c: seen.append(c.crop) or True, image=img, crop_size=8)
    assert seen[0].shape == (8, 8) and seen[0][4, 4] == img[50, 50]
    corner = extract_crop(img, BoundingBox(0, 0, 2, 2), 8)
    assert corner[:4, :4].sum() == 0 and corner[4, 4] == img[0, 0]


def test_fp_mining_rules():
    gt = [BoundingBox(100, 100, 10, 10)]
    assert mine_false_positives([det(101, 100, conf=0.9)], gt) == []
    recs = mine_false_positives([det(500, 500, conf=0.3)], gt, frame_index=7)
    assert recs == [FalsePositiveRecord(7, 500.0, 500.0, 6.0, 6.0, 0.3)]
    assert mine_false_positives([det(500, 500, conf=0.15)], gt) == []
    assert mine_false_positives([det(500, 500, conf=0.2)], gt) == []  # strictly over 0.2


def test_mining_store_appends(tmp_path):
    store = MiningStore(tmp_path / "fp.jsonl")
    assert store.read() == []
    r = FalsePositiveRecord(1, 2.0, 3.0, 4.0, 5.0, 0.5)
    store.append([r])
    store.append([r, r])
    assert store.read() == [r, r, r]


def test_estimator_params_roundtrip():
    tr = OffsetTracker(kappa=12.0, max_misses=5)
    assert tr.get_params()["kappa"] == 12.0
    tr.set_params(kappa=20.0)
    assert tr.reset().config_.kappa == 20.0
    with pytest.raises(ValueError):
        OffsetTracker(kappa=0.0).reset()
