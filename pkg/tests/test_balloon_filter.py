import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from balloonpop import balloon_filter as bf
from balloonpop.geometry import CameraIntrinsics, CameraPose, mount_pose

INTR = CameraIntrinsics(600.0, 600.0, 239.5, 134.5, 480, 270)
CFG = bf.FilterConfig()
coord = st.floats(-50, 50, allow_nan=False)


def hyp(uid, *points, missed=0):
    h = bf.BalloonHypothesis(uid, missed_count=missed)
    for p in points:
        h.push(p)
    return h


def ray_x():
    return bf.DetectionRay.through((0, 0, 0), (10, 0, 0))


# -- gates and distances ------------------------------------------------------------

@pytest.mark.parametrize("z,keep", [(2.8, True), (1.0, False), (1.5, True), (5.0, True), (5.01, False)])
def test_height_gate(z, keep):
    assert bf.height_gate((0, 0, z), CFG) is keep


def test_ray_distance_examples():
    assert bf.ray_distance((4, 0, 0), ray_x()) == 0
    assert bf.ray_distance((5, 3, 0), ray_x()) == 3
    assert bf.ray_distance((-2, 0, 0), ray_x()) == 2


@given(st.lists(coord, min_size=6, max_size=6))
def test_ray_distance_matches_brute_force(xs):
    o, e = np.array(xs[:3]), np.array(xs[3:]) + 0.5
    if np.linalg.norm(e - o) < 1e-3:
        return
    ray = bf.DetectionRay.through(o, e)
    P = np.array([xs[1], xs[2], xs[0]])
    t = np.linspace(0, 300, 300001)
    brute = np.min(np.linalg.norm(o + t[:, None] * ray.direction - P, axis=1))
    assert bf.ray_distance(P, ray) <= brute + 1e-9
    assert bf.ray_distance(P, ray) >= brute - 2e-3


def test_ray_direction_is_unit():
    r = bf.DetectionRay.through((1, 2, 3), (4, 6, 3))
    assert abs(np.linalg.norm(r.direction) - 1) < 1e-12
    with pytest.raises(ValueError):
        bf.DetectionRay.through((1, 1, 1), (1, 1, 1))


def test_ground_distance():
    assert bf.ground_distance((0, 0, 2.8), (0, 0, 5.0)) == 0
    assert bf.ground_distance((1, 2, 0), (4, 6, 9)) == 5


@given(st.lists(coord, min_size=6, max_size=6))
def test_ground_distance_is_flattened_distance(xs):
    a, b = np.array(xs[:3]), np.array(xs[3:])
    assert math.isclose(bf.ground_distance(a, b), np.linalg.norm((a - b)[:2]), abs_tol=1e-12)


# -- assign / merge -----------------------------------------------------------------

def test_assign_creates_first_hypothesis():
    f = bf.BalloonFilter()
    f.assign([bf.DetectionRay.through((0, 0, 4), (10, 0, 2.8))])
    assert len(f.hypotheses) == 1 and len(f.hypotheses[0].history) == 1


def test_assign_far_detection_makes_new_hypothesis():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (10, 2.5, 0))]
    f._next_id = 1
    f.assign([ray_x()])
    assert len(f.hypotheses) == 2


def test_identical_detections_average():
    f = bf.BalloonFilter()
    for _ in range(8):
        f.assign([bf.DetectionRay.through((0, 0, 4), (1, 2, 2.8))])
    assert len(f.hypotheses) == 1
    h = f.hypotheses[0]
    assert np.allclose(h.position, (1, 2, 2.8)) and len(h.history) == 8


def test_history_keeps_last_eight():
    h = hyp(0, *[(float(i), 0, 0) for i in range(12)])
    assert [p[0] for p in h.history] == list(range(4, 12))
    assert h.position[0] == np.mean(range(4, 12))


def test_assign_resets_missed_count():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (10, 0, 0), missed=7)]
    f._next_id = 1
    f.assign([ray_x()])
    assert f.hypotheses[0].missed_count == 0


@pytest.mark.parametrize("gap,n", [(1.9, 1), (2.1, 2)])
def test_merge_threshold(gap, n):
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (0, 0, 2.8)), hyp(1, (gap, 0, 2.8))]
    f.merge()
    assert len(f.hypotheses) == n


def test_merge_three_to_one():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (0, 0, 2.8)), hyp(1, (1.2, 0, 2.8)), hyp(2, (0.6, 1.0, 2.8))]
    f.merge()
    assert len(f.hypotheses) == 1 and f.hypotheses[0].uid == 0


def test_merge_history_newest_first_and_min_missed():
    a = hyp(0, *[(0.0, 0, 0)] * 6, missed=5)
    b = hyp(1, *[(1.0, 0, 0)] * 6, missed=2)
    f = bf.BalloonFilter()
    f.hypotheses = [a, b]
    f.merge()
    (m,) = f.hypotheses
    assert len(m.history) == 8 and m.missed_count == 2
    # four newest of each, interleaved by recency
    assert sorted(p[0] for p in m.history) == [0.0] * 4 + [1.0] * 4
    assert np.allclose(m.position, (0.5, 0, 0))


def test_merge_ties_prefer_older_pair():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (0, 0, 0)), hyp(1, (1.5, 0, 0)), hyp(2, (3.0, 0, 0))]
    f.merge()
    # (0, 1) and (1, 2) are equally close; the older pair merges first
    assert [h.uid for h in f.hypotheses] == [0, 2]


# -- visibility -----------------------------------------------------------------------

def _pose():
    return mount_pose((0, 0, 4), 0.0, math.radians(10))


def test_invisible_hypothesis_keeps_counter():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (-10, 0, 2.8))]
    for _ in range(50):
        f.process_frame(_pose(), INTR, [])
    assert f.hypotheses[0].missed_count == 0


def test_visible_unseen_removed_after_31_frames():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (15, 0, 2.8))]
    for _ in range(30):
        f.process_frame(_pose(), INTR, [])
    assert f.hypotheses and f.hypotheses[0].missed_count == 30
    f.process_frame(_pose(), INTR, [])
    assert f.hypotheses == []


def test_redetection_resets_counter():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (15, 0, 2.8))]
    for _ in range(28):
        f.process_frame(_pose(), INTR, [])
    f.process_frame(_pose(), INTR, [np.array([15.0, 0, 2.8])])
    assert f.hypotheses[0].missed_count == 0
    for _ in range(30):
        f.process_frame(_pose(), INTR, [])
    assert len(f.hypotheses) == 1


def test_gated_detection_ignored():
    f = bf.BalloonFilter()
    f.process_frame(_pose(), INTR, [np.array([15.0, 0, 0.5]), np.array([15.0, 0, 7.0])])
    assert f.hypotheses == []


# -- outputs --------------------------------------------------------------------------

def test_confirmed_needs_eight_and_sorts():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, *[(10, 0, 0)] * 8), hyp(1, *[(4, 0, 0)] * 8), hyp(2, *[(1, 0, 0)] * 7)]
    assert [p[0] for p in f.confirmed((0, 0, 0))] == [4, 10]
    assert bf.BalloonFilter().confirmed((0, 0, 0)) == []


def test_mark_popped():
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(0, (3.2, 4.1, 2.8)), hyp(1, (3.6, 4.0, 2.8))]
    popped = f.mark_popped((3, 4, 4.0))
    assert len(popped) == 1 and np.allclose(popped[0], (3.2, 4.1, 2.8))
    assert [h.uid for h in f.hypotheses] == [1]
    assert bf.BalloonFilter().mark_popped((0, 0, 0)) == []


def test_dump_is_json():
    import json
    f = bf.BalloonFilter()
    f.hypotheses = [hyp(3, (1, 2, 3), missed=4)]
    d = json.loads(f.dump())
    assert d["hypotheses"][0] == {"id": 3, "position": [1, 2, 3], "history": [[1, 2, 3]], "missed": 4}


def test_config_validation():
    with pytest.raises(ValueError):
        bf.FilterConfig(corridor=(5.0, 1.5))
    with pytest.raises(ValueError):
        bf.FilterConfig(metric="euclid")
    with pytest.raises(ValueError):
        bf.FilterConfig(assign_threshold=0)


# -- properties ---------------------------------------------------------------------------

frames = st.lists(
    st.lists(st.tuples(st.floats(5, 40), st.floats(-15, 15), st.floats(0.5, 5.5)), max_size=4),
    max_size=25,
)


@settings(max_examples=60, deadline=None)
@given(frames, st.sampled_from(["ray", "ground"]))
def test_filter_invariants(seq, metric):
    f = bf.BalloonFilter(bf.FilterConfig(metric=metric))
    g = bf.BalloonFilter(bf.FilterConfig(metric=metric))
    seen = 0
    for frame in seq:
        pts = [np.array(p) for p in frame]
        seen += len(pts)
        f.process_frame(_pose(), INTR, pts)
        g.process_frame(_pose(), INTR, pts)
        assert len(f.hypotheses) <= seen
        for h in f.hypotheses:
            assert 1 <= len(h.history) <= 8 and h.missed_count >= 0
            assert np.allclose(h.position, np.mean(np.asarray(h.history), axis=0), atol=1e-12, rtol=0)
    assert f.dump() == g.dump()


def _depth_noise_run(metric, seed=0, frames=60):
    """One balloon seen from a camera flying toward it, range noise 15%."""
    rng = np.random.default_rng(seed)
    truth = np.array([0.0, 0.0, 2.8])
    f = bf.BalloonFilter(bf.FilterConfig(metric=metric))
    total_peak = 0
    for k in range(frames):
        cam = np.array([-35.0 + 0.3 * k, 3.0, 4.0])
        d = truth - cam
        det = cam + d * max(1.0 + 0.15 * rng.standard_normal(), 0.05)
        f.process_frame(mount_pose(cam, math.atan2(d[1], d[0]), math.radians(10)), INTR, [det])
        total_peak = max(total_peak, len(f.hypotheses))
    return len(f.confirmed(cam)), total_peak


def test_ray_metric_single_hypothesis_under_depth_noise():
    confirmed, _ = _depth_noise_run("ray")
    assert confirmed == 1


def test_ground_metric_splits_under_depth_noise():
    _, peak = _depth_noise_run("ground")
    assert peak >= 2
