import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import p_at_k_by_enumeration
from scenegraph3d import se3
from scenegraph3d import world_synth as ws
from scenegraph3d.evaluation import (EvaluationError, MetricsReport, ate, box_iou, descriptor_p_at_k,
                                     estimated_room_labels, gt_gvd_centers, gt_room_labels, object_metrics,
                                     place_position_error, room_pr, room_pr_labels)


def test_exact_objects_are_all_found():
    gt = [(10, np.zeros(3)), (11, np.ones(3))]
    assert object_metrics(gt, gt) == (100.0, 100.0)


def test_label_must_match():
    assert object_metrics([(11, np.zeros(3))], [(10, np.zeros(3))]) == (0.0, 0.0)


def test_empty_sides_and_bad_threshold():
    assert object_metrics([], [(10, np.zeros(3))]) == (0.0, None)
    with pytest.raises(EvaluationError):
        object_metrics([], [], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_perturbation_within_threshold(seed):
    rng = np.random.default_rng(seed)
    gt = [(int(rng.integers(10, 15)), rng.uniform(0, 10, 3)) for _ in range(12)]
    d = rng.normal(size=(12, 3))
    d *= rng.uniform(0, 0.49, (12, 1)) / np.linalg.norm(d, axis=1, keepdims=True)
    est = [(lab, p + dd) for (lab, p), dd in zip(gt, d)]
    assert object_metrics(est, gt, 0.5) == (100.0, 100.0)


# -- places --------------------------------------------------------------------


def _corridor_grid():
    w = ws.generate_world(ws.WorldSpec(num_rooms=(1, 1), objects_per_room=(0, 0)), 1)
    return ws.rasterize(w, 0.2)


def test_places_on_the_gvd_are_within_half_a_voxel():
    grid = _corridor_grid()
    c = gt_gvd_centers(grid)
    rng = np.random.default_rng(0)
    pick = c[rng.choice(len(c), 20, replace=False)] + rng.uniform(-0.1, 0.1, (20, 3))
    assert place_position_error(pick, c) <= np.sqrt(3) * 0.1 + 1e-12


def test_nearest_lookup_matches_scan():
    rng = np.random.default_rng(1)
    c = rng.uniform(0, 5, (200, 3))
    q = rng.uniform(0, 5, (30, 3))
    want = np.mean([np.linalg.norm(c - p, axis=1).min() for p in q])
    assert place_position_error(q, c) == pytest.approx(want, rel=1e-12)


def test_place_one_metre_off():
    c = np.array([[x, 0.0, 0.0] for x in np.arange(0, 5, 0.1)])
    assert place_position_error([[2.0, 1.0, 0.0]], c) == pytest.approx(1.0, abs=0.1)
    with pytest.raises(EvaluationError):
        place_position_error([[0, 0, 0]], np.zeros((0, 3)))


# -- rooms -----------------------------------------------------------------------


def test_room_pr_hand_cases():
    a, b = set(range(0, 10)), set(range(10, 20))
    assert room_pr([a, b], [a, b]) == (1.0, 1.0)
    assert room_pr([a | b], [a, b]) == (0.5, 1.0)
    assert room_pr([set(range(5)), set(range(5, 10))], [a]) == (1.0, 0.5)


def test_label_form_matches_set_form():
    rng = np.random.default_rng(3)
    e = rng.integers(-1, 4, 500)
    g = rng.integers(-1, 3, 500)
    sets = lambda lab: [set(np.flatnonzero(lab == k).tolist()) for k in np.unique(lab[lab >= 0])]  # noqa: E731
    p, r = room_pr_labels(e, g)
    want_p = np.mean([max(len(s & t) for t in sets(g)) / len(s) for s in sets(e)])
    want_r = np.mean([max(len(s & t) for s in sets(e)) / len(t) for t in sets(g)])
    assert p == pytest.approx(want_p) and r == pytest.approx(want_r)
    assert room_pr_labels(e, e) == (1.0, 1.0)


def test_room_pr_needs_rooms():
    with pytest.raises(EvaluationError):
        room_pr([], [{1}])
    with pytest.raises(EvaluationError):
        room_pr_labels(np.full(4, -1), np.zeros(4))


def test_gt_labels_cover_each_room():
    w = ws.generate_world(ws.WorldSpec(num_rooms=(3, 3)), 2)
    grid = ws.rasterize(w, 0.25)
    lab = gt_room_labels(w, grid)
    assert set(np.unique(lab[lab >= 0]).tolist()) == {r.id for r in w.rooms}
    assert not np.any(lab[grid.occupied.reshape(-1)] >= 0)


def test_estimated_labels_without_rooms_are_empty():
    from scenegraph3d.scene_graph import SceneGraph
    grid = _corridor_grid()
    assert (estimated_room_labels(SceneGraph(), grid) == -1).all()


# -- trajectories -----------------------------------------------------------------


def test_ate_cases(rng):
    gt = [se3.random_pose(rng) for _ in range(10)]
    assert ate(gt, gt) == pytest.approx(0.0, abs=1e-12)
    # the first pose is the anchor; every later one is 1 m off
    est = [gt[0]] + [se3.make(T[:3, :3], T[:3, 3] + [1.0, 0, 0]) for T in gt[1:]]
    assert ate(est, gt) == pytest.approx(1.0)
    # a rigidly moved copy aligns perfectly
    M = se3.random_pose(rng)
    assert ate([M @ T for T in gt], gt) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(EvaluationError):
        ate(gt[:3], gt)


def test_zero_drift_has_zero_ate():
    w = ws.generate_world(ws.WorldSpec(), 0)
    tr = ws.apply_drift(ws.generate_trajectory(w, ws.TrajectorySpec(), 0), ws.DriftModel(0, 0), 0)
    assert ate(tr.odom_poses, tr.gt_poses) == 0.0


# -- descriptors --------------------------------------------------------------------


def _box(lo, hi):
    return np.array(lo, float), np.array(hi, float)


def test_box_iou():
    assert box_iou(_box([0, 0, 0], [2, 1, 1]), _box([1, 0, 0], [3, 1, 1])) == pytest.approx(1 / 3)
    assert box_iou(_box([0, 0, 0], [1, 1, 1]), _box([5, 5, 5], [6, 6, 6])) == 0.0


def test_duplicates_and_disjoint():
    v = [np.array([0.5, 0.5])] * 4
    b = [_box([0, 0, 0], [1, 1, 1])] * 4
    assert descriptor_p_at_k(v, b, 3) == 100.0
    far = [_box([5 * i, 0, 0], [5 * i + 1, 1, 1]) for i in range(4)]
    assert descriptor_p_at_k(v, far, 3) == 0.0
    with pytest.raises(EvaluationError):
        descriptor_p_at_k(v, b, 4)


def test_hand_fixture():
    # descriptors 0 and 1 share a place, 2 overlaps 1 by a third, 3 is elsewhere
    v = [np.array(x) for x in ([1.0, 0.0], [0.9, 0.1], [0.5, 0.5], [0.0, 1.0])]
    b = [_box([0, 0, 0], [2, 1, 1]), _box([0, 0, 0], [2, 1, 1]), _box([1, 0, 0], [3, 1, 1]),
         _box([9, 0, 0], [10, 1, 1])]
    # top-1: 0->1 hit, 1->0 hit, 2->1 (iou 1/3) miss, 3->2 miss
    assert descriptor_p_at_k(v, b, 1) == 50.0
    assert descriptor_p_at_k(v, b, 1, iou_threshold=0.3) == 75.0
    assert descriptor_p_at_k(v, b, 2) == p_at_k_by_enumeration(v, b, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_p_at_k_matches_enumeration(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(k + 1, 15))
    v = [rng.dirichlet(np.ones(6)) for _ in range(n)]
    lo = rng.uniform(0, 3, (n, 3))
    b = [(l, l + rng.uniform(0.5, 3, 3)) for l in lo]
    assert descriptor_p_at_k(v, b, k, 0.3) == pytest.approx(p_at_k_by_enumeration(v, b, k, 0.3))


def test_report_round_trip_and_validation():
    r = MetricsReport(object_found_pct=90.0, room_precision=0.8, ate_rmse=0.1, descriptor_p_at_k={"1": 50.0})
    assert MetricsReport.from_json(r.to_json()) == r
    with pytest.raises(EvaluationError):
        MetricsReport(room_recall=1.5).validate()
