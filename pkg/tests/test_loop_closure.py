import numpy as np
import pytest

from conftest import obj, place
from generators import constellation_graph
from scenegraph3d import se3
from scenegraph3d.loop_closure import (DescriptorDatabase, DescriptorDeferred, HierarchicalDescriptor, Level, LoopClosureConfig,
                                       RegistrationError, Source, build_descriptor, closures_from_csv,
                                       closures_to_csv, detect_loop_closures, match_top_down, ransac_register,
                                       register_appearance, register_objects, rigid_fit)
from scenegraph3d.scene_graph import AgentAttrs, Layer, SceneGraph

CHAIR, TABLE = 11, 12


def pose_error(T, U):
    return np.linalg.norm(T[:3, 3] - U[:3, 3]), np.degrees(se3.rotation_angle(T[:3, :3].T @ U[:3, :3]))


def agent_at(g, p, kf, app=None, T=None):
    T = se3.make(np.eye(3), np.asarray(p, float)) if T is None else T
    a = g.add_node(Layer.OBJECTS, AgentAttrs(T, kf, app or {}))
    return a


def room_fixture(labels=(CHAIR, CHAIR, TABLE), place_d=(0.3, 0.6, 0.6, 1.4, 4.9, 7.0)):
    g = SceneGraph()
    ps = [g.add_node(Layer.PLACES, place((0.5 * i, 0, 0), d)) for i, d in enumerate(place_d)]
    for i, lab in enumerate(labels):
        g.add_node(Layer.OBJECTS, obj(lab, (1.0, 0.5 * i, 0)))
    a = agent_at(g, (0, 0, 0), 0, {1: 1.0})
    g.add_edge(a, ps[0])
    return g, a


# -- descriptors ----------------------------------------------------------------


def test_object_histogram_proportions():
    g, a = room_fixture()
    d = build_descriptor(g, a)
    assert d.object_hist[CHAIR] == pytest.approx(2 / 3) and d.object_hist[TABLE] == pytest.approx(1 / 3)
    assert d.object_hist.sum() == pytest.approx(1.0) and not d.objects_empty


def test_no_objects_is_flagged():
    g, a = room_fixture(labels=())
    d = build_descriptor(g, a)
    assert d.objects_empty and not d.object_hist.any()


def test_place_histogram_matches_recount():
    rng = np.random.default_rng(2)
    g = SceneGraph()
    pos = rng.uniform(-6, 6, (80, 3))
    dist = rng.uniform(0.05, 6.5, 80)
    ps = [g.add_node(Layer.PLACES, place(p, d)) for p, d in zip(pos, dist)]
    a = agent_at(g, (0, 0, 0), 0)
    g.add_edge(a, ps[0])
    cfg = LoopClosureConfig()
    d = build_descriptor(g, a, cfg)
    r = d.radius
    inside = np.linalg.norm(pos - pos[0], axis=1) <= r
    counts, _ = np.histogram(np.minimum(dist[inside], 5.0 - 1e-9), bins=np.linspace(0.0, 5.0, 21))
    assert np.allclose(d.place_hist, counts / counts.sum())
    assert d.place_ids == frozenset(p for p, k in zip(ps, inside) if k)


def test_radius_grows_until_enough_nodes():
    g = SceneGraph()
    ps = [g.add_node(Layer.PLACES, place((1.0 * i, 0, 0))) for i in range(12)]
    a = agent_at(g, (0, 0, 0), 0)
    g.add_edge(a, ps[0])
    d = build_descriptor(g, a, LoopClosureConfig(min_nodes=6))
    assert d.radius == 5.0
    d = build_descriptor(g, a, LoopClosureConfig(min_nodes=4))
    assert d.radius == 3.0


def test_agent_without_place_is_deferred():
    g = SceneGraph()
    a = agent_at(g, (0, 0, 0), 0)
    with pytest.raises(DescriptorDeferred):
        build_descriptor(g, a)


# -- matching ----------------------------------------------------------------------------


def _desc(kf, ph, oh, app):
    return HierarchicalDescriptor(kf, kf, app, np.asarray(oh, float), np.asarray(ph, float), frozenset(),
                                  frozenset(), 3.0, (np.zeros(3), np.zeros(3)))


def test_identical_descriptors_match_at_appearance_level():
    q = _desc(30, [0.5, 0.5], [1.0, 0.0], {7: 1.0})
    m = _desc(0, [0.5, 0.5], [1.0, 0.0], {7: 1.0})
    (c,) = match_top_down(q, [m])
    assert c.level == Level.APPEARANCE and c.scores == {"place": 0, "object": 0, "appearance": 0}


def test_gating_thresholds():
    q = _desc(30, [0.5, 0.5], [1.0, 0.0], {7: 1.0})
    # place distance 0.6 > 0.5 stops the comparison even though the rest is identical
    assert match_top_down(q, [_desc(0, [0.8, 0.2], [1.0, 0.0], {7: 1.0})]) == []
    # place 0.4 passes, objects 0.4 > 0.3 fail
    assert match_top_down(q, [_desc(0, [0.7, 0.3], [0.8, 0.2], {7: 1.0})]) == []
    # objects 0.2 pass, appearance 0.02 > 0.01 leaves an object-level candidate
    (c,) = match_top_down(q, [_desc(0, [0.7, 0.3], [0.9, 0.1], {7: 0.99, 8: 0.01})])
    assert c.level == Level.OBJECT
    (c,) = match_top_down(q, [_desc(0, [0.7, 0.3], [0.9, 0.1], {7: 0.996, 8: 0.004})])
    assert c.level == Level.APPEARANCE


def test_recent_keyframes_are_masked():
    q = _desc(30, [1.0], [1.0], {})
    assert match_top_down(q, [_desc(25, [1.0], [1.0], {})]) == []
    assert len(match_top_down(q, [_desc(20, [1.0], [1.0], {})])) == 1


def test_database_rejects_duplicate_keyframes():
    db = DescriptorDatabase()
    db.add(_desc(1, [1.0], [1.0], {}))
    with pytest.raises(ValueError):
        db.add(_desc(1, [1.0], [1.0], {}))


# -- registration --------------------------------------------------------------------------


def test_rigid_fit_exact(rng):
    T = se3.random_pose(rng)
    src = rng.normal(size=(10, 3))
    U = rigid_fit(src, se3.transform_points(T, src))
    assert np.allclose(U, T, atol=1e-12)


def test_noiseless_constellation_recovered_exactly(rng):
    for _ in range(5):
        g, dq, dm, T = constellation_graph(rng)
        lc = register_objects(g, dq, dm, rng=rng)
        assert lc.source == Source.OBJECT and lc.inliers == 10
        assert np.abs(lc.relative_pose - T).max() <= 1e-6


def test_clutter_is_rejected(rng):
    ok = 0
    for _ in range(20):
        g, dq, dm, T = constellation_graph(rng, clutter=4)
        try:
            lc = register_objects(g, dq, dm, rng=rng)
        except RegistrationError:
            continue
        dt, dr = pose_error(lc.relative_pose, T)
        ok += dt < 0.1 and dr < 1.0
    assert ok >= 19


def test_too_few_objects_fails(rng):
    g, dq, dm, _ = constellation_graph(rng, n=3)
    with pytest.raises(RegistrationError):
        register_objects(g, dq, dm, rng=rng)


def test_same_node_is_never_its_own_partner(rng):
    g, dq, dm, _ = constellation_graph(rng)
    shared = dq.__class__(**{**dq.__dict__, "object_ids": dm.object_ids})
    # every object appears in both sub-graphs, so only cross pairs remain and the identity is not forced
    with pytest.raises(RegistrationError):
        register_objects(g, shared, dm, LoopClosureConfig(object_min_inliers=10), rng=rng)


def test_ransac_needs_three_pairs():
    with pytest.raises(RegistrationError):
        ransac_register(np.zeros((2, 3)), np.zeros((2, 3)), [(0, 0), (1, 1)], 0.1, 3)


def test_appearance_identity(rng):
    anchors = {k: rng.uniform(-2, 2, 3) for k in range(9)}
    lc = register_appearance(anchors, anchors, rng=rng)
    assert lc.source == Source.APPEARANCE and lc.inliers == 9
    assert np.allclose(lc.relative_pose, np.eye(4), atol=1e-9)


def test_appearance_disjoint_landmarks_fail():
    with pytest.raises(RegistrationError):
        register_appearance({1: np.zeros(3)}, {2: np.ones(3)})


def test_appearance_with_noisy_anchors(rng):
    for _ in range(30):
        T = se3.random_pose(rng, 1.0)
        m = {k: rng.uniform(-3, 3, 3) for k in range(12)}
        q = {k: se3.transform_points(T, v[None])[0] + rng.normal(0, 0.02, 3) for k, v in m.items()}
        lc = register_appearance(q, m, rng=rng)
        assert pose_error(lc.relative_pose, T)[0] < 0.1


# -- detection ---------------------------------------------------------------------------------


def test_detection_prefers_appearance_then_falls_back_to_objects(rng):
    g, dq, dm, T = constellation_graph(rng)
    far = {k: rng.uniform(-3, 3, 3) for k in range(4)}
    anchors = {0: far, 50: {k + 100: v for k, v in far.items()}}  # no shared landmarks
    (lc,) = detect_loop_closures(g, [dq], [dm], anchors)
    assert lc.source == Source.OBJECT and np.abs(lc.relative_pose - T).max() < 1e-6
    anchors = {0: far, 50: {k: se3.transform_points(T, v[None])[0] for k, v in far.items()}}
    (lc,) = detect_loop_closures(g, [dq], [dm], anchors)
    assert lc.source == Source.APPEARANCE and np.abs(lc.relative_pose - T).max() < 1e-6


def test_closure_csv_round_trip(rng):
    g, dq, dm, _ = constellation_graph(rng)
    lc = register_objects(g, dq, dm, rng=rng)
    (back,) = closures_from_csv(closures_to_csv([lc]))
    assert (back.query_kf, back.match_kf, back.inliers, back.source) == (50, 0, lc.inliers, lc.source)
    assert np.array_equal(back.relative_pose, lc.relative_pose)


def test_config_validation():
    with pytest.raises(ValueError):
        LoopClosureConfig(min_radius=6.0).validate()
    with pytest.raises(ValueError):
        LoopClosureConfig(object_min_inliers=2).validate()
