import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import place
from oracles import betti_by_recount
from scenegraph3d import se3
from scenegraph3d.rooms import (Filtration, PlacesGraph, RoomConfig, RoomSegmentationError, build_room_layer,
                                compute_betti_curve, flood_fill_assign, persistence_intervals, segment_rooms,
                                select_dilation)
from scenegraph3d.scene_graph import Layer, SceneGraph, validate_hierarchy


def chain(n, d=2.0, cut=None, cut_d=0.8):
    nodes = {i: d for i in range(n)}
    edges = {(i, i + 1): (cut_d if i == cut else d) for i in range(n - 1)}
    return PlacesGraph(nodes, edges, {i: np.array([i * 0.3, 0.0, 0.0]) for i in range(n)})


def random_places(rng, n=None):
    n = int(rng.integers(1, 60)) if n is None else n
    nodes = {i: float(rng.uniform(0.2, 1.6)) for i in range(n)}
    edges = {}
    for _ in range(int(rng.integers(0, 2 * n + 1))):
        a, b = sorted(rng.choice(n, 2, replace=n < 2).tolist())
        if a != b:
            edges[(a, b)] = float(rng.uniform(0.2, 1.6))
    return PlacesGraph(nodes, edges)


# -- Betti curve ------------------------------------------------------------------


def test_chain_with_narrow_middle_edge():
    f = compute_betti_curve(chain(30, cut=14), 0.5, 1.2, 15)
    for t, b in zip(f.thresholds, f.betti0):
        assert b == (1 if t <= 0.8 else 2)
    assert 0.8 in f.thresholds.tolist()


def test_all_below_window_gives_zero():
    pg = PlacesGraph({0: 0.2, 1: 0.3}, {(0, 1): 0.2})
    assert not compute_betti_curve(pg, 0.5, 1.2, 1).betti0.any()


def test_empty_places_graph_rejected():
    with pytest.raises(RoomSegmentationError):
        compute_betti_curve(PlacesGraph({}, {}))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6))
def test_union_find_curve_matches_recount(seed, m):
    pg = random_places(np.random.default_rng(seed))
    f = compute_betti_curve(pg, 0.5, 1.2, m)
    for t, b in zip(f.thresholds, f.betti0):
        assert b == betti_by_recount(pg.node_dist, pg.edge_dist, t, m)
        assert len(f.components(t)) == b


def test_thresholds_stay_in_window_and_filtration_is_monotone():
    pg = random_places(np.random.default_rng(11), 40)
    f = compute_betti_curve(pg, 0.5, 1.2, 1)
    assert f.thresholds.min() == 0.5 and f.thresholds.max() == 1.2
    assert np.all(np.diff(f.thresholds) > 0)
    prev = None
    for t in f.thresholds[::-1]:
        nodes = set().union(*f.components(t)) if f.components(t) else set()
        if prev is not None:
            assert prev <= nodes
        prev = nodes


def test_curve_csv():
    csv = compute_betti_curve(chain(30, cut=14), 0.5, 1.2, 15).to_csv()
    assert csv.splitlines()[0] == "delta,betti0" and len(csv.splitlines()) == 4


# -- interval selection ----------------------------------------------------------------


def _filtration(th, betti, n_isolated=5):
    pg = PlacesGraph({i: 2.0 for i in range(n_isolated)}, {})
    return Filtration(np.array(th), np.array(betti), pg, 1)


def test_intervals_partition_the_thresholds():
    pi = persistence_intervals(_filtration([0.5, 0.9, 1.2], [2, 2, 5]))
    assert pi.values == {2, 5}
    assert pi.intervals[2] == [(0.5, 0.9, pytest.approx(0.4))]
    assert pi.intervals[5] == [(1.2, 1.2, pytest.approx(0.3))]


def test_more_components_wins_among_admitted():
    d = select_dilation(_filtration([0.5, 0.9, 1.2], [2, 2, 5]), 0.5)
    assert d.betti0 == 5 and d.delta == 1.2 and len(d.seeds) == 5


def test_alpha_one_takes_the_longest_interval():
    d = select_dilation(_filtration([0.5, 0.9, 1.2], [2, 2, 5]), 1.0)
    assert d.betti0 == 2 and d.delta == 0.5


def test_single_flat_interval():
    d = select_dilation(_filtration([0.5, 0.8, 1.2], [3, 3, 3], 3), 0.5)
    assert d.delta == 0.5 and len(d.seeds) == 3


def test_zero_components_never_selected():
    d = select_dilation(_filtration([0.5, 0.6, 1.2], [1, 0, 0], 1), 0.5)
    assert d.betti0 == 1
    with pytest.raises(RoomSegmentationError):
        select_dilation(_filtration([0.5, 1.2], [0, 0]), 0.5)
    with pytest.raises(RoomSegmentationError):
        select_dilation(_filtration([0.5, 1.2], [1, 1]), 1.5)


def test_tie_on_count_prefers_longer_interval():
    d = select_dilation(_filtration([0.5, 0.6, 0.7, 1.2], [2, 1, 2, 2], 2), 0.0)
    assert d.betti0 == 2 and d.delta == 0.7


# -- flood fill -----------------------------------------------------------------------


def test_single_seed_takes_its_component_and_leaves_the_rest():
    pg = chain(6)
    pg.node_dist[6] = 1.0
    ra = flood_fill_assign(pg, [{0}])
    assert set(ra.assignment) == set(range(6)) and ra.unassigned == [6]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=30, unique=True))
def test_two_seeds_split_at_the_bottleneck(weights):
    n = len(weights) + 1
    pg = PlacesGraph({i: 5.0 for i in range(n)}, {(i, i + 1): w for i, w in enumerate(weights)})
    ra = flood_fill_assign(pg, [{0}, {n - 1}])
    cut = int(np.argmin(weights))
    assert all(ra.assignment[i] == 0 for i in range(cut + 1))
    assert all(ra.assignment[i] == 1 for i in range(cut + 1, n))


def test_overlapping_seeds_rejected():
    with pytest.raises(RoomSegmentationError):
        flood_fill_assign(chain(4), [{0, 1}, {1, 2}])


# -- room layer ---------------------------------------------------------------------------


def two_room_places(offset=np.zeros(3), R=np.eye(3)):
    """Two 5x4 grids of wide places joined by a two-node doorway of low clearance."""
    g = SceneGraph()
    ids = {}

    def add(key, p, d):
        ids[key] = g.add_node(Layer.PLACES, place(R @ np.asarray(p, float) + offset, d))

    for r, x0 in ((0, 0.0), (1, 4.0)):
        for i in range(5):
            for j in range(4):
                add((r, i, j), (x0 + 0.5 * i, 0.5 * j, 1.0), 1.0)
    add("d0", (2.5, 0.75, 1.0), 0.55)
    add("d1", (3.0, 0.75, 1.0), 0.55)
    for r in (0, 1):
        for i in range(5):
            for j in range(4):
                if i < 4:
                    g.add_edge(ids[(r, i, j)], ids[(r, i + 1, j)], 1.0)
                if j < 3:
                    g.add_edge(ids[(r, i, j)], ids[(r, i, j + 1)], 1.0)
    g.add_edge(ids[(0, 4, 1)], ids["d0"], 0.55)
    g.add_edge(ids["d0"], ids["d1"], 0.55)
    g.add_edge(ids["d1"], ids[(1, 0, 1)], 0.55)
    return g, ids


def test_segment_two_rooms():
    g, ids = two_room_places()
    seg = segment_rooms(g, RoomConfig(min_component_size=15))
    assert seg.dilation.betti0 == 2 and seg.dilation.delta == 1.0
    rooms = g.nodes(Layer.ROOMS)
    assert len(rooms) == 2
    assert g.has_edge(*rooms)
    room_of = {p: g.neighbors(p, Layer.ROOMS)[0] for p in g.nodes(Layer.PLACES)}
    assert room_of[ids[(0, 2, 2)]] != room_of[ids[(1, 2, 2)]]
    assert {room_of[ids["d0"]], room_of[ids["d1"]]} <= set(rooms)
    b = g.nodes(Layer.BUILDING)
    assert len(b) == 1
    cents = [g.attrs(r).centroid for r in rooms]
    assert np.allclose(g.attrs(b[0]).centroid, np.mean(cents, axis=0))
    for r in rooms:
        members = g.neighbors(r, Layer.PLACES)
        assert np.allclose(g.attrs(r).centroid, np.mean([g.attrs(p).position for p in members], axis=0))
    rep = validate_hierarchy(g)
    assert not rep.single_parent and not rep.locality
    # the doorway edge joins places of two rooms; that is the only cross-parent edge
    assert [tuple(sorted(g.neighbors(p, Layer.ROOMS)[0] for p in e)) for e in rep.disjoint_children] == \
        [tuple(sorted(rooms))]
    assert validate_hierarchy(g, [Layer.ROOMS, Layer.BUILDING]).ok


def test_assignment_ignores_rigid_motion():
    g, ids = two_room_places()
    R = se3.exp_so3(np.array([0.1, -0.3, 1.2]))
    h, ids2 = two_room_places(np.array([3.0, -7.0, 0.5]), R)
    segment_rooms(g)
    segment_rooms(h)

    def parts(graph, names):
        out = {}
        for k, nid in names.items():
            out.setdefault(graph.neighbors(nid, Layer.ROOMS)[0], set()).add(k)
        return {frozenset(v) for v in out.values()}

    assert parts(g, ids) == parts(h, ids2)


def test_rerun_keeps_room_ids():
    g, _ = two_room_places()
    segment_rooms(g)
    before = g.nodes(Layer.ROOMS)
    segment_rooms(g)
    assert g.nodes(Layer.ROOMS) == before


def test_unseeded_component_becomes_pseudo_room():
    g, _ = two_room_places()
    lone = g.add_node(Layer.PLACES, place((20.0, 0, 0), 0.3))
    segment_rooms(g)
    r = g.neighbors(lone, Layer.ROOMS)
    assert len(r) == 1 and g.attrs(r[0]).pseudo


def test_no_rooms_when_nothing_survives():
    g = SceneGraph()
    g.add_node(Layer.PLACES, place(d=0.1))
    assert segment_rooms(g) is None and not g.nodes(Layer.ROOMS)


def test_build_room_layer_door_edge():
    g = SceneGraph()
    ps = [g.add_node(Layer.PLACES, place((i, 0, 0))) for i in range(4)]
    for a, b in zip(ps, ps[1:]):
        g.add_edge(a, b)
    pg = PlacesGraph.from_scene_graph(g)
    ra = flood_fill_assign(pg, [{ps[0]}, {ps[3]}])
    ids = build_room_layer(g, ra)
    assert len(ids) == 2 and g.has_edge(ids[0], ids[1])
    assert [e for e in g.edges() if g.layer_of(e[0]) == g.layer_of(e[1]) == Layer.ROOMS] == [(ids[0], ids[1])]


def test_room_config_validation():
    with pytest.raises(ValueError):
        RoomConfig(d_min=2.0, d_max=1.0).validate()
    with pytest.raises(ValueError):
        RoomConfig(alpha=-0.1).validate()
