"""Random inputs shared by unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from conftest import obj, place
from scenegraph3d import se3
from scenegraph3d.backend.deformation import AA, DeformationGraph
from scenegraph3d.loop_closure import HierarchicalDescriptor
from scenegraph3d.scene_graph import AgentAttrs, Layer, LayeredGraph, ObjectAttrs, SceneGraph
from scenegraph3d.tree_decomposition import Heuristic, td_heuristic


def random_hierarchy(rng: np.random.Generator, max_nodes: int = 200) -> LayeredGraph:
    """Layered graph satisfying the hierarchy conditions.

    Every node below the top picks one parent one layer up (a few stay parentless);
    intra-layer edges only join siblings or two parentless nodes.
    """
    n_layers = int(rng.integers(1, 5))
    total = int(rng.integers(n_layers, max_nodes + 1))
    sizes = np.maximum(1, rng.multinomial(total - n_layers, np.ones(n_layers) / n_layers) + 1)
    sizes = np.sort(sizes)[::-1]  # wide bottom, narrow top
    ranks, edges = {}, []
    layer_nodes = []
    nid = 0
    for r, s in enumerate(sizes):
        layer_nodes.append(list(range(nid, nid + s)))
        for v in layer_nodes[-1]:
            ranks[v] = r
        nid += s
    parent = {}
    for r in range(len(sizes) - 1):
        ups = layer_nodes[r + 1]
        for v in layer_nodes[r]:
            if rng.random() < 0.05:
                continue
            p = ups[int(rng.integers(len(ups)))]
            parent[v] = p
            edges.append((v, p))
    p_edge = float(rng.uniform(0.05, 0.6))
    for r, nodes in enumerate(layer_nodes):
        groups: dict = {}
        for v in nodes:
            groups.setdefault(parent.get(v), []).append(v)
        for members in groups.values():
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    if rng.random() < p_edge * min(1.0, 6.0 / len(members)):
                        edges.append((a, b))
    return LayeredGraph.build(ranks, edges)


def concatenation_width_bound(lg: LayeredGraph, heuristic=Heuristic.MIN_DEGREE) -> int:
    """Right-hand side of the concatenation bound: top-layer (and parentless) widths, child widths + 1."""
    top = lg.top_rank
    best = -1
    for r in range(top, -1, -1):
        roots = lg.nodes_at(r) if r == top else [v for v in lg.nodes_at(r) if not lg.parents(v)]
        if roots:
            best = max(best, td_heuristic(lg.induced(roots), heuristic).width())
    for v in lg.rank:
        kids = lg.children(v) if lg.rank[v] > 0 else set()
        if kids:
            best = max(best, td_heuristic(lg.induced(kids), heuristic).width() + 1)
    return best


def random_problem(rng, n=6, extra=4, noise=0.05, w=(3.0, 5.0)):
    """Poses, edges with noisy measurements, as a deformation graph plus the raw pieces."""
    gt = [np.eye(4)] + [se3.random_pose(rng, 2.0) for _ in range(n - 1)]
    pairs = [(i, i + 1) for i in range(n - 1)]
    while len(pairs) < n - 1 + extra:
        i, j = sorted(rng.choice(n, 2, replace=False).tolist())
        if (i, j) not in pairs:
            pairs.append((i, j))
    dg = DeformationGraph(np.array([gt[0]] + [T @ se3.exp_se3(rng.normal(0, 0.2, 6)) for T in gt[1:]]),
                          ["a"] * n, list(range(n)))
    for i, j in pairs:
        E = se3.inv(gt[i]) @ gt[j] @ se3.exp_se3(rng.normal(0, noise, 6))
        dg.add_edge(i, j, AA, w[0], w[1], measurement=E)
    return dg


def random_post_graph(rng, n_places=60, n_objects=20):
    g = SceneGraph()
    ps = [g.add_node(Layer.PLACES, place(rng.uniform(0, 4, 3), float(rng.uniform(0.3, 1.5)))) for _ in range(n_places)]
    for _ in range(2 * n_places):
        i, j = rng.choice(n_places, 2, replace=False)
        g.add_edge(ps[i], ps[j])
    for _ in range(n_objects):
        c = rng.uniform(0, 4, 3)
        h = rng.uniform(0.1, 0.6, 3)
        o = g.add_node(Layer.OBJECTS, ObjectAttrs(int(rng.integers(10, 13)), c, c - h, c + h))
        g.add_edge(o, ps[int(rng.integers(n_places))])
    return g


def constellation_graph(rng, n=10, clutter=0, noise=0.0):
    """Two agents seeing the same objects; the query copy is offset by a known transform."""
    g = SceneGraph()
    Tm, Tq = se3.random_pose(rng, 3.0), se3.random_pose(rng, 3.0)
    T_true = se3.random_pose(rng, 2.0)
    local = rng.uniform(-3, 3, (n, 3))
    labels = rng.integers(10, 13, n)
    m_ids, q_ids = [], []
    for p, lab in zip(local, labels):
        m_ids.append(g.add_node(Layer.OBJECTS, obj(int(lab), se3.transform_points(Tm, p[None])[0])))
    for p, lab in zip(se3.transform_points(T_true, local), labels):
        c = se3.transform_points(Tq, p[None])[0] + rng.normal(0, noise, 3)
        q_ids.append(g.add_node(Layer.OBJECTS, obj(int(lab), c)))
    for _ in range(clutter):
        q_ids.append(g.add_node(Layer.OBJECTS, obj(int(rng.integers(10, 13)),
                                                   se3.transform_points(Tq, rng.uniform(-3, 3, (1, 3)))[0])))
    am = g.add_node(Layer.OBJECTS, AgentAttrs(Tm, 0))
    aq = g.add_node(Layer.OBJECTS, AgentAttrs(Tq, 50))
    box = (np.zeros(3), np.zeros(3))
    dm = HierarchicalDescriptor(am, 0, {}, np.zeros(1), np.zeros(1), frozenset(m_ids), frozenset(), 3.0, box)
    dq = HierarchicalDescriptor(aq, 50, {}, np.zeros(1), np.zeros(1), frozenset(q_ids), frozenset(), 3.0, box)
    return g, dq, dm, T_true
