"""Deformation graph over agents, mesh control points and places."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from .. import se3
from ..scene_graph import Layer, SceneGraph


class DeformationGraphError(RuntimeError):
    def __init__(self, components):
        self.components = components
        sizes = sorted((len(c) for c in components), reverse=True)
        super().__init__(f"deformation graph has {len(components)} components (sizes {sizes[:8]})")


# edge kinds
AA, MM, PP, AM, AP, MP, LC = "aa", "mm", "pp", "am", "ap", "mp", "lc"


@dataclass
class DefEdge:
    i: int
    j: int
    measurement: np.ndarray  # 4x4
    kind: str
    w_rot: float  # 0 for position-only edges
    w_trans: float

    @property
    def full_pose(self) -> bool:
        return self.w_rot > 0


@dataclass
class DeformationConfig:
    subsample_resolution: float = 1.0
    edge_radius: float = 1.5
    edge_neighbors: int = 4  # nearest control points always linked, whatever the radius
    omega_t: float = 1.0  # stiffness of the position-only deformation edges
    odom_sigma_rot: float = 1e-3  # rad per step
    odom_sigma_trans: float = 0.01  # m per step
    closure_sigma_rot: float = 0.02
    closure_sigma_trans: float = 0.05

    def validate(self) -> None:
        for k in ("subsample_resolution", "edge_radius", "omega_t", "odom_sigma_rot", "odom_sigma_trans",
                  "closure_sigma_rot", "closure_sigma_trans"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.edge_neighbors < 0:
            raise ValueError("edge_neighbors must be non-negative")


def pose_weights(sigma_rot: float, sigma_trans: float):
    """Weights of the rotation and translation blocks of a full-pose edge.

    A small rotation by angle a moves R - E by sqrt(2)*a in Frobenius norm, hence the 2.
    """
    return 1.0 / (2.0 * sigma_rot ** 2), 1.0 / sigma_trans ** 2


@dataclass
class DeformationGraph:
    poses: np.ndarray  # (n, 4, 4) current estimates
    kinds: list  # "a", "m" or "p" per node
    keys: list  # scene-graph node id (agents, places) or mesh point id (control points)
    edges: list = field(default_factory=list)
    index: dict = field(default_factory=dict)  # (kind, key) -> node index

    @property
    def num_nodes(self) -> int:
        return len(self.kinds)

    def nodes_of(self, kind: str) -> list:
        return [i for i, k in enumerate(self.kinds) if k == kind]

    def edges_of(self, kind: str) -> list:
        return [e for e in self.edges if e.kind == kind]

    def add_node(self, kind: str, key, pose) -> int:
        i = len(self.kinds)
        self.kinds.append(kind)
        self.keys.append(key)
        self.index[(kind, key)] = i
        self.poses = np.concatenate([self.poses, np.asarray(pose, float)[None]], 0)
        return i

    def relative(self, i: int, j: int) -> np.ndarray:
        return se3.inv(self.poses[i]) @ self.poses[j]

    def add_edge(self, i: int, j: int, kind: str, w_rot: float, w_trans: float, measurement=None) -> DefEdge:
        E = self.relative(i, j) if measurement is None else np.asarray(measurement, float)
        if w_rot == 0:
            E = se3.make(np.eye(3), E[:3, 3])
        e = DefEdge(i, j, E, kind, w_rot, w_trans)
        self.edges.append(e)
        return e

    def add_position_edges(self, I, J, kind: str, w_trans: float) -> None:
        """Many position-only edges at once, measured from the current poses."""
        I = np.asarray(I, np.int64)
        J = np.asarray(J, np.int64)
        if len(I) == 0:
            return
        P = self.poses
        Et = np.einsum("mki,mk->mi", P[I, :3, :3], P[J, :3, 3] - P[I, :3, 3])
        E = np.broadcast_to(np.eye(4), (len(I), 4, 4)).copy()
        E[:, :3, 3] = Et
        self.edges.extend(DefEdge(int(i), int(j), e, kind, 0.0, w_trans) for i, j, e in zip(I, J, E))

    def components(self) -> list:
        n = self.num_nodes
        if not self.edges:
            return [[i] for i in range(n)]
        ij = np.array([(e.i, e.j) for e in self.edges])
        A = coo_matrix((np.ones(len(ij)), (ij[:, 0], ij[:, 1])), shape=(n, n))
        k, lab = connected_components(A, directed=False)
        return [np.flatnonzero(lab == c).tolist() for c in range(k)]

    def check_connected(self) -> None:
        comps = self.components()
        if len(comps) > 1:
            raise DeformationGraphError(comps)


def control_points(g: SceneGraph, resolution: float):
    """One mesh point per occupied hash cell (the lowest point id)."""
    pts = g.nodes(Layer.MESH)
    if not pts:
        return [], np.zeros((0, 3))
    P = np.array([g.attrs(p).position for p in pts])
    cells = np.floor(P / resolution).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    first = np.sort(first)
    return [pts[i] for i in first], P[first]


def build_deformation_graph(g: SceneGraph, cfg: DeformationConfig | None = None, grid=None,
                            check: bool = True) -> DeformationGraph:
    """Agents, control points and places with relative measurements taken from the current graph.

    `grid` is (origin, voxel_size, dims) of the map grid that place basis indices
    refer to; without it each place is tied to its nearest control point.
    """
    cfg = cfg or DeformationConfig()
    cfg.validate()
    agents = g.agents()
    if not agents:
        raise ValueError("scene graph has no agent pose")
    dg = DeformationGraph(np.zeros((0, 4, 4)), [], [])
    wr_odom, wt_odom = pose_weights(cfg.odom_sigma_rot, cfg.odom_sigma_trans)
    wt = cfg.omega_t

    poses = [g.attrs(a).pose for a in agents]
    ctrl_ids, ctrl_pos = control_points(g, cfg.subsample_resolution)
    places = g.nodes(Layer.PLACES)
    n_a, n_m = len(agents), len(ctrl_ids)
    all_poses = poses + [se3.make(np.eye(3), p) for p in ctrl_pos] + \
        [se3.make(np.eye(3), g.attrs(p).position) for p in places]
    dg.poses = np.array(all_poses).reshape(-1, 4, 4)
    dg.kinds = ["a"] * n_a + ["m"] * n_m + ["p"] * len(places)
    dg.keys = list(agents) + list(ctrl_ids) + list(places)
    dg.index = {(k, key): i for i, (k, key) in enumerate(zip(dg.kinds, dg.keys))}
    a_idx = {a: i for i, a in enumerate(agents)}
    p_idx = {p: n_a + n_m + i for i, p in enumerate(places)}

    # odometry between consecutive keyframes
    order = sorted(agents, key=lambda a: g.attrs(a).keyframe)
    for a, b in zip(order, order[1:]):
        dg.add_edge(a_idx[a], a_idx[b], AA, wr_odom, wt_odom)

    # control point pairs within the edge radius, one edge per direction so that
    # every control point's rotation enters its own residuals
    if n_m:
        tree = cKDTree(ctrl_pos)
        pairs = tree.query_pairs(cfg.edge_radius, output_type="ndarray").reshape(-1, 2)
        k = min(cfg.edge_neighbors, n_m - 1)
        if k > 0:
            _, nn = tree.query(ctrl_pos, k + 1)
            knn = np.stack([np.repeat(np.arange(n_m), k), nn[:, 1:].reshape(-1)], 1)
            pairs = np.concatenate([pairs, np.sort(knn, 1)])
        pairs = np.unique(pairs, axis=0) + n_a
        both = np.stack([pairs, pairs[:, ::-1]], 1).reshape(-1, 2)
        dg.add_position_edges(both[:, 0], both[:, 1], MM, wt)

    # spanning forest of the places layer, weighted by edge length
    if places:
        P = np.array([g.attrs(p).position for p in places])
        loc = {p: i for i, p in enumerate(places)}
        rows, cols, vals = [], [], []
        for p in places:
            for q in g.neighbors(p, Layer.PLACES):
                if p < q:
                    rows.append(loc[p])
                    cols.append(loc[q])
                    vals.append(max(np.linalg.norm(P[loc[p]] - P[loc[q]]), 1e-9))
        if rows:
            mst = minimum_spanning_tree(coo_matrix((vals, (rows, cols)), shape=(len(places),) * 2)).tocoo()
            for i, j in sorted(zip(mst.row.tolist(), mst.col.tolist())):
                a, b = min(i, j), max(i, j)
                dg.add_edge(p_idx[places[a]], p_idx[places[b]], PP, 0.0, wt)
                dg.add_edge(p_idx[places[b]], p_idx[places[a]], PP, 0.0, wt)

    if n_m:
        # agents anchor the control points they first observed, and places their basis points
        kf_agent = {g.attrs(a).keyframe: a for a in agents}
        for i, cid in enumerate(ctrl_ids):
            a = kf_agent.get(g.attrs(cid).keyframe)
            if a is None:
                a = order[int(np.argmin([np.linalg.norm(g.attrs(x).position - ctrl_pos[i]) for x in order]))]
            dg.add_edge(a_idx[a], n_a + i, AM, 0.0, wt)
        for p in places:
            pa = g.attrs(p)
            targets = set()
            if pa.basis and grid is not None:
                bpos = _basis_positions(grid, pa)
                d, k = tree.query(bpos, distance_upper_bound=1.5 * cfg.subsample_resolution)
                targets = {int(x) for x, dd in zip(np.atleast_1d(k), np.atleast_1d(d)) if np.isfinite(dd)}
            if not targets:
                targets = {int(tree.query(pa.position)[1])}
            for t in sorted(targets):
                dg.add_edge(p_idx[p], n_a + t, MP, 0.0, wt)

    for a in agents:
        for p in g.neighbors(a, Layer.PLACES):
            dg.add_edge(a_idx[a], p_idx[p], AP, 0.0, wt)

    if check:
        dg.check_connected()
    return dg


def _basis_positions(grid, pa):
    origin, vs, dims = grid
    idx = np.stack(np.unravel_index(np.asarray(pa.basis, np.int64), dims), -1)
    return origin + (idx + 0.5) * vs


def add_loop_closures(dg: DeformationGraph, closures, cfg: DeformationConfig | None = None) -> list:
    """Append closures between agent nodes; returns the indices of the new edges."""
    cfg = cfg or DeformationConfig()
    wr, wt = pose_weights(cfg.closure_sigma_rot, cfg.closure_sigma_trans)
    out = []
    for lc in closures:
        i = dg.index[("a", lc.query)]
        j = dg.index[("a", lc.match)]
        out.append(len(dg.edges))
        dg.add_edge(i, j, LC, wr, wt, measurement=lc.relative_pose)
    return out


def agent_poses(dg: DeformationGraph) -> dict:
    return {dg.keys[i]: dg.poses[i].copy() for i in dg.nodes_of("a")}

