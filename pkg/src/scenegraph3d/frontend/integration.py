"""Per-keyframe frontend: surface integration, objects, ESDF/GVD, places, inter-layer edges."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .. import se3
from ..raycast import carve_free
from ..scene_graph import AgentAttrs, Layer, PlaceAttrs, SceneGraph, SurfacePoint
from ..voxels import OBJECT_LABEL_BASE, VoxelGrid
from .esdf import compute_esdf
from .gvd import extract_gvd
from .objects import ObjectTracker
from .places import GvdGraph, PlaceClusters, cluster_representative, sparsify_places, update_clusters

MAX_LABEL = 64


@nb.njit(cache=True)
def _segment_min(dist, dims, origin, vs, a, b):
    length = np.sqrt(((b - a) ** 2).sum())
    n = max(2, int(np.ceil(length / (0.5 * vs))) + 1)
    best = np.inf
    for k in range(n):
        t = k / (n - 1)
        i = int(np.floor((a[0] + t * (b[0] - a[0]) - origin[0]) / vs))
        j = int(np.floor((a[1] + t * (b[1] - a[1]) - origin[1]) / vs))
        l = int(np.floor((a[2] + t * (b[2] - a[2]) - origin[2]) / vs))
        if 0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= l < dims[2]:
            d = dist[(i * dims[1] + j) * dims[2] + l]
            if d < best:
                best = d
    return best


@dataclass
class FrontendConfig:
    voxel_size: float = 0.1
    window_radius: float = 8.0
    place_resolution: float = 1.0
    theta_min: float = np.pi / 4
    n_b: int = 2
    cluster_eps: float | None = None  # defaults to 2.5 voxels
    min_object_points: int = 1
    max_range: float = 5.0

    def validate(self) -> None:
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if not self.window_radius > 0 or not self.place_resolution > 0 or not self.max_range > 0:
            raise ValueError("window radius, place resolution and range must be positive")
        if self.n_b < 2:
            raise ValueError("n_b must be at least 2")
        if not 0 <= self.theta_min <= np.pi:
            raise ValueError("theta_min must lie in [0, pi]")

    @property
    def eps(self) -> float:
        return self.cluster_eps if self.cluster_eps is not None else 2.5 * self.voxel_size


def connect_interlayer(graph: SceneGraph, node_ids, place_ids=None) -> list:
    """Link each object/agent node to its nearest place (ties: lowest place id).

    Existing place edges of those nodes are replaced. Returns the nodes that
    could not be linked because no place exists.
    """
    node_ids = list(node_ids)
    places = sorted(graph.nodes(Layer.PLACES) if place_ids is None else place_ids)
    if not places:
        return node_ids
    P = np.array([graph.attrs(p).position for p in places])
    for n in node_ids:
        a = graph.attrs(n)
        pos = a.position if isinstance(a, AgentAttrs) else a.centroid
        k = int(np.argmin(((P - pos) ** 2).sum(1)))
        for old in graph.neighbors(n, Layer.PLACES):
            if old != places[k]:
                graph.remove_edge(n, old)
        graph.add_edge(n, places[k])
    return []


@dataclass
class KeyframeResult:
    keyframe: int
    agent: int
    new_points: list
    objects: list
    places_added: list
    places_removed: list
    deferred: list = field(default_factory=list)


class Frontend:
    """Active-window reconstruction of layers 1-3 into a SceneGraph."""

    def __init__(self, origin, dims, config: FrontendConfig | None = None, graph: SceneGraph | None = None):
        self.cfg = config or FrontendConfig()
        self.cfg.validate()
        vs = self.cfg.voxel_size
        self.grid = VoxelGrid.empty(origin, vs, dims)
        self.graph = graph if graph is not None else SceneGraph()
        n = self.grid.size
        self.votes = np.zeros((n, MAX_LABEL), np.int32)
        self.point_of: dict = {}  # flat voxel -> surface point id
        self.dist = np.full(n, np.inf)  # last known clearance per voxel (metres)
        self.gvd = GvdGraph(self.grid.dims, self.grid.origin, vs)
        self.clusters = PlaceClusters(self.cfg.place_resolution)
        self.place_of: dict = {}  # cluster id -> place node id
        self.objects = ObjectTracker(self.graph, self.cfg.eps, self.cfg.min_object_points)
        self.agents: list = []
        self.deferred: set = set()

    @classmethod
    def for_bounds(cls, bounds_min, bounds_max, config: FrontendConfig | None = None, margin: float = 1.0):
        cfg = config or FrontendConfig()
        lo = np.asarray(bounds_min, float) - margin
        hi = np.asarray(bounds_max, float) + margin
        dims = np.ceil((hi - lo) / cfg.voxel_size).astype(int)
        return cls(lo, dims, cfg)

    # -- surface integration ---------------------------------------------------
    def integrate_surface(self, points_world: np.ndarray, labels: np.ndarray, origin: np.ndarray,
                          keyframe: int) -> list:
        g, grid = self.graph, self.grid
        vs = grid.voxel_size
        if len(points_world) == 0:
            return []
        rel = points_world - origin
        norm = np.linalg.norm(rel, axis=1)
        ok = norm > 1e-9
        points_world, labels, rel, norm = points_world[ok], labels[ok], rel[ok], norm[ok]
        dirs = rel / norm[:, None]
        eps = 0.25 * vs
        carve_free(grid.occupied, grid.observed, grid.origin, vs, origin.astype(float),
                   np.ascontiguousarray(points_world - eps * dirs), 1.0)
        ijk = grid.index_of(points_world + eps * dirs)
        inside = grid.in_bounds(ijk)
        ijk, labels = ijk[inside], labels[inside]
        flat = grid.flat(ijk)
        lab = np.clip(labels, 0, MAX_LABEL - 1)
        np.add.at(self.votes, (flat, lab), 1)
        grid.occupied[tuple(ijk.T)] = True
        grid.observed[tuple(ijk.T)] = True
        new = []
        for f in np.unique(flat).tolist():
            best = int(np.argmax(self.votes[f]))
            grid.labels.flat[f] = best
            pid = self.point_of.get(f)
            if pid is None:
                pos = grid.flat_centers(np.array([f]))[0]
                pid = g.add_node(Layer.MESH, SurfacePoint(pos, best, keyframe))
                self.point_of[f] = pid
                new.append(pid)
            elif g.attrs(pid).label != best:
                g.update_attrs(pid, g.attrs(pid).replace(label=best))
        return new

    # -- places ----------------------------------------------------------------
    def _window_box(self, center):
        grid = self.grid
        r = self.cfg.window_radius
        lo = np.maximum(grid.index_of(center - r), 0)
        hi = np.minimum(grid.index_of(center + r) + 1, np.array(grid.dims))
        return lo, hi

    def update_places(self, center: np.ndarray, keyframe: int):
        grid, cfg = self.grid, self.cfg
        vs = grid.voxel_size
        lo, hi = self._window_box(center)
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        occ = grid.occupied[sl]
        esdf = compute_esdf(occ, vs)
        dist = esdf.distance
        cdims = occ.shape
        ii = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij"), -1)
        centers = grid.origin + (ii + 0.5) * vs
        in_sphere = ((centers - center) ** 2).sum(-1) <= cfg.window_radius ** 2
        # obstacles outside the crop cannot be nearer than the crop faces that are not grid faces
        margin = np.full(cdims, np.inf)
        for ax in range(3):
            idx = ii[..., ax]
            if lo[ax] > 0:
                margin = np.minimum(margin, (idx - lo[ax] + 0.5) * vs)
            if hi[ax] < grid.dims[ax]:
                margin = np.minimum(margin, (hi[ax] - idx - 0.5) * vs)
        reliable = (dist <= margin) | occ
        cand = in_sphere & grid.observed[sl] & ~occ & reliable
        gv = extract_gvd(esdf.site, esdf.sq_dist, cand, cfg.theta_min, cfg.n_b)
        # remember clearance for edge sampling
        gflat = grid.flat(ii.reshape(-1, 3))
        rel = reliable.reshape(-1)
        self.dist[gflat[rel]] = dist.reshape(-1)[rel]

        loc = np.flatnonzero(gv.mask.reshape(-1))
        reps = gv.basis[loc]
        valid = reps >= 0
        # basis indices are local to the crop; move them to the map grid
        rg = np.full_like(reps, -1)
        if valid.any():
            rg[valid] = grid.flat(np.stack(np.unravel_index(reps[valid], cdims), -1) + lo)
        region = np.zeros(grid.size, bool)
        # voxels whose clearance the crop cannot settle keep their previous state
        region[gflat[(in_sphere & reliable).reshape(-1)]] = True
        dirty = self.gvd.replace_region(region, gflat[loc], dist.reshape(-1)[loc], rg)
        dissolved = update_clusters(self.gvd, self.clusters, dirty)
        res = sparsify_places(self.gvd, self.clusters)
        return self._sync_places(dissolved, res, keyframe)

    def _sync_places(self, dissolved, res, keyframe):
        g = self.graph
        removed = []
        for cid in sorted(dissolved):
            nid = self.place_of.pop(cid, None)
            if nid is not None and nid in g:
                g.remove_node(nid)
                removed.append(nid)
        for drop, keep in sorted(res.merged.items()):
            a, b = self.place_of.pop(drop, None), self.place_of.get(keep)
            if a is None:
                continue
            if b is None:
                self.place_of[keep] = a
            else:
                lo_id, hi_id = min(a, b), max(a, b)
                g.merge_nodes(lo_id, hi_id)
                self.place_of[keep] = lo_id
                removed.append(hi_id)
        added = []
        for cid in sorted(res.nodes):
            if cid not in self.clusters.members:
                continue
            rep = cluster_representative(self.gvd, self.clusters.members[cid])
            basis = self.gvd.basis_of(rep)
            attrs = PlaceAttrs(self.gvd.center(rep), self.gvd.distance[rep], len(basis), basis, keyframe)
            nid = self.place_of.get(cid)
            if nid is None:
                nid = g.add_node(Layer.PLACES, attrs)
                self.place_of[cid] = nid
                added.append(nid)
            else:
                g.update_attrs(nid, attrs)
        fresh = set(added) | {self.place_of[c] for c in res.nodes if c in self.place_of}
        for a, b in sorted(res.edges):
            na, nb = self.place_of.get(a), self.place_of.get(b)
            if na is None or nb is None or na == nb:
                continue
            if g.has_edge(na, nb) and na not in fresh and nb not in fresh:
                continue
            g.add_edge(na, nb, self.segment_clearance(g.attrs(na).position, g.attrs(nb).position))
        return added, removed

    def segment_clearance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Smallest stored clearance along the straight segment a-b (sampled at half-voxel steps)."""
        grid = self.grid
        v = _segment_min(self.dist, np.array(grid.dims, np.int64), grid.origin, grid.voxel_size,
                         np.asarray(a, float), np.asarray(b, float))
        return v if np.isfinite(v) else 0.0

    # -- keyframes -------------------------------------------------------------
    def integrate_keyframe(self, observation, pose: np.ndarray) -> KeyframeResult:
        g = self.graph
        kf = observation.keyframe
        origin = pose[:3, 3].astype(float)
        pts = se3.transform_points(pose, observation.points)
        new_pts = self.integrate_surface(pts, observation.labels, origin, kf)

        r = self.cfg.window_radius
        window_pts = [p for f, p in self.point_of.items()
                      if g.attrs(p).label >= OBJECT_LABEL_BASE
                      and np.sum((g.attrs(p).position - origin) ** 2) <= r * r]
        objs = self.objects.update(window_pts)

        added, removed = self.update_places(origin, kf)

        bag = {int(i): 1.0 for i in sorted(observation.landmark_ids)}
        tot = sum(bag.values())
        appearance = {k: v / tot for k, v in bag.items()} if tot else {}
        agent = g.add_node(Layer.OBJECTS, AgentAttrs(pose, kf, appearance))
        if self.agents:
            g.add_edge(self.agents[-1], agent)
        self.agents.append(agent)

        near = [n for n in g.objects() if np.sum((g.attrs(n).centroid - origin) ** 2) <= r * r]
        near += [a for a in self.agents if np.sum((g.attrs(a).position - origin) ** 2) <= r * r]
        near += [n for n in self.deferred if n in g and n not in near]
        deferred = connect_interlayer(g, sorted(set(near)))
        self.deferred = set(deferred)
        return KeyframeResult(kf, agent, new_pts, objs, added, removed, deferred)
