"""Per-label Euclidean clustering of surface points into object nodes."""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..scene_graph import Layer, ObjectAttrs, SceneGraph


def euclidean_clusters(points: np.ndarray, eps: float) -> np.ndarray:
    """Connected components of the eps-ball graph; returns a component label per point."""
    n = len(points)
    if n == 0:
        return np.zeros(0, np.int64)
    pairs = cKDTree(points).query_pairs(eps, output_type="ndarray")
    m = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else \
        coo_matrix((n, n))
    _, lab = connected_components(m, directed=False)
    return lab.astype(np.int64)


def object_attrs_from_points(label: int, positions: np.ndarray, members) -> ObjectAttrs:
    return ObjectAttrs(label, positions.mean(axis=0), positions.min(axis=0), positions.max(axis=0),
                       frozenset(members))


def _overlap(a: ObjectAttrs, centroid, bmin, bmax) -> bool:
    inside_a = bool(np.all(centroid >= a.bbox_min) and np.all(centroid <= a.bbox_max))
    inside_b = bool(np.all(a.centroid >= bmin) and np.all(a.centroid <= bmax))
    return inside_a or inside_b


class ObjectTracker:
    """Keeps object nodes in a scene graph consistent with their member surface points."""

    def __init__(self, graph: SceneGraph, eps: float, min_points: int = 1):
        self.graph = graph
        self.eps = float(eps)
        self.min_points = int(min_points)
        self.owner: dict = {}  # surface point id -> object id

    def _positions(self, ids) -> np.ndarray:
        return np.array([self.graph.attrs(i).position for i in ids])

    def _refresh(self, oid: int) -> None:
        g = self.graph
        members = sorted(g.attrs(oid).members)
        if not members:
            g.remove_node(oid)
            return
        g.update_attrs(oid, object_attrs_from_points(g.attrs(oid).label, self._positions(members), members))

    def _detach(self, pid: int, oid: int) -> None:
        a = self.graph.attrs(oid)
        self.graph.update_attrs(oid, a.replace(members=a.members - {pid}))
        self.graph.remove_edge(pid, oid)

    def update(self, point_ids) -> list:
        """Cluster the given surface points per label and merge clusters into objects.

        Returns the ids of objects created or modified.
        """
        g = self.graph
        point_ids = sorted(point_ids)
        by_label: dict = {}
        for p in point_ids:
            by_label.setdefault(g.attrs(p).label, []).append(p)
        touched = set()
        for label in sorted(by_label):
            ids = np.array(by_label[label])
            pos = self._positions(ids)
            comp = euclidean_clusters(pos, self.eps)
            for c in np.unique(comp):
                sel = ids[comp == c]
                if len(sel) < self.min_points:
                    continue
                cpos = pos[comp == c]
                centroid, bmin, bmax = cpos.mean(0), cpos.min(0), cpos.max(0)
                hits = {self.owner[p] for p in sel.tolist() if p in self.owner and self.owner[p] in g
                        and g.attrs(self.owner[p]).label == label}
                for oid in g.objects():
                    a = g.attrs(oid)
                    if a.label == label and oid not in hits and _overlap(a, centroid, bmin, bmax):
                        hits.add(oid)
                if hits:
                    keep = min(hits)
                    for other in sorted(hits - {keep}):
                        self._absorb(keep, other)
                else:
                    keep = g.add_node(Layer.OBJECTS, object_attrs_from_points(label, cpos, sel.tolist()))
                self._assign(keep, sel.tolist())
                touched.add(keep)
        touched = {o for o in touched if o in g}
        for oid in sorted(touched):
            self._refresh(oid)
        return sorted(o for o in touched if o in g)

    def _assign(self, oid: int, pids) -> None:
        g = self.graph
        a = g.attrs(oid)
        new = set(a.members)
        for p in pids:
            prev = self.owner.get(p)
            if prev is not None and prev != oid and prev in g:
                self._detach(p, prev)
                if not g.attrs(prev).members:
                    g.remove_node(prev)
                else:
                    self._refresh(prev)
            self.owner[p] = oid
            new.add(p)
            g.add_edge(p, oid)
        g.update_attrs(oid, a.replace(members=frozenset(new)))

    def _absorb(self, keep: int, drop: int) -> None:
        g = self.graph
        ka, da = g.attrs(keep), g.attrs(drop)
        for p in da.members:
            self.owner[p] = keep
        g.merge_nodes(keep, drop, ka.replace(members=ka.members | da.members))


def extract_objects(graph: SceneGraph, point_ids, eps: float, tracker: ObjectTracker | None = None) -> list:
    """Functional entry point: cluster `point_ids` and merge into `graph`'s objects."""
    tracker = tracker or ObjectTracker(graph, eps)
    return tracker.update(point_ids)
