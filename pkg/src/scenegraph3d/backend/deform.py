"""Carry optimized deformation-graph poses back into the scene graph, then merge duplicates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .. import se3
from ..frontend.objects import object_attrs_from_points
from ..rooms import RoomConfig, segment_rooms
from ..scene_graph import Layer, ObjectAttrs, SceneGraph
from .deformation import DeformationGraph


@dataclass
class Interpolator:
    """Blend of the k nearest control-point motions, weights (1 - d / d_(k+1))^2."""

    rest: np.ndarray  # (n, 3) control positions before optimization
    motion: np.ndarray  # (n, 4, 4) optimized pose times inverse rest pose
    k: int = 4

    @classmethod
    def from_graph(cls, dg: DeformationGraph, optimized: np.ndarray, k: int = 4) -> "Interpolator":
        idx = dg.nodes_of("m")
        rest = dg.poses[idx]
        motion = np.array([optimized[i] @ se3.inv(dg.poses[i]) for i in idx]).reshape(-1, 4, 4)
        return cls(rest[:, :3, 3].reshape(-1, 3), motion, k)

    def __call__(self, pts):
        """Deformed points and a flag per point that fell back to a single control point."""
        pts = np.asarray(pts, float).reshape(-1, 3)
        n = len(self.rest)
        flagged = np.zeros(len(pts), bool)
        if n == 0 or len(pts) == 0:
            return pts.copy(), flagged
        if n == 1:
            return se3.transform_points(self.motion[0], pts), np.ones(len(pts), bool)
        k = min(self.k, n - 1)
        d, nn = cKDTree(self.rest).query(pts, k + 1)
        d = d.reshape(len(pts), k + 1)
        nn = nn.reshape(len(pts), k + 1)
        dmax = d[:, k:k + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = (1.0 - d[:, :k] / dmax) ** 2
        w = np.nan_to_num(w)
        s = w.sum(1)
        flagged = s <= 1e-12
        w[flagged] = 0.0
        w[flagged, 0] = 1.0
        w /= w.sum(1, keepdims=True)
        M = np.einsum("pk,pkab->pab", w, self.motion[nn[:, :k]])
        out = np.einsum("pab,pb->pa", M[:, :3, :3], pts) + M[:, :3, 3]
        return out, flagged


@dataclass
class InterpolationReport:
    flagged_points: list = field(default_factory=list)


def interpolate(g: SceneGraph, dg: DeformationGraph, optimized: np.ndarray, k: int = 4) -> InterpolationReport:
    """Deform `g` in place: mesh and objects by blending, agents and places from their optimized poses."""
    interp = Interpolator.from_graph(dg, optimized, k)
    report = InterpolationReport()
    mesh = g.nodes(Layer.MESH)
    if mesh and len(interp.rest):
        P = np.array([g.attrs(m).position for m in mesh])
        Q, flag = interp(P)
        for m, q in zip(mesh, Q):
            g.update_attrs(m, g.attrs(m).replace(position=q))
        report.flagged_points = [m for m, f in zip(mesh, flag) if f]
    for o in g.objects():
        a = g.attrs(o)
        members = [m for m in a.members if m in g]
        if members:
            pos = np.array([g.attrs(m).position for m in members])
            g.update_attrs(o, object_attrs_from_points(a.label, pos, a.members))
        elif len(interp.rest):
            c, _ = interp(a.centroid)
            shift = c[0] - a.centroid
            g.update_attrs(o, ObjectAttrs(a.label, c[0], a.bbox_min + shift, a.bbox_max + shift, a.members))
    for i, kind in enumerate(dg.kinds):
        key = dg.keys[i]
        if kind == "a" and key in g:
            g.update_attrs(key, g.attrs(key).replace(pose=optimized[i]))
        elif kind == "p" and key in g:
            g.update_attrs(key, g.attrs(key).replace(position=optimized[i][:3, 3]))
    return report


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        lo, hi = min(ra, rb), max(ra, rb)
        self.parent[hi] = lo
        return True


@dataclass
class ReconcileReport:
    place_pairs: list = field(default_factory=list)  # (a, b) pairs whose union caused a merge
    place_merges: dict = field(default_factory=dict)  # dropped -> surviving place
    object_merges: dict = field(default_factory=dict)  # dropped -> surviving object
    rooms: object = None


def merge_places(g: SceneGraph, threshold: float = 0.4, report: ReconcileReport | None = None) -> ReconcileReport:
    report = report or ReconcileReport()
    places = g.nodes(Layer.PLACES)
    if len(places) < 2:
        return report
    P = np.array([g.attrs(p).position for p in places])
    uf = _UnionFind(places)
    pairs = sorted((places[i], places[j]) for i, j in cKDTree(P).query_pairs(threshold, eps=0.0)
                   if np.linalg.norm(P[i] - P[j]) < threshold)
    for a, b in pairs:
        if uf.union(a, b):
            report.place_pairs.append((a, b))
    for p in sorted(places, reverse=True):
        root = uf.find(p)
        if root != p:
            report.place_merges[p] = root
            g.merge_nodes(root, p)
    return report


def _objects_overlap(a: ObjectAttrs, b: ObjectAttrs) -> bool:
    return a.label == b.label and (a.contains(b.centroid) or b.contains(a.centroid))


def merge_objects(g: SceneGraph, report: ReconcileReport | None = None) -> ReconcileReport:
    """Same-label objects with a centroid inside the other's box merge, repeated to a fixpoint."""
    report = report or ReconcileReport()
    changed = True
    while changed:
        changed = False
        objs = g.objects()
        for i, a in enumerate(objs):
            for b in objs[i + 1:]:
                aa, bb = g.attrs(a), g.attrs(b)
                if not _objects_overlap(aa, bb):
                    continue
                members = aa.members | bb.members
                live = [m for m in sorted(members) if m in g]
                if live:
                    pos = np.array([g.attrs(m).position for m in live])
                    merged = object_attrs_from_points(aa.label, pos, members)
                else:
                    lo = np.minimum(aa.bbox_min, bb.bbox_min)
                    hi = np.maximum(aa.bbox_max, bb.bbox_max)
                    merged = ObjectAttrs(aa.label, (lo + hi) / 2, lo, hi, members)
                g.merge_nodes(a, b, merged)
                report.object_merges[b] = a
                changed = True
                break
            if changed:
                break
    return report


def reconcile(g: SceneGraph, place_threshold: float = 0.4, room_cfg: RoomConfig | None = None,
              rebuild_rooms: bool = True) -> ReconcileReport:
    """Merge places closer than the threshold and overlapping objects, then redo the rooms (in place)."""
    report = merge_places(g, place_threshold)
    merge_objects(g, report)
    if rebuild_rooms:
        report.rooms = segment_rooms(g, room_cfg)
    return report


def export_tum(poses, timestamps=None) -> str:
    """One line per pose: timestamp tx ty tz qx qy qz qw."""
    lines = []
    for k, T in enumerate(poses):
        ts = float(k if timestamps is None else timestamps[k])
        lines.append(" ".join(repr(float(v)) for v in [ts] + se3.pose_to_tum(T)))
    return "\n".join(lines) + ("\n" if lines else "")


def import_tum(text: str):
    poses, stamps = [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 8:
            raise ValueError(f"expected 8 values per line, got {len(vals)}")
        stamps.append(vals[0])
        poses.append(se3.tum_to_pose(vals[1:]))
    return stamps, poses
