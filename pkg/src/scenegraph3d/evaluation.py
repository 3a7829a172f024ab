"""Metrics against synthetic ground truth: objects, places, rooms, trajectory, descriptors."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from . import se3
from .frontend.esdf import compute_esdf
from .frontend.gvd import extract_gvd
from .scene_graph import Layer, SceneGraph
from .voxels import NEIGHBORS_26, VoxelGrid


class EvaluationError(ValueError):
    pass


def object_metrics(est, gt, dist_threshold: float = 0.5):
    """(% found, % correct) for lists of (label, position) pairs.

    Found: GT objects with a same-label estimate within the threshold. Correct:
    estimates with a same-label GT object within the threshold. Percentages are
    None when the corresponding side is empty.
    """
    if dist_threshold <= 0:
        raise EvaluationError("distance threshold must be positive")

    def hits(src, dst):
        n = 0
        for lab, p in src:
            p = np.asarray(p, float)
            if any(l2 == lab and np.linalg.norm(np.asarray(q, float) - p) <= dist_threshold for l2, q in dst):
                n += 1
        return n

    found = 100.0 * hits(gt, est) / len(gt) if gt else None
    correct = 100.0 * hits(est, gt) / len(est) if est else None
    return found, correct


def graph_objects(g: SceneGraph) -> list:
    return [(g.attrs(o).label, g.attrs(o).centroid) for o in g.objects()]


def world_objects(world) -> list:
    return [(o.label, o.center) for o in world.objects]


def gt_gvd_centers(grid: VoxelGrid, theta_min: float = 0.0, n_b: int = 2) -> np.ndarray:
    """Centers of the GVD voxels of a fully known grid."""
    esdf = compute_esdf(grid.occupied, grid.voxel_size)
    gv = extract_gvd(esdf.site, esdf.sq_dist, ~grid.occupied, theta_min, n_b)
    return grid.flat_centers(np.flatnonzero(gv.mask.reshape(-1)))


def place_position_error(est_positions, gvd_centers) -> float:
    """Mean distance from each place to the nearest GVD voxel center."""
    gvd_centers = np.asarray(gvd_centers, float).reshape(-1, 3)
    if len(gvd_centers) == 0:
        raise EvaluationError("ground-truth GVD is empty")
    est = np.asarray(est_positions, float).reshape(-1, 3)
    if len(est) == 0:
        return float("nan")
    d, _ = cKDTree(gvd_centers).query(est)
    return float(d.mean())


# -- rooms ----------------------------------------------------------------------

def room_pr_labels(est_labels, gt_labels):
    """Precision and recall of two voxel labelings (-1 = no room).

    Precision averages, over estimated rooms, the largest fraction of the room
    covered by one GT room; recall swaps the roles.
    """
    e = np.asarray(est_labels).reshape(-1)
    g = np.asarray(gt_labels).reshape(-1)
    if e.shape != g.shape:
        raise EvaluationError("label arrays differ in shape")
    eu = np.unique(e[e >= 0])
    gu = np.unique(g[g >= 0])
    if len(eu) == 0 or len(gu) == 0:
        raise EvaluationError("no estimated or no ground-truth rooms")
    ei = np.searchsorted(eu, e)
    gi = np.searchsorted(gu, g)
    both = (e >= 0) & (g >= 0)
    overlap = np.zeros((len(eu), len(gu)), np.int64)
    np.add.at(overlap, (ei[both], gi[both]), 1)
    e_size = np.bincount(ei[e >= 0], minlength=len(eu))
    g_size = np.bincount(gi[g >= 0], minlength=len(gu))
    precision = float(np.mean(overlap.max(1) / e_size))
    recall = float(np.mean(overlap.max(0) / g_size))
    return precision, recall


def room_pr(est_rooms, gt_rooms):
    """Precision and recall for rooms given as collections of voxel-index sets."""
    est_rooms = [set(r) for r in est_rooms if r]
    gt_rooms = [set(r) for r in gt_rooms if r]
    if not est_rooms or not gt_rooms:
        raise EvaluationError("no estimated or no ground-truth rooms")
    prec = np.mean([max(len(e & g) for g in gt_rooms) / len(e) for e in est_rooms])
    rec = np.mean([max(len(e & g) for e in est_rooms) / len(g) for g in gt_rooms])
    return float(prec), float(rec)


def gt_room_labels(world, grid: VoxelGrid) -> np.ndarray:
    from .world_synth import room_voxel_sets
    lab = np.full(grid.size, -1, np.int64)
    for rid, vox in room_voxel_sets(world, grid).items():
        lab[np.fromiter(vox, np.int64, len(vox))] = rid
    return lab


def estimated_room_labels(g: SceneGraph, grid: VoxelGrid) -> np.ndarray:
    """Free voxels of `grid` labeled by estimated room (pseudo-rooms excluded).

    Each place's sphere is rasterized; a voxel inside several spheres goes to the
    place where it lies deepest. The remaining free voxels take the label of the
    nearest labeled voxel through free space (breadth-first).
    """
    free = ~grid.occupied.reshape(-1)
    room_of = {}
    for r in g.nodes(Layer.ROOMS):
        a = g.attrs(r)
        if a.pseudo:
            continue
        for p in a.members:
            room_of[p] = r
    lab = np.full(grid.size, -1, np.int64)
    depth = np.full(grid.size, np.inf)
    vs, dims = grid.voxel_size, np.array(grid.dims)
    for p in sorted(room_of):
        pa = g.attrs(p)
        c, rad = pa.position, pa.distance
        lo = np.maximum(np.floor((c - rad - grid.origin) / vs).astype(int), 0)
        hi = np.minimum(np.floor((c + rad - grid.origin) / vs).astype(int) + 1, dims)
        if np.any(hi <= lo):
            continue
        ii = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij"), -1).reshape(-1, 3)
        d = np.linalg.norm(grid.center_of(ii) - c, axis=1) - rad
        flat = grid.flat(ii)
        take = (d <= 0) & free[flat] & (d < depth[flat])
        depth[flat[take]] = d[take]
        lab[flat[take]] = room_of[p]
    return _bfs_fill(lab, free, grid.dims)


@nb.njit(cache=True)
def _bfs_kernel(lab, free, nx, ny, nz, nbrs):
    n = lab.shape[0]
    queue = np.empty(n, np.int64)
    head = tail = 0
    for v in range(n):
        if lab[v] >= 0:
            queue[tail] = v
            tail += 1
    while head < tail:
        v = queue[head]
        head += 1
        x = v // (ny * nz)
        y = (v // nz) % ny
        z = v % nz
        for k in range(nbrs.shape[0]):
            a, b, c = x + nbrs[k, 0], y + nbrs[k, 1], z + nbrs[k, 2]
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                w = (a * ny + b) * nz + c
                if free[w] and lab[w] < 0:
                    lab[w] = lab[v]
                    queue[tail] = w
                    tail += 1


def _bfs_fill(lab, free, dims) -> np.ndarray:
    lab = lab.copy()
    _bfs_kernel(lab, np.ascontiguousarray(free), dims[0], dims[1], dims[2], NEIGHBORS_26)
    return lab


# -- trajectory -------------------------------------------------------------------

def ate(est, gt) -> float:
    """Translational RMSE after aligning the first estimated pose onto the first GT pose.

    The anchor pose is left out of the mean since alignment zeroes it.
    """
    est = [np.asarray(p, float) for p in est]
    gt = [np.asarray(p, float) for p in gt]
    if len(est) != len(gt):
        raise EvaluationError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) < 2:
        return 0.0
    align = gt[0] @ se3.inv(est[0])
    err = [np.linalg.norm((align @ e)[:3, 3] - g[:3, 3]) for e, g in zip(est[1:], gt[1:])]
    return float(np.sqrt(np.mean(np.square(err))))


# -- descriptors --------------------------------------------------------------------

def box_iou(a, b) -> float:
    (amin, amax), (bmin, bmax) = a, b
    inter = np.prod(np.clip(np.minimum(amax, bmax) - np.maximum(amin, bmin), 0, None))
    va, vb = np.prod(np.asarray(amax) - amin), np.prod(np.asarray(bmax) - bmin)
    union = va + vb - inter
    return float(inter / union) if union > 0 else 0.0


def descriptor_p_at_k(hists, boxes, k: int, iou_threshold: float = 0.5) -> float:
    """Percent of the k best-scored other descriptors whose boxes overlap the query enough.

    `hists` are the per-descriptor vectors compared by score 1 - L1/2, `boxes`
    the (min, max) corners of each descriptor's sub-graph.
    """
    n = len(hists)
    if n < k + 1:
        raise EvaluationError(f"need at least {k + 1} descriptors")
    H = np.asarray(hists, float)
    hits = []
    for q in range(n):
        score = 1.0 - 0.5 * np.abs(H - H[q]).sum(1)
        score[q] = -np.inf
        top = np.argsort(-score, kind="stable")[:k]
        hits.append(np.mean([box_iou(boxes[q], boxes[t]) >= iou_threshold for t in top]))
    return 100.0 * float(np.mean(hits))


@dataclass
class MetricsReport:
    object_found_pct: float | None = None
    object_correct_pct: float | None = None
    place_position_error_mean: float | None = None
    room_precision: float | None = None
    room_recall: float | None = None
    ate_rmse: float | None = None
    descriptor_p_at_k: dict = field(default_factory=dict)
    memory_counts: dict = field(default_factory=dict)
    runtimes_ms: dict = field(default_factory=dict)

    def validate(self) -> None:
        for v in (self.object_found_pct, self.object_correct_pct):
            if v is not None and not 0 <= v <= 100:
                raise EvaluationError("percentages must lie in [0, 100]")
        for v in (self.room_precision, self.room_recall):
            if v is not None and not 0 <= v <= 1:
                raise EvaluationError("precision and recall must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def flat(self) -> dict:
        row = {}
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for kk, vv in sorted(v.items()):
                    row[f"{k}.{kk}"] = vv
            else:
                row[k] = v
        return row

    def to_csv(self) -> str:
        row = self.flat()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()
