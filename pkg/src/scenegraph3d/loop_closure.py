"""Hierarchical place/object/appearance descriptors, top-down matching and geometric verification."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import se3
from .scene_graph import Layer, SceneGraph


class DescriptorDeferred(RuntimeError):
    """The agent has no parent place yet."""


class RegistrationError(RuntimeError):
    pass


class Level(str, Enum):
    APPEARANCE = "appearance"
    OBJECT = "object"


class Source(str, Enum):
    APPEARANCE = "appearance_registration"
    OBJECT = "object_registration"


@dataclass
class LoopClosureConfig:
    tau_place: float = 0.5
    tau_object: float = 0.3
    tau_agent: float = 0.01
    temporal_mask: int = 10  # most recent keyframes excluded from matching
    descriptor_delay: int = 10  # keyframes to wait before describing an agent's surroundings
    max_per_query: int = 3  # verified closures kept per query
    min_radius: float = 3.0
    max_radius: float = 5.0
    radius_step: float = 0.5
    min_nodes: int = 10
    place_bin: float = 0.25
    place_max: float = 5.0
    num_labels: int = 64
    noise_bound: float = 0.1
    object_min_inliers: int = 5
    appearance_min_inliers: int = 3
    ransac_iterations: int = 300
    seed: int = 0

    def validate(self) -> None:
        for name in ("tau_place", "tau_object", "tau_agent"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("need 0 < min_radius <= max_radius")
        if self.radius_step <= 0 or self.place_bin <= 0 or self.place_max <= 0:
            raise ValueError("radius step and place bins must be positive")
        if self.descriptor_delay < 0 or self.temporal_mask < 0 or self.max_per_query < 1:
            raise ValueError("descriptor delay and temporal mask must be non-negative, max_per_query positive")
        if self.noise_bound <= 0:
            raise ValueError("noise bound must be positive")
        if self.object_min_inliers < 3 or self.appearance_min_inliers < 3:
            raise ValueError("registration needs at least 3 inliers")
        if self.temporal_mask < 0:
            raise ValueError("temporal mask must be non-negative")


@dataclass
class HierarchicalDescriptor:
    agent_node: int
    keyframe: int
    appearance: dict  # landmark id -> normalized weight
    object_hist: np.ndarray
    place_hist: np.ndarray
    object_ids: frozenset
    place_ids: frozenset
    radius: float
    bbox: tuple  # (min corner, max corner) of the sub-graph, odometric frame
    objects_empty: bool = False

    def vector(self) -> np.ndarray:
        """Place and object histograms stacked, scaled to unit mass when both are present."""
        v = np.concatenate([self.place_hist, self.object_hist])
        s = v.sum()
        return v / s if s > 0 else v


def _normalize(h: np.ndarray) -> np.ndarray:
    s = h.sum()
    return h / s if s > 0 else h


def build_descriptor(g: SceneGraph, agent: int, cfg: LoopClosureConfig | None = None) -> HierarchicalDescriptor:
    """Statistics of the objects and places around the agent's parent place.

    The radius grows from min_radius in radius_step increments until the
    sub-graph holds min_nodes nodes or max_radius is reached.
    """
    cfg = cfg or LoopClosureConfig()
    parents = g.neighbors(agent, Layer.PLACES)
    if not parents:
        raise DescriptorDeferred(f"agent {agent} has no parent place")
    center = g.attrs(min(parents)).position
    places = g.nodes(Layer.PLACES)
    objects = g.objects()
    P = np.array([g.attrs(p).position for p in places]).reshape(-1, 3)
    O = np.array([g.attrs(o).centroid for o in objects]).reshape(-1, 3)
    dp = np.linalg.norm(P - center, axis=1)
    do = np.linalg.norm(O - center, axis=1)
    r = cfg.min_radius
    while True:
        n = int((dp <= r).sum() + (do <= r).sum())
        if n >= cfg.min_nodes or r >= cfg.max_radius:
            break
        r = min(r + cfg.radius_step, cfg.max_radius)
    sel_p = [places[i] for i in np.flatnonzero(dp <= r)]
    sel_o = [objects[i] for i in np.flatnonzero(do <= r)]

    oh = np.zeros(cfg.num_labels)
    for o in sel_o:
        oh[min(g.attrs(o).label, cfg.num_labels - 1)] += 1
    nbins = int(round(cfg.place_max / cfg.place_bin))
    ph = np.zeros(nbins)
    for p in sel_p:
        ph[min(int(g.attrs(p).distance // cfg.place_bin), nbins - 1)] += 1

    pts = [g.attrs(p).position for p in sel_p] + [g.attrs(o).centroid for o in sel_o]
    pts = np.array(pts) if pts else center[None]
    return HierarchicalDescriptor(
        agent, g.attrs(agent).keyframe, dict(g.attrs(agent).appearance), _normalize(oh), _normalize(ph),
        frozenset(sel_o), frozenset(sel_p), r, (pts.min(0), pts.max(0)), objects_empty=not sel_o)


def l1(a, b) -> float:
    if isinstance(a, dict):
        keys = set(a) | set(b)
        return float(sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys))
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())


@dataclass
class LoopClosureCandidate:
    query: int
    match: int
    query_kf: int
    match_kf: int
    level: Level
    scores: dict


def match_top_down(query: HierarchicalDescriptor, database, cfg: LoopClosureConfig | None = None) -> list:
    """Gate on places, then objects, then appearance; a candidate needs at least the object level."""
    cfg = cfg or LoopClosureConfig()
    out = []
    for d in database:
        if d.keyframe > query.keyframe - cfg.temporal_mask or d.keyframe >= query.keyframe:
            continue
        s_place = l1(query.place_hist, d.place_hist)
        if s_place > cfg.tau_place:
            continue
        s_obj = l1(query.object_hist, d.object_hist)
        if s_obj > cfg.tau_object:
            continue
        scores = {"place": s_place, "object": s_obj}
        s_app = l1(query.appearance, d.appearance)
        scores["appearance"] = s_app
        level = Level.APPEARANCE if s_app <= cfg.tau_agent else Level.OBJECT
        out.append(LoopClosureCandidate(query.agent_node, d.agent_node, query.keyframe, d.keyframe, level, scores))
    return out


# -- registration -----------------------------------------------------------------

def rigid_fit(src, dst, weights=None) -> np.ndarray:
    """Least-squares rigid transform T with T(src) ~ dst (SVD of the cross-covariance)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    cs, cd = w @ src, w @ dst
    H = (src - cs).T @ ((dst - cd) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return se3.make(R, cd - R @ cs)


def _count_inliers(T, src, dst, pairs, bound, one_to_one=False):
    res = np.linalg.norm(se3.transform_points(T, src[pairs[:, 0]]) - dst[pairs[:, 1]], axis=1)
    ok = np.flatnonzero(res <= bound)
    if one_to_one:
        return ok
    # one partner per point on either side, smallest residual first
    used_s, used_d, keep = set(), set(), []
    for k in ok[np.argsort(res[ok], kind="stable")]:
        a, b = pairs[k]
        if a not in used_s and b not in used_d:
            used_s.add(a)
            used_d.add(b)
            keep.append(k)
    return np.array(sorted(keep), dtype=np.int64)


def _compatibility(src, dst, pairs, noise_bound):
    """Pairs i, j are compatible when they use distinct points and preserve their distance."""
    s, d = src[pairs[:, 0]], dst[pairs[:, 1]]
    ds = np.linalg.norm(s[:, None] - s[None], axis=-1)
    dd = np.linalg.norm(d[:, None] - d[None], axis=-1)
    ok = np.abs(ds - dd) <= 2 * noise_bound
    ok &= pairs[:, 0][:, None] != pairs[:, 0][None]
    ok &= pairs[:, 1][:, None] != pairs[:, 1][None]
    return ok


def ransac_register(src, dst, pairs, noise_bound: float, min_inliers: int, iterations: int = 300,
                    rng=None, confidence: float = 0.999):
    """Robust rigid registration over putative correspondences `pairs` (indices into src, dst).

    Minimal samples are drawn so that their three pairs are mutually
    distance-compatible, which keeps the hypothesis count small under heavy
    clutter. Sampling stops early once the best inlier ratio so far makes an
    all-inlier sample likely at the given confidence. Returns (T, inlier pair
    indices). Raises RegistrationError below min_inliers.
    """
    src = np.asarray(src, float).reshape(-1, 3)
    dst = np.asarray(dst, float).reshape(-1, 3)
    pairs = np.asarray(pairs, np.int64).reshape(-1, 2)
    if len(pairs) < 3:
        raise RegistrationError("fewer than 3 correspondences")
    rng = rng if rng is not None else np.random.default_rng(0)
    one_to_one = len(np.unique(pairs[:, 0])) == len(pairs) and len(np.unique(pairs[:, 1])) == len(pairs)
    compat = _compatibility(src, dst, pairs, noise_bound)
    seeds = np.flatnonzero(compat.sum(1) >= 2)
    best = np.zeros(0, np.int64)
    best_T = np.eye(4)
    needed = iterations
    it = 0
    while len(seeds) and it < min(iterations, needed):
        it += 1
        i = seeds[rng.integers(len(seeds))]
        js = np.flatnonzero(compat[i])
        j = js[rng.integers(len(js))]
        ks = np.flatnonzero(compat[i] & compat[j])
        if not len(ks):
            continue
        k = ks[rng.integers(len(ks))]
        sample = np.array([i, j, k])
        s, d = src[pairs[sample, 0]], dst[pairs[sample, 1]]
        if np.linalg.norm(np.cross(s[1] - s[0], s[2] - s[0])) < 1e-6:
            continue
        T = rigid_fit(s, d)
        inl = _count_inliers(T, src, dst, pairs, noise_bound, one_to_one)
        if len(inl) > len(best):
            best, best_T = inl, T
            p_good = (len(best) / len(pairs)) ** 3
            if p_good >= 1.0:
                needed = 0
            elif p_good > 0:
                needed = int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - p_good)))
    if len(best) < min_inliers:
        raise RegistrationError(f"{len(best)} inliers, need {min_inliers}")
    for _ in range(3):
        T = rigid_fit(src[pairs[best, 0]], dst[pairs[best, 1]])
        inl = _count_inliers(T, src, dst, pairs, noise_bound, one_to_one)
        if len(inl) < len(best):
            break
        best, best_T = inl, T
    return best_T, best


@dataclass
class LoopClosure:
    query: int
    match: int
    query_kf: int
    match_kf: int
    relative_pose: np.ndarray  # maps the match agent frame into the query agent frame
    inliers: int
    source: Source


def register_objects(g: SceneGraph, query: HierarchicalDescriptor, match: HierarchicalDescriptor,
                     cfg: LoopClosureConfig | None = None, rng=None) -> LoopClosure:
    """Register same-label object centroids of the two sub-graphs, each in its agent's frame.

    A node that appears in both sub-graphs is not paired with itself: that pair
    only restates the current estimate.
    """
    cfg = cfg or LoopClosureConfig()
    qo, mo = sorted(query.object_ids), sorted(match.object_ids)
    if len(qo) < cfg.object_min_inliers or len(mo) < cfg.object_min_inliers:
        raise RegistrationError("not enough objects")
    Tq, Tm = g.attrs(query.agent_node).pose, g.attrs(match.agent_node).pose
    src = se3.transform_points(se3.inv(Tm), np.array([g.attrs(o).centroid for o in mo]))
    dst = se3.transform_points(se3.inv(Tq), np.array([g.attrs(o).centroid for o in qo]))
    pairs = [(i, j) for i, a in enumerate(mo) for j, b in enumerate(qo)
             if a != b and g.attrs(a).label == g.attrs(b).label]
    T, inl = ransac_register(src, dst, pairs, cfg.noise_bound, cfg.object_min_inliers,
                             cfg.ransac_iterations, rng)
    return LoopClosure(query.agent_node, match.agent_node, query.keyframe, match.keyframe, T, len(inl),
                       Source.OBJECT)


def register_appearance(query_anchors: dict, match_anchors: dict, cfg: LoopClosureConfig | None = None,
                        rng=None, ids=(None, None, -1, -1)) -> LoopClosure:
    """Register landmark anchor points seen from both keyframes (sensor frames)."""
    cfg = cfg or LoopClosureConfig()
    shared = sorted(set(query_anchors) & set(match_anchors))
    if not shared:
        raise RegistrationError("no shared landmarks")
    src = np.array([match_anchors[k] for k in shared])
    dst = np.array([query_anchors[k] for k in shared])
    pairs = np.stack([np.arange(len(shared))] * 2, axis=1)
    T, inl = ransac_register(src, dst, pairs, cfg.noise_bound, cfg.appearance_min_inliers,
                             cfg.ransac_iterations, rng)
    q, m, qkf, mkf = ids
    return LoopClosure(q, m, qkf, mkf, T, len(inl), Source.APPEARANCE)


class DescriptorDatabase:
    """Append-only store of descriptors, one per keyframe."""

    def __init__(self):
        self.items: list = []
        self._kfs: set = set()

    def add(self, d: HierarchicalDescriptor) -> None:
        if d.keyframe in self._kfs:
            raise ValueError(f"keyframe {d.keyframe} already stored")
        self.items.append(d)
        self._kfs.add(d.keyframe)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(list(self.items))


def verify(g: SceneGraph, cand: LoopClosureCandidate, descs: dict, anchors: dict,
           cfg: LoopClosureConfig | None = None, rng=None) -> LoopClosure | None:
    """Bottom-up verification: landmark anchors first, then objects; None when both fail."""
    cfg = cfg or LoopClosureConfig()
    qa, ma = anchors.get(cand.query_kf, {}), anchors.get(cand.match_kf, {})
    try:
        return register_appearance(qa, ma, cfg, rng, (cand.query, cand.match, cand.query_kf, cand.match_kf))
    except RegistrationError:
        pass
    try:
        return register_objects(g, descs[cand.query_kf], descs[cand.match_kf], cfg, rng)
    except RegistrationError:
        return None


def detect_loop_closures(g: SceneGraph, queries, database, anchors: dict,
                         cfg: LoopClosureConfig | None = None, max_per_query: int | None = None) -> list:
    """Match each query descriptor against the database and keep verified closures."""
    cfg = cfg or LoopClosureConfig()
    max_per_query = cfg.max_per_query if max_per_query is None else max_per_query
    rng = np.random.default_rng(cfg.seed)
    descs = {d.keyframe: d for d in database}
    out = []
    for q in queries:
        descs.setdefault(q.keyframe, q)
        cands = match_top_down(q, database, cfg)
        cands.sort(key=lambda c: (c.level != Level.APPEARANCE, c.scores["appearance"],
                                  c.scores["object"], c.scores["place"], c.match_kf))
        found = 0
        for c in cands:
            lc = verify(g, c, descs, anchors, cfg, rng)
            if lc is not None:
                out.append(lc)
                found += 1
                if found >= max_per_query:
                    break
    return out


def closures_to_csv(closures) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_kf", "match_kf"] + [f"T{r}{c}" for r in range(3) for c in range(4)] + ["inliers", "source"])
    for lc in closures:
        w.writerow([lc.query_kf, lc.match_kf] + [repr(float(x)) for x in lc.relative_pose[:3].reshape(-1)]
                   + [lc.inliers, lc.source.value])
    return buf.getvalue()


def closures_from_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        T = np.eye(4)
        T[:3] = np.array([float(r[f"T{a}{b}"]) for a in range(3) for b in range(4)]).reshape(3, 4)
        out.append(LoopClosure(None, None, int(r["query_kf"]), int(r["match_kf"]), T, int(r["inliers"]),
                               Source(r["source"])))
    return out
