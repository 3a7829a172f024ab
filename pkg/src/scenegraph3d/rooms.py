"""Room detection on the places graph by dilation filtration and flood fill."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .scene_graph import BuildingAttrs, Layer, RoomAttrs, SceneGraph


class RoomSegmentationError(ValueError):
    pass


@dataclass
class PlacesGraph:
    """Plain view of the places layer: clearance per node and per edge."""

    node_dist: dict  # node -> d^p
    edge_dist: dict  # (a, b) with a < b -> d^p
    positions: dict = field(default_factory=dict)

    @classmethod
    def from_scene_graph(cls, g: SceneGraph) -> "PlacesGraph":
        nodes = g.nodes(Layer.PLACES)
        nd = {n: g.attrs(n).distance for n in nodes}
        pos = {n: g.attrs(n).position for n in nodes}
        ed = {}
        for n in nodes:
            for m in g.neighbors(n, Layer.PLACES):
                if n < m:
                    d = g.edge_distance(n, m)
                    ed[(n, m)] = min(nd[n], nd[m]) if d is None else d
        return cls(nd, ed, pos)

    def effective_edge(self, a, b) -> float:
        """An edge survives only while both endpoints do."""
        return min(self.edge_dist[(a, b)], self.node_dist[a], self.node_dist[b])

    def adjacency(self) -> dict:
        adj = {n: set() for n in self.node_dist}
        for a, b in self.edge_dist:
            adj[a].add(b)
            adj[b].add(a)
        return adj


def dilated_components(pg: PlacesGraph, delta: float, min_size: int = 1) -> list:
    """Connected components of the sub-graph with clearance >= delta (BFS), largest first."""
    alive = {n for n, d in pg.node_dist.items() if d >= delta}
    adj = {n: [] for n in alive}
    for (a, b) in pg.edge_dist:
        if a in alive and b in alive and pg.effective_edge(a, b) >= delta:
            adj[a].append(b)
            adj[b].append(a)
    seen, comps = set(), []
    for s in sorted(alive):
        if s in seen:
            continue
        comp, stack = {s}, [s]
        seen.add(s)
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        if len(comp) >= min_size:
            comps.append(frozenset(comp))
    comps.sort(key=lambda c: (-len(c), min(c)))
    return comps


@dataclass
class Filtration:
    thresholds: np.ndarray  # ascending
    betti0: np.ndarray  # component count (after size filter) per threshold
    places: PlacesGraph
    min_component_size: int

    def components(self, delta: float) -> list:
        return dilated_components(self.places, delta, self.min_component_size)

    def to_csv(self) -> str:
        rows = ["delta,betti0"] + [f"{t!r},{int(b)}" for t, b in zip(self.thresholds.tolist(), self.betti0.tolist())]
        return "\n".join(rows) + "\n"


def compute_betti_curve(pg: PlacesGraph, d_min: float = 0.5, d_max: float = 1.2,
                        min_component_size: int = 15) -> Filtration:
    """Component counts over the dilation thresholds in one decreasing union-find sweep."""
    if not pg.node_dist:
        raise RoomSegmentationError("places graph is empty")
    if d_max < d_min:
        raise RoomSegmentationError("empty dilation window")
    vals = set(pg.node_dist.values()) | {pg.effective_edge(a, b) for a, b in pg.edge_dist}
    th = sorted({float(np.clip(v, d_min, d_max)) for v in vals} | {float(d_min), float(d_max)})
    th = np.array(th)

    nodes = sorted(pg.node_dist, key=lambda n: -pg.node_dist[n])
    edges = sorted(pg.edge_dist, key=lambda e: -pg.effective_edge(*e))
    parent, size = {}, {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    m = min_component_size
    count = 0
    ni = ei = 0
    betti = np.zeros(len(th), np.int64)
    for k in range(len(th) - 1, -1, -1):
        t = th[k]
        while ni < len(nodes) and pg.node_dist[nodes[ni]] >= t:
            n = nodes[ni]
            parent[n], size[n] = n, 1
            count += 1 >= m
            ni += 1
        while ei < len(edges) and pg.effective_edge(*edges[ei]) >= t:
            a, b = edges[ei]
            ra, rb = find(a), find(b)
            if ra != rb:
                count -= (size[ra] >= m) + (size[rb] >= m)
                if size[ra] < size[rb]:
                    ra, rb = rb, ra
                parent[rb] = ra
                size[ra] += size[rb]
                count += size[ra] >= m
            ei += 1
        betti[k] = count
    return Filtration(th, betti, pg, min_component_size)


@dataclass
class PersistenceIntervals:
    values: set  # distinct component counts seen
    intervals: dict  # count -> list of (d_min, d_max, length)

    def all(self) -> list:
        return sorted((j, a, b, l) for j, iv in self.intervals.items() for a, b, l in iv)


def persistence_intervals(f: Filtration) -> PersistenceIntervals:
    """Maximal runs of constant count over the sorted thresholds.

    A run covering thresholds a..b spans from the previous threshold (exclusive)
    to t_b, so its length is t_b - t_(a-1); the first run measures from t_0.
    """
    th, b = f.thresholds, f.betti0
    out: dict = {}
    a = 0
    for k in range(1, len(th) + 1):
        if k == len(th) or b[k] != b[a]:
            start = th[a - 1] if a > 0 else th[0]
            out.setdefault(int(b[a]), []).append((float(th[a]), float(th[k - 1]), float(th[k - 1] - start)))
            a = k
    return PersistenceIntervals(set(out), out)


@dataclass
class Dilation:
    delta: float
    betti0: int
    interval: tuple  # (d_min, d_max, length)
    seeds: list  # place-node sets


def select_dilation(f: Filtration, alpha: float = 0.5) -> Dilation:
    """Pick the admitted interval with the most components and return its seeds."""
    if not 0.0 <= alpha <= 1.0:
        raise RoomSegmentationError("alpha must lie in [0, 1]")
    pi = persistence_intervals(f)
    cands = [(j, a, b, l) for j, a, b, l in pi.all() if j > 0]
    if not cands:
        raise RoomSegmentationError("no component survives the filtration")
    longest = max(l for *_, l in cands)
    admitted = [c for c in cands if c[3] >= alpha * longest - 1e-12]
    j, a, b, l = min(admitted, key=lambda c: (-c[0], -c[3], c[1]))
    return Dilation(a, j, (a, b, l), f.components(a))


@dataclass
class RoomAssignment:
    delta: float
    seeds: list
    assignment: dict  # place -> room index
    unassigned: list


def flood_fill_assign(pg: PlacesGraph, seeds, delta: float = 0.0) -> RoomAssignment:
    """Grow all seeds at once, always expanding across the edge with the largest clearance."""
    seeds = [frozenset(s) for s in seeds]
    seen = set()
    for s in seeds:
        if seen & s:
            raise RoomSegmentationError("seeds overlap")
        seen |= s
    adj = pg.adjacency()
    assign = {}
    heap = []
    for i, s in enumerate(seeds):
        for n in s:
            assign[n] = i
    for n in sorted(assign):
        for m in adj[n]:
            if m not in assign:
                e = (min(n, m), max(n, m))
                heapq.heappush(heap, (-pg.edge_dist[e], m, n))
    while heap:
        _, m, n = heapq.heappop(heap)
        if m in assign:
            continue
        assign[m] = assign[n]
        for w in adj[m]:
            if w not in assign:
                e = (min(m, w), max(m, w))
                heapq.heappush(heap, (-pg.edge_dist[e], w, m))
    unassigned = sorted(n for n in pg.node_dist if n not in assign)
    return RoomAssignment(delta, seeds, assign, unassigned)


def clear_room_layer(g: SceneGraph) -> None:
    for n in g.nodes(Layer.ROOMS) + g.nodes(Layer.BUILDING):
        g.remove_node(n)


def build_room_layer(g: SceneGraph, ra: RoomAssignment, with_pseudo: bool = True) -> dict:
    """Replace rooms and building in `g`; returns room index -> room node id.

    Places left without a room become singleton pseudo-rooms (flagged).
    """
    members: dict = {}
    for p, r in ra.assignment.items():
        members.setdefault(r, []).append(p)
    same = _existing_rooms(g, members, ra.unassigned if with_pseudo else [])
    if same is not None:
        return same
    clear_room_layer(g)
    room_ids = {}
    for r in sorted(members):
        ps = sorted(members[r])
        c = np.mean([g.attrs(p).position for p in ps], axis=0)
        room_ids[r] = g.add_node(Layer.ROOMS, RoomAttrs(c, None, frozenset(ps)))
    pseudo = {}
    if with_pseudo:
        for p in ra.unassigned:
            pseudo[p] = g.add_node(Layer.ROOMS, RoomAttrs(g.attrs(p).position, None, frozenset([p]), pseudo=True))
    room_of = {p: room_ids[r] for p, r in ra.assignment.items()}
    room_of.update(pseudo)
    for p, rid in room_of.items():
        g.add_edge(p, rid)
    for p in sorted(room_of):
        for q in g.neighbors(p, Layer.PLACES):
            if q in room_of and room_of[q] != room_of[p]:
                g.add_edge(room_of[p], room_of[q])
    real = [room_ids[r] for r in sorted(room_ids)]
    if real or pseudo:
        cents = [g.attrs(r).centroid for r in real] or [g.attrs(r).centroid for r in pseudo.values()]
        b = g.add_node(Layer.BUILDING, BuildingAttrs(np.mean(cents, axis=0)))
        for r in real + list(pseudo.values()):
            g.add_edge(r, b)
    return room_ids


def _existing_rooms(g: SceneGraph, members: dict, unassigned) -> dict | None:
    """Room index -> node id when the current room layer already matches exactly, else None."""
    want = {frozenset(ps): (False, np.mean([g.attrs(p).position for p in sorted(ps)], axis=0))
            for ps in members.values()}
    want.update({frozenset([p]): (True, g.attrs(p).position) for p in unassigned})
    have = {}
    for r in g.nodes(Layer.ROOMS):
        a = g.attrs(r)
        have[a.members] = (a.pseudo, a.centroid, r)
    if set(have) != set(want) or len(have) != g.num_nodes(Layer.ROOMS):
        return None
    for key, (pseudo, c) in want.items():
        hp, hc, _ = have[key]
        if hp != pseudo or not np.array_equal(hc, c):
            return None
    for key, (_, _, r) in have.items():
        if set(g.neighbors(r, Layer.PLACES)) != set(key):
            return None
    return {i: have[frozenset(ps)][2] for i, ps in members.items()}


@dataclass
class RoomConfig:
    d_min: float = 0.5
    d_max: float = 1.2
    min_component_size: int = 15
    alpha: float = 0.5

    def validate(self) -> None:
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if self.min_component_size < 1:
            raise ValueError("min_component_size must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class RoomSegmentation:
    filtration: Filtration
    dilation: Dilation
    assignment: RoomAssignment
    room_ids: dict


def segment_rooms(g: SceneGraph, cfg: RoomConfig | None = None) -> RoomSegmentation | None:
    """Full room pass on `g`'s places; returns None (and leaves no rooms) when nothing is found."""
    cfg = cfg or RoomConfig()
    cfg.validate()
    pg = PlacesGraph.from_scene_graph(g)
    if not pg.node_dist:
        clear_room_layer(g)
        return None
    f = compute_betti_curve(pg, cfg.d_min, cfg.d_max, cfg.min_component_size)
    try:
        dil = select_dilation(f, cfg.alpha)
    except RoomSegmentationError:
        clear_room_layer(g)
        return None
    ra = flood_fill_assign(pg, dil.seeds, dil.delta)
    ids = build_room_layer(g, ra)
    return RoomSegmentation(f, dil, ra, ids)


def object_room_graph(g: SceneGraph) -> SceneGraph:
    """Objects, rooms and building of `g`, each object hung on the room of its nearest place."""
    out = SceneGraph()
    rooms = [r for r in g.nodes(Layer.ROOMS) if not g.attrs(r).pseudo]
    room_map = {}
    for r in rooms:
        out._next_id = r
        room_map[r] = out.add_node(Layer.ROOMS, g.attrs(r))
    for b in g.nodes(Layer.BUILDING):
        out._next_id = b
        out.add_node(Layer.BUILDING, g.attrs(b))
        for r in rooms:
            if g.has_edge(r, b):
                out.add_edge(r, b)
    for r in rooms:
        for q in g.neighbors(r, Layer.ROOMS):
            if q in room_map:
                out.add_edge(r, q)
    obj_room = {}
    for o in g.objects():
        out._next_id = o
        out.add_node(Layer.OBJECTS, g.attrs(o))
        for p in g.neighbors(o, Layer.PLACES):
            rs = [r for r in g.neighbors(p, Layer.ROOMS) if r in room_map]
            if rs:
                obj_room[o] = rs[0]
                out.add_edge(o, rs[0])
                break
    # object-object edges: same room, centroids within 2 m
    objs = sorted(obj_room)
    for i, a in enumerate(objs):
        for b in objs[i + 1:]:
            if obj_room[a] == obj_room[b] and \
                    np.linalg.norm(g.attrs(a).centroid - g.attrs(b).centroid) <= 2.0:
                out.add_edge(a, b)
    out._next_id = g.next_id
    return out
