"""Layered scene graph: mesh surrogate, objects/agents, places, rooms, building."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator

import numpy as np


class Layer(IntEnum):
    MESH = 1
    OBJECTS = 2  # objects and agents share this layer
    PLACES = 3
    ROOMS = 4
    BUILDING = 5


class SceneGraphError(Exception):
    pass


class LayerMismatchError(SceneGraphError):
    pass


class LocalityError(SceneGraphError):
    pass


class AttrsError(SceneGraphError):
    pass


def _vec(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


class _Attrs:
    """Value-semantics base for node attributes (arrays compared exactly)."""

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SurfacePoint(_Attrs):
    position: np.ndarray
    label: int
    keyframe: int = -1  # keyframe that first observed the point

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))


@dataclass(frozen=True, eq=False)
class ObjectAttrs(_Attrs):
    label: int
    centroid: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    members: frozenset = frozenset()

    def __post_init__(self):
        for name in ("centroid", "bbox_min", "bbox_max"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))
        tol = 1e-9
        if np.any(self.bbox_min > self.bbox_max + tol):
            raise AttrsError("object bbox_min exceeds bbox_max")
        if np.any(self.centroid < self.bbox_min - tol) or np.any(self.centroid > self.bbox_max + tol):
            raise AttrsError("object centroid outside its bounding box")

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(p >= self.bbox_min) and np.all(p <= self.bbox_max))


@dataclass(frozen=True, eq=False)
class AgentAttrs(_Attrs):
    pose: np.ndarray
    keyframe: int
    appearance: dict = field(default_factory=dict)  # landmark id -> weight

    def __post_init__(self):
        p = np.asarray(self.pose, dtype=float).reshape(4, 4)
        p.setflags(write=False)
        object.__setattr__(self, "pose", p)
        object.__setattr__(self, "appearance", {int(k): float(v) for k, v in self.appearance.items()})

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]


@dataclass(frozen=True, eq=False)
class PlaceAttrs(_Attrs):
    position: np.ndarray
    distance: float
    num_basis: int
    basis: tuple = ()  # flat map-grid indices of the basis voxels
    keyframe: int = -1

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "basis", tuple(int(b) for b in self.basis))
        if not self.distance > 0:
            raise AttrsError("place distance must be positive")
        if self.num_basis < 2:
            raise AttrsError("place needs at least two basis points")


@dataclass(frozen=True, eq=False)
class RoomAttrs(_Attrs):
    centroid: np.ndarray
    label: int | None = None  # None = unknown
    members: frozenset = frozenset()
    pseudo: bool = False  # singleton room made from an unassigned place

    def __post_init__(self):
        object.__setattr__(self, "centroid", _vec(self.centroid))
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))


@dataclass(frozen=True, eq=False)
class BuildingAttrs(_Attrs):
    centroid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centroid", _vec(self.centroid))


ATTR_LAYER = {
    SurfacePoint: Layer.MESH,
    ObjectAttrs: Layer.OBJECTS,
    AgentAttrs: Layer.OBJECTS,
    PlaceAttrs: Layer.PLACES,
    RoomAttrs: Layer.ROOMS,
    BuildingAttrs: Layer.BUILDING,
}

# object-room links skip the places layer by design (object-room graphs)
_SKIP_EDGES = {frozenset((Layer.OBJECTS, Layer.ROOMS))}


def node_position(attrs) -> np.ndarray:
    if isinstance(attrs, (SurfacePoint, PlaceAttrs)):
        return attrs.position
    if isinstance(attrs, AgentAttrs):
        return attrs.pose[:3, 3]
    return attrs.centroid


@dataclass(frozen=True)
class Node:
    id: int
    layer: Layer
    attrs: object


class SceneGraph:
    """Undirected layered graph. Parent/children relations are derived from layers."""

    def __init__(self):
        self._nodes: dict[int, Node] = {}
        self._adj: dict[int, set[int]] = {}
        self._layers: dict[Layer, set[int]] = {l: set() for l in Layer}
        self._edge_dist: dict[tuple[int, int], float] = {}  # optional clearance per edge (places)
        self._next_id = 0

    # -- nodes -------------------------------------------------------------
    def add_node(self, layer, attrs) -> int:
        layer = Layer(layer)
        expected = ATTR_LAYER.get(type(attrs))
        if expected is None or expected != layer:
            raise LayerMismatchError(f"{type(attrs).__name__} cannot live in layer {layer.name}")
        nid = self._next_id
        self._next_id += 1
        self._nodes[nid] = Node(nid, layer, attrs)
        self._adj[nid] = set()
        self._layers[layer].add(nid)
        return nid

    def update_attrs(self, nid: int, attrs) -> None:
        node = self._nodes[nid]
        if ATTR_LAYER.get(type(attrs)) != node.layer:
            raise LayerMismatchError("attrs variant does not match node layer")
        self._nodes[nid] = Node(nid, node.layer, attrs)

    def remove_node(self, nid: int) -> None:
        node = self._nodes.pop(nid)
        for n in self._adj.pop(nid):
            self._adj[n].discard(nid)
            self._edge_dist.pop((min(n, nid), max(n, nid)), None)
        self._layers[node.layer].discard(nid)

    def merge_nodes(self, keep: int, drop: int, attrs=None) -> None:
        """Fold `drop` into `keep`; edges are rerouted and deduplicated."""
        if keep == drop:
            return
        for n in list(self._adj[drop]):
            if n == keep:
                continue
            d = self._edge_dist.get((min(n, drop), max(n, drop)))
            if not self.has_edge(keep, n):
                self._link(keep, n)
            if d is not None:
                key = (min(n, keep), max(n, keep))
                self._edge_dist[key] = max(d, self._edge_dist.get(key, d))
        self.remove_node(drop)
        if attrs is not None:
            self.update_attrs(keep, attrs)

    def __contains__(self, nid) -> bool:
        return nid in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, nid: int) -> Node:
        return self._nodes[nid]

    def attrs(self, nid: int):
        return self._nodes[nid].attrs

    def layer_of(self, nid: int) -> Layer:
        return self._nodes[nid].layer

    def nodes(self, layer=None) -> list[int]:
        if layer is None:
            return sorted(self._nodes)
        return sorted(self._layers[Layer(layer)])

    def num_nodes(self, layer=None) -> int:
        if layer is None:
            return len(self._nodes)
        return len(self._layers[Layer(layer)])

    def agents(self) -> list[int]:
        return [n for n in self.nodes(Layer.OBJECTS) if isinstance(self._nodes[n].attrs, AgentAttrs)]

    def objects(self) -> list[int]:
        return [n for n in self.nodes(Layer.OBJECTS) if isinstance(self._nodes[n].attrs, ObjectAttrs)]

    @property
    def next_id(self) -> int:
        return self._next_id

    # -- edges -------------------------------------------------------------
    def _link(self, a: int, b: int) -> None:
        self._adj[a].add(b)
        self._adj[b].add(a)

    def add_edge(self, a: int, b: int, distance: float | None = None) -> tuple[int, int]:
        if a == b:
            raise SceneGraphError("self-loops are not allowed")
        if a not in self._nodes or b not in self._nodes:
            raise SceneGraphError(f"edge endpoint missing: {a}, {b}")
        la, lb = self._nodes[a].layer, self._nodes[b].layer
        if abs(la - lb) > 1 and frozenset((la, lb)) not in _SKIP_EDGES:
            raise LocalityError(f"edge {a}-{b} skips layers ({la.name} to {lb.name})")
        self._link(a, b)
        key = (min(a, b), max(a, b))
        if distance is not None:
            self._edge_dist[key] = float(distance)
        return key

    def remove_edge(self, a: int, b: int) -> None:
        self._adj[a].discard(b)
        self._adj[b].discard(a)
        self._edge_dist.pop((min(a, b), max(a, b)), None)

    def edge_distance(self, a: int, b: int):
        return self._edge_dist.get((min(a, b), max(a, b)))

    def set_edge_distance(self, a: int, b: int, distance: float) -> None:
        if not self.has_edge(a, b):
            raise SceneGraphError(f"no edge {a}-{b}")
        self._edge_dist[(min(a, b), max(a, b))] = float(distance)

    def has_edge(self, a: int, b: int) -> bool:
        return b in self._adj.get(a, ())

    def neighbors(self, nid: int, layer=None) -> list[int]:
        if layer is None:
            return sorted(self._adj[nid])
        layer = Layer(layer)
        return sorted(n for n in self._adj[nid] if self._nodes[n].layer == layer)

    def degree(self, nid: int) -> int:
        return len(self._adj[nid])

    def edges(self) -> Iterator[tuple[int, int]]:
        for a in sorted(self._adj):
            for b in sorted(self._adj[a]):
                if a < b:
                    yield (a, b)

    def num_edges(self) -> int:
        return sum(len(s) for s in self._adj.values()) // 2

    def parent(self, nid: int):
        """Neighbor one layer up; None if absent. Raises if not unique."""
        layer = self._nodes[nid].layer
        if layer == Layer.BUILDING:
            return None
        ps = self.neighbors(nid, layer + 1)
        if len(ps) > 1:
            raise SceneGraphError(f"node {nid} has {len(ps)} parents")
        return ps[0] if ps else None

    def children(self, nid: int) -> list[int]:
        layer = self._nodes[nid].layer
        if layer == Layer.MESH:
            return []
        return self.neighbors(nid, layer - 1)

    # -- views -------------------------------------------------------------
    def snapshot(self) -> "SceneGraph":
        """Structural copy; attributes are immutable and therefore shared."""
        g = SceneGraph.__new__(SceneGraph)
        g._nodes = dict(self._nodes)
        g._adj = {k: set(v) for k, v in self._adj.items()}
        g._layers = {k: set(v) for k, v in self._layers.items()}
        g._edge_dist = dict(self._edge_dist)
        g._next_id = self._next_id
        return g

    def adjacency(self, nodes: Iterable[int] | None = None) -> dict[int, set[int]]:
        """Induced adjacency (dict of sets) over `nodes` (all nodes by default)."""
        if nodes is None:
            return {k: set(v) for k, v in self._adj.items()}
        keep = set(nodes)
        return {k: self._adj[k] & keep for k in keep}

    def layered_view(self, layers=None) -> "LayeredGraph":
        """Induced sub-graph on `layers`, with layers re-ranked 0..k-1 bottom-up."""
        if layers is None:
            layers = [l for l in Layer if self._layers[l]]
        layers = sorted(Layer(l) for l in layers)
        rank = {}
        for r, l in enumerate(layers):
            for n in self._layers[l]:
                rank[n] = r
        adj = {n: {m for m in self._adj[n] if m in rank} for n in rank}
        return LayeredGraph(adj, rank)

    def __eq__(self, other):
        if not isinstance(other, SceneGraph):
            return NotImplemented
        if self._nodes.keys() != other._nodes.keys():
            return False
        for k, n in self._nodes.items():
            m = other._nodes[k]
            if n.layer != m.layer or n.attrs != m.attrs:
                return False
        return self._adj == other._adj and self._edge_dist == other._edge_dist


@dataclass
class LayeredGraph:
    """Plain adjacency plus a bottom-up layer rank per node."""

    adj: dict
    rank: dict

    @classmethod
    def build(cls, ranks: dict, edges: Iterable[tuple]) -> "LayeredGraph":
        adj = {n: set() for n in ranks}
        for a, b in edges:
            if a == b:
                continue
            adj[a].add(b)
            adj[b].add(a)
        return cls(adj, dict(ranks))

    def nodes_at(self, r: int) -> list:
        return sorted(n for n, k in self.rank.items() if k == r)

    @property
    def top_rank(self) -> int:
        return max(self.rank.values()) if self.rank else -1

    def children(self, n) -> set:
        r = self.rank[n] - 1
        return {m for m in self.adj[n] if self.rank[m] == r}

    def parents(self, n) -> set:
        r = self.rank[n] + 1
        return {m for m in self.adj[n] if self.rank[m] == r}

    def edges(self) -> list[tuple]:
        return sorted((a, b) for a in self.adj for b in self.adj[a] if a < b)

    def induced(self, nodes) -> dict:
        keep = set(nodes)
        return {n: self.adj[n] & keep for n in keep}


@dataclass
class HierarchyReport:
    single_parent: list = field(default_factory=list)
    locality: list = field(default_factory=list)
    disjoint_children: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.single_parent or self.locality or self.disjoint_children)


class HierarchyError(SceneGraphError):
    def __init__(self, report: HierarchyReport):
        super().__init__(
            f"not a hierarchical graph: {len(report.single_parent)} multi-parent nodes, "
            f"{len(report.locality)} layer-skipping edges, "
            f"{len(report.disjoint_children)} edges between children of different parents")
        self.report = report


def validate_hierarchy(graph, layers=None) -> HierarchyReport:
    """Check single-parent, locality and disjoint-children over the chosen layers.

    `graph` is a SceneGraph (optionally restricted to `layers`) or a LayeredGraph.
    """
    lg = graph.layered_view(layers) if isinstance(graph, SceneGraph) else graph
    rep = HierarchyReport()
    parents = {}
    for n in sorted(lg.adj):
        ps = lg.parents(n)
        parents[n] = ps
        if len(ps) > 1:
            rep.single_parent.append(n)
    for a, b in lg.edges():
        ra, rb = lg.rank[a], lg.rank[b]
        if abs(ra - rb) > 1:
            rep.locality.append((a, b))
        elif ra == rb:
            pa, pb = parents[a], parents[b]
            if any(u != v for u in pa for v in pb):
                rep.disjoint_children.append((a, b))
    return rep
