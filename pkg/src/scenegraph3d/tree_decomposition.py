"""Tree decompositions of plain and hierarchical graphs, treewidth bounds, H-trees.

Graphs are accepted as dict-of-sets adjacency, SceneGraph, LayeredGraph or a
networkx graph. Node ids must be mutually orderable (ties break on the smallest).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .scene_graph import HierarchyError, LayeredGraph, SceneGraph, validate_hierarchy


class Heuristic(str, Enum):
    MIN_DEGREE = "min_degree"
    MIN_FILL = "min_fill"


@dataclass
class TreeDecomposition:
    bags: dict  # bag id -> frozenset of graph nodes
    tree_edges: set = field(default_factory=set)  # (bag id, bag id) with a < b

    def width(self) -> int:
        return max((len(b) for b in self.bags.values()), default=0) - 1

    def adjacency(self) -> dict:
        adj = {b: set() for b in self.bags}
        for a, b in self.tree_edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    @property
    def root(self):
        return min(self.bags)

    def to_dict(self) -> dict:
        return {"bags": [[b, sorted(self.bags[b])] for b in sorted(self.bags)],
                "tree_edges": sorted([list(e) for e in self.tree_edges]),
                "width": self.width()}


def width(td: TreeDecomposition) -> int:
    return td.width()


def as_adjacency(graph) -> dict:
    if isinstance(graph, SceneGraph):
        return graph.adjacency()
    if isinstance(graph, LayeredGraph):
        return {k: set(v) for k, v in graph.adj.items()}
    if isinstance(graph, dict):
        adj = {k: set(v) for k, v in graph.items()}
        for k, vs in list(adj.items()):
            for v in vs:
                adj.setdefault(v, set()).add(k)
            adj[k].discard(k)
        return adj
    if hasattr(graph, "adj") and hasattr(graph, "nodes"):  # networkx
        return {n: set(graph.adj[n]) - {n} for n in graph.nodes}
    raise TypeError(f"unsupported graph type {type(graph).__name__}")


def _fill_in(adj: dict, v) -> int:
    nb = list(adj[v])
    missing = 0
    for i in range(len(nb)):
        ai = adj[nb[i]]
        for j in range(i + 1, len(nb)):
            if nb[j] not in ai:
                missing += 1
    return missing


def elimination_order(graph, heuristic=Heuristic.MIN_DEGREE) -> list:
    return _eliminate(as_adjacency(graph), Heuristic(heuristic))[0]


def _eliminate(adj: dict, heuristic: Heuristic):
    adj = {k: set(v) for k, v in adj.items()}
    use_fill = heuristic == Heuristic.MIN_FILL

    def key(v):
        return _fill_in(adj, v) if use_fill else len(adj[v])

    keys = {v: key(v) for v in adj}
    order, cliques = [], []
    while keys:
        v = min(keys, key=lambda u: (keys[u], u))
        nb = adj[v]
        cliques.append(frozenset(nb | {v}))
        order.append(v)
        touched = set(nb)
        nbl = list(nb)
        for i, a in enumerate(nbl):
            adj[a].discard(v)
            for b in nbl[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
        if use_fill:
            for a in nbl:
                touched |= adj[a]
        del adj[v]
        del keys[v]
        for u in touched:
            if u in keys:
                keys[u] = key(u)
    return order, cliques


def td_from_order(graph, order: list) -> TreeDecomposition:
    """Tree decomposition induced by an elimination order (bags = elimination cliques)."""
    adj = {k: set(v) for k, v in as_adjacency(graph).items()}
    cliques = []
    for v in order:
        nb = adj[v]
        cliques.append(frozenset(nb | {v}))
        nbl = list(nb)
        for i, a in enumerate(nbl):
            adj[a].discard(v)
            for b in nbl[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
        del adj[v]
    return _assemble(order, cliques)


def _assemble(order: list, cliques: list) -> TreeDecomposition:
    if not order:
        return TreeDecomposition({0: frozenset()}, set())
    pos = {v: i for i, v in enumerate(order)}
    bags = {i: c for i, c in enumerate(cliques)}
    edges = set()
    n = len(order)
    for i, v in enumerate(order):
        later = [pos[u] for u in cliques[i] if u != v]
        if later:
            j = min(later)
        elif i + 1 < n:
            j = i + 1  # isolated at elimination time: chain to keep a single tree
        else:
            continue
        edges.add((i, j))
    return TreeDecomposition(bags, edges)


def td_heuristic(graph, heuristic=Heuristic.MIN_DEGREE) -> TreeDecomposition:
    order, cliques = _eliminate(as_adjacency(graph), Heuristic(heuristic))
    return _assemble(order, cliques)


def treewidth_upper_bound(graph) -> int:
    adj = as_adjacency(graph)
    return min(td_heuristic(adj, Heuristic.MIN_DEGREE).width(),
               td_heuristic(adj, Heuristic.MIN_FILL).width())


def _as_layered(graph, layers=None) -> LayeredGraph:
    if isinstance(graph, SceneGraph):
        return graph.layered_view(layers)
    if isinstance(graph, LayeredGraph):
        return graph
    raise TypeError("hierarchical decomposition needs a SceneGraph or LayeredGraph")


def td_hierarchical(graph, layers=None, heuristic=Heuristic.MIN_DEGREE) -> TreeDecomposition:
    """Concatenate per-node decompositions of children, top layer first."""
    lg = _as_layered(graph, layers)
    report = validate_hierarchy(lg)
    if not report.ok:
        raise HierarchyError(report)
    if not lg.rank:
        return TreeDecomposition({0: frozenset()}, set())
    top = lg.top_rank

    # nodes below the top layer without a parent are decomposed alongside the top layer
    roots_by_rank = {top: lg.nodes_at(top)}
    for r in range(top - 1, -1, -1):
        orphans = [n for n in lg.nodes_at(r) if not lg.parents(n)]
        if orphans:
            oset = set(orphans)
            for n in orphans:
                if any(lg.rank[m] == r and m not in oset for m in lg.adj[n]):
                    raise ValueError(f"node {n} has no parent but shares an edge with a parented sibling")
            roots_by_rank[r] = orphans

    bags: dict = {}
    edges: set = set()
    where: dict = {}  # node -> bag ids containing it, ascending

    def splice(sub: TreeDecomposition, extra=None):
        offset = len(bags)
        for b in sorted(sub.bags):
            members = sub.bags[b] | ({extra} if extra is not None else frozenset())
            bid = offset + b
            bags[bid] = frozenset(members)
            for n in members:
                where.setdefault(n, []).append(bid)
        for a, b in sub.tree_edges:
            edges.add((offset + a, offset + b))
        return offset + sub.root

    for r in sorted(roots_by_rank, reverse=True):
        first = splice(td_heuristic(lg.induced(roots_by_rank[r]), heuristic))
        if first != 0:
            edges.add((0, first))

    for r in range(top, 0, -1):
        for v in lg.nodes_at(r):
            kids = lg.children(v)
            if not kids:
                continue
            sub = td_heuristic(lg.induced(kids), heuristic)
            b = where[v][0]
            b_prime = splice(sub, extra=v)
            edges.add((min(b, b_prime), max(b, b_prime)))
    return TreeDecomposition(bags, {(min(a, b), max(a, b)) for a, b in edges})


@dataclass
class ValidationReport:
    is_tree: bool
    bags_in_graph: bool
    edges_covered: bool
    bags_connected: bool
    nodes_covered: bool
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.is_tree and self.bags_in_graph and self.edges_covered and self.bags_connected and self.nodes_covered


def _connected(nodes: set, adj: dict) -> bool:
    if not nodes:
        return True
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w in nodes and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(nodes)


def validate_td(graph, td: TreeDecomposition) -> ValidationReport:
    adj = as_adjacency(graph)
    details = []
    tadj = {b: set() for b in td.bags}
    ok_edges = True
    for a, b in td.tree_edges:
        if a not in tadj or b not in tadj or a == b:
            ok_edges = False
            continue
        tadj[a].add(b)
        tadj[b].add(a)
    c1 = ok_edges and len(td.tree_edges) == len(td.bags) - 1 and _connected(set(td.bags), tadj)
    if not c1:
        details.append("bag graph is not a tree")
    V = set(adj)
    c2 = all(bag <= V for bag in td.bags.values())
    if not c2:
        details.append("a bag holds nodes outside the graph")
    node_bags: dict = {}
    for b, bag in td.bags.items():
        for n in bag:
            node_bags.setdefault(n, set()).add(b)
    c3 = True
    for u in adj:
        for v in adj[u]:
            if u < v and not (node_bags.get(u, set()) & node_bags.get(v, set())):
                c3 = False
                details.append(f"edge ({u}, {v}) not covered")
    c4 = True
    for n, bs in node_bags.items():
        if not _connected(bs, tadj):
            c4 = False
            details.append(f"bags of node {n} are not connected")
    missing = V - set(node_bags)
    c5 = not missing
    if missing:
        details.append(f"nodes without a bag: {sorted(missing)[:10]}")
    return ValidationReport(c1, c2, c3, c4, c5, details)


def reduce_td(td: TreeDecomposition) -> TreeDecomposition:
    """Contract tree edges whose one bag is contained in the other."""
    bags = dict(td.bags)
    adj = td.adjacency()
    changed = True
    while changed:
        changed = False
        for a in sorted(bags):
            for b in sorted(adj[a]):
                if bags[a] <= bags[b]:
                    for c in adj[a]:
                        if c != b:
                            adj[c].discard(a)
                            adj[c].add(b)
                            adj[b].add(c)
                    adj[b].discard(a)
                    del adj[a], bags[a]
                    changed = True
                    break
            if changed:
                break
    edges = {(min(a, b), max(a, b)) for a in adj for b in adj[a]}
    return TreeDecomposition(bags, edges)


# -- H-tree --------------------------------------------------------------------

@dataclass
class HNode:
    kind: str  # "clique" or "leaf"
    members: frozenset


@dataclass
class HTree:
    nodes: dict = field(default_factory=dict)
    tree_edges: set = field(default_factory=set)
    leaf_map: dict = field(default_factory=dict)

    def _add(self, members) -> int:
        hid = len(self.nodes)
        kind = "leaf" if len(members) == 1 else "clique"
        self.nodes[hid] = HNode(kind, frozenset(members))
        if kind == "leaf":
            self.leaf_map.setdefault(next(iter(members)), set()).add(hid)
        return hid

    def _link(self, a: int, b: int) -> None:
        self.tree_edges.add((min(a, b), max(a, b)))

    def leaves(self) -> list:
        return [h for h, n in self.nodes.items() if n.kind == "leaf"]

    def to_dict(self) -> dict:
        return {"nodes": [[h, self.nodes[h].kind, sorted(self.nodes[h].members)] for h in sorted(self.nodes)],
                "tree_edges": sorted([list(e) for e in self.tree_edges])}


def _decompose_bag(lg: LayeredGraph, members: frozenset) -> TreeDecomposition:
    ranks = {lg.rank[n] for n in members}
    if len(ranks) == 1:
        return reduce_td(td_heuristic(lg.induced(members)))
    sub = LayeredGraph({n: lg.adj[n] & members for n in members}, {n: lg.rank[n] for n in members})
    return reduce_td(td_hierarchical(sub))


def _splice_td(ht: HTree, td: TreeDecomposition) -> dict:
    ids = {b: ht._add(td.bags[b]) for b in sorted(td.bags)}
    for a, b in td.tree_edges:
        ht._link(ids[a], ids[b])
    return ids


def _expand(ht: HTree, lg: LayeredGraph, hid: int) -> None:
    members = ht.nodes[hid].members
    if len(members) <= 1:
        return
    sub = _decompose_bag(lg, members)
    if len(sub.bags) == 1:
        for n in sorted(members):
            ht._link(hid, ht._add({n}))
        return
    ids = _splice_td(ht, sub)
    ht._link(hid, ids[sub.root])
    for b in sorted(sub.bags):
        _expand(ht, lg, ids[b])


def build_htree(graph, layers=None) -> HTree:
    """H-tree over an object-room(-building) graph: Alg.-1 bags refined down to singletons.

    Single-layer bags (rooms only / objects only) are refined by a heuristic
    decomposition of the bag; mixed bags (objects plus their room, or rooms plus the
    building) by the hierarchical decomposition of the bag.
    """
    lg = _as_layered(graph, layers)
    ht = HTree()
    if not lg.rank:
        return ht
    top = reduce_td(td_hierarchical(lg))
    ids = _splice_td(ht, top)
    for b in sorted(top.bags):
        _expand(ht, lg, ids[b])
    return ht
