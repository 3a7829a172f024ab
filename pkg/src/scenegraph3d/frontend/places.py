"""Sparsification of GVD voxels into place clusters by spatial hashing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..voxels import NEIGHBORS_26
from .gvd import MAX_BASIS


class GvdGraph:
    """GVD voxels of a grid, stored in flat arrays; adjacency is the 26-neighborhood.

    A voxel counts as updated when it is new or its distance changed. Basis points
    are refreshed silently: which of several equidistant obstacles wins a tie
    depends on the window placement and carries no geometric change.
    """

    def __init__(self, dims, origin, voxel_size: float):
        self.dims = tuple(int(d) for d in dims)
        self.origin = np.asarray(origin, float)
        self.voxel_size = float(voxel_size)
        n = int(np.prod(self.dims))
        self.mask = np.zeros(n, bool)
        self.distance = np.zeros(n)
        self.num_basis = np.zeros(n, np.int64)
        self.basis = np.full((n, MAX_BASIS), -1, np.int64)
        self.updated = np.zeros(n, bool)

    def __contains__(self, v) -> bool:
        return bool(self.mask[v])

    def __len__(self) -> int:
        return int(self.mask.sum())

    def members(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def set(self, v: int, distance: float, basis) -> None:
        """Insert or overwrite one voxel (flags it updated when new or changed)."""
        b = [int(x) for x in basis][:MAX_BASIS]
        if len(b) < 2:
            raise ValueError("a GVD voxel needs at least two basis points")
        changed = (not self.mask[v]) or abs(self.distance[v] - distance) > 1e-12
        self.mask[v] = True
        self.distance[v] = distance
        self.num_basis[v] = len(b)
        self.basis[v] = -1
        self.basis[v, :len(b)] = b
        if changed:
            self.updated[v] = True

    def remove(self, v: int) -> None:
        self.mask[v] = False
        self.updated[v] = False

    def basis_of(self, v: int) -> tuple:
        return tuple(int(x) for x in self.basis[v, :self.num_basis[v]])

    def coords(self, vs) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(vs), self.dims), axis=-1)

    def center(self, v) -> np.ndarray:
        return self.origin + (self.coords(v).astype(float) + 0.5) * self.voxel_size

    def neighbor_lists(self, vs) -> list:
        """GVD neighbors of each voxel in `vs` (ascending)."""
        vs = np.asarray(vs, np.int64)
        if len(vs) == 0:
            return []
        c = self.coords(vs)[:, None, :] + NEIGHBORS_26[None]
        ok = np.all((c >= 0) & (c < np.array(self.dims)), axis=-1)
        c = np.where(ok[..., None], c, 0)
        flat = np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.dims)
        ok &= self.mask[flat]
        return [np.sort(flat[i][ok[i]]).tolist() for i in range(len(vs))]

    def neighbors(self, v: int) -> list:
        return self.neighbor_lists([v])[0]

    def replace_region(self, region: np.ndarray, flat, distance, basis) -> np.ndarray:
        """Make the GVD inside boolean `region` equal to the given voxels.

        `basis` is an (n, MAX_BASIS) array padded with -1. Returns the voxels that
        were removed or whose distance changed.
        """
        flat = np.asarray(flat, np.int64)
        distance = np.asarray(distance, float)
        basis = np.asarray(basis, np.int64).reshape(len(flat), -1)
        nb = (basis >= 0).sum(1)
        new_mask = np.zeros_like(self.mask)
        new_mask[flat] = True
        old = self.mask & region
        removed = np.flatnonzero(old & ~new_mask)
        both = old[flat]
        changed = flat[both & (np.abs(self.distance[flat] - distance) > 1e-12)]
        added = flat[~self.mask[flat]]
        self.mask[removed] = False
        self.updated[removed] = False
        self.mask[flat] = True
        self.distance[flat] = distance
        self.num_basis[flat] = nb
        self.basis[flat] = -1
        self.basis[flat, :basis.shape[1]] = basis[:, :MAX_BASIS]
        self.updated[changed] = True
        self.updated[added] = True
        return np.concatenate([removed, changed])

    def updated_voxels(self) -> np.ndarray:
        return np.flatnonzero(self.updated & self.mask)


class PlaceClusters:
    """Map from spatial hash to voxel clusters, with voxel ownership."""

    def __init__(self, resolution: float):
        if not resolution > 0:
            raise ValueError("place resolution must be positive")
        self.resolution = float(resolution)
        self.by_hash: dict = {}  # hash -> list of cluster ids
        self.members: dict = {}  # cluster id -> set of voxels
        self.hash_of: dict = {}  # cluster id -> hash
        self.owner: dict = {}  # voxel -> cluster id
        self._next = 0

    def hashes(self, gvd: GvdGraph, vs) -> list:
        if len(vs) == 0:
            return []
        h = np.floor(gvd.center(np.asarray(vs)) / self.resolution + 1e-9).astype(np.int64)
        return [tuple(r) for r in h.tolist()]

    def new(self, h, v) -> int:
        cid = self._next
        self._next += 1
        self.by_hash.setdefault(h, []).append(cid)
        self.members[cid] = {v}
        self.hash_of[cid] = h
        self.owner[v] = cid
        return cid

    def add(self, cid, v) -> None:
        self.members[cid].add(v)
        self.owner[v] = cid

    def merge(self, a, b) -> tuple:
        """Fold the larger id into the smaller one; returns (survivor, dropped)."""
        keep, drop = min(a, b), max(a, b)
        for v in self.members.pop(drop):
            self.owner[v] = keep
            self.members[keep].add(v)
        h = self.hash_of.pop(drop)
        self.by_hash[h].remove(drop)
        return keep, drop

    def dissolve(self, cid) -> set:
        vox = self.members.pop(cid)
        h = self.hash_of.pop(cid)
        self.by_hash[h].remove(cid)
        if not self.by_hash[h]:
            del self.by_hash[h]
        for v in vox:
            del self.owner[v]
        return vox

    def partition(self) -> set:
        return {frozenset(m) for m in self.members.values()}


@dataclass
class SparsifyResult:
    nodes: set  # cluster ids that are new or changed
    edges: set  # proposed (cluster, cluster) pairs, smaller id first
    merged: dict  # dropped cluster id -> survivor


def sparsify_places(gvd: GvdGraph, clusters: PlaceClusters, resolution: float | None = None,
                    order=None) -> SparsifyResult:
    """Grow hash-cell clusters over the updated GVD voxels and propose edges between them.

    Updated voxels must not already belong to a cluster (see update_clusters).
    `order` optionally fixes the visiting order of updated voxels.
    """
    if resolution is not None and abs(resolution - clusters.resolution) > 1e-12:
        raise ValueError("resolution differs from the cluster map's resolution")
    nodes: set = set()
    edges: set = set()
    merged: dict = {}
    todo = [int(v) for v in (gvd.updated_voxels() if order is None else order)]
    nbrs = gvd.neighbor_lists(todo)
    hashes = clusters.hashes(gvd, todo)
    owner = clusters.owner

    for v, h, nl in zip(todo, hashes, nbrs):
        cid = None
        for c in clusters.by_hash.get(h, ()):
            if any(owner.get(n) == c for n in nl):
                clusters.add(c, v)
                cid = c
                break
        if cid is None:
            cid = clusters.new(h, v)
        nodes.add(cid)
        for n in nl:
            cn = owner.get(n)
            if cn is None:
                continue  # not clustered yet; handled when n is visited
            cv = owner[v]
            if cn == cv:
                continue
            if clusters.hash_of[cn] == h:
                keep, drop = clusters.merge(cv, cn)
                merged[drop] = keep
                nodes.discard(drop)
                nodes.add(keep)
                # edges of the dropped cluster now belong to the survivor
                rerouted = set()
                for a, b in edges:
                    a2 = keep if a == drop else a
                    b2 = keep if b == drop else b
                    if a2 != b2:
                        rerouted.add((min(a2, b2), max(a2, b2)))
                edges = rerouted
            else:
                edges.add((min(cv, cn), max(cv, cn)))
    gvd.updated[np.asarray(todo, np.int64)] = False
    # a dropped id may itself have been folded again later
    for d in list(merged):
        k = merged[d]
        while k in merged:
            k = merged[k]
        merged[d] = k
    return SparsifyResult(nodes, edges, merged)


def update_clusters(gvd: GvdGraph, clusters: PlaceClusters, dirty_voxels) -> set:
    """Dissolve clusters that own any of `dirty_voxels` (removed or changed GVD voxels).

    Surviving voxels of dissolved clusters are flagged updated so that the next
    sparsify_places call regrows them. Returns the dissolved cluster ids.
    """
    dirty = {clusters.owner[int(v)] for v in dirty_voxels if int(v) in clusters.owner}
    for cid in dirty:
        vox = np.fromiter(clusters.dissolve(cid), np.int64)
        keep = vox[gvd.mask[vox]]
        gvd.updated[keep] = True
    return dirty


def apply_gvd_update(gvd: GvdGraph, clusters: PlaceClusters, new_voxels: dict, region=None) -> set:
    """Convenience wrapper: `new_voxels` maps flat index -> (distance, basis)."""
    if region is None:
        region = np.ones_like(gvd.mask)
    elif not isinstance(region, np.ndarray):
        m = np.zeros_like(gvd.mask)
        m[np.fromiter(region, np.int64)] = True
        region = m
    flat = np.array(sorted(new_voxels), np.int64)
    dist = np.array([new_voxels[v][0] for v in flat.tolist()], float)
    basis = np.full((len(flat), MAX_BASIS), -1, np.int64)
    for i, v in enumerate(flat.tolist()):
        b = list(new_voxels[v][1])[:MAX_BASIS]
        basis[i, :len(b)] = b
    dirty = gvd.replace_region(region, flat, dist, basis)
    return update_clusters(gvd, clusters, dirty)


def cluster_representative(gvd: GvdGraph, members) -> int:
    """Voxel with the most basis points; ties go to the larger distance, then the lower index."""
    m = np.array(sorted(members), np.int64)
    key = np.lexsort((m, -gvd.distance[m], -gvd.num_basis[m]))
    return int(m[key[0]])
