"""Slow, independent reference implementations used only by the tests.

None of these import the package code they check.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.spatial.transform import Rotation


# -- distance fields ------------------------------------------------------------

def brute_sq_distance(occupied: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Squared distance (voxel units) from every voxel center to the nearest occupied one; -1 if none."""
    occ = np.argwhere(occupied)
    allv = np.argwhere(np.ones(occupied.shape, bool))
    out = np.full(len(allv), -1, np.int64)
    if len(occ):
        for s in range(0, len(allv), chunk):
            d = allv[s:s + chunk, None, :] - occ[None, :, :]
            out[s:s + chunk] = (d * d).sum(-1).min(1)
    return out.reshape(occupied.shape)


# -- treewidth ------------------------------------------------------------------

def exact_treewidth(adj: dict) -> int:
    """Treewidth by dynamic programming over vertex subsets (fine up to ~12 nodes).

    TW(S) = min over v in S of max(TW(S - v), |Q(S - v, v)|), where Q(S, v) are the
    vertices outside S + v reachable from v through S.
    """
    nodes = sorted(adj)
    n = len(nodes)
    if n == 0:
        return -1
    idx = {v: i for i, v in enumerate(nodes)}
    nb = [0] * n
    for v in nodes:
        for w in adj[v]:
            if w != v:
                nb[idx[v]] |= 1 << idx[w]
                nb[idx[w]] |= 1 << idx[v]

    def q(S, v):
        seen, stack, out = 1 << v, [v], 0
        while stack:
            u = stack.pop()
            m = nb[u]
            while m:
                b = m & -m
                m ^= b
                if seen & b:
                    continue
                seen |= b
                w = b.bit_length() - 1
                if S >> w & 1:
                    stack.append(w)
                else:
                    out += 1
        return out

    @lru_cache(maxsize=None)
    def tw(S):
        if S == 0:
            return -1
        best = n
        m = S
        while m:
            b = m & -m
            m ^= b
            v = b.bit_length() - 1
            rest = S & ~b
            best = min(best, max(tw(rest), q(rest, v)))
        return best

    return tw((1 << n) - 1)


# -- components and spanning trees -------------------------------------------------

def bfs_components(nodes, edges) -> list:
    adj = {n: [] for n in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, comps = set(), []
    for s in nodes:
        if s in seen:
            continue
        comp, frontier = [s], [s]
        seen.add(s)
        while frontier:
            nxt = []
            for u in frontier:
                for w in adj[u]:
                    if w not in seen:
                        seen.add(w)
                        comp.append(w)
                        nxt.append(w)
            frontier = nxt
        comps.append(set(comp))
    return comps


def betti_by_recount(node_dist: dict, edge_dist: dict, delta: float, min_size: int) -> int:
    """Components of size >= min_size among nodes/edges with clearance >= delta.

    An edge lives only while both its endpoints live.
    """
    alive = [n for n, d in node_dist.items() if d >= delta]
    alive_set = set(alive)
    edges = [(a, b) for (a, b), d in edge_dist.items()
             if a in alive_set and b in alive_set and d >= delta]
    return sum(1 for c in bfs_components(alive, edges) if len(c) >= min_size)


def kruskal_edge_count(nodes, weighted_edges) -> int:
    parent = {n: n for n in nodes}

    def root(x):
        while parent[x] != x:
            x = parent[x]
        return x

    count = 0
    for w, a, b in sorted((w, a, b) for a, b, w in weighted_edges):
        ra, rb = root(a), root(b)
        if ra != rb:
            parent[ra] = rb
            count += 1
    return count


# -- pose graphs ----------------------------------------------------------------

def chordal_cost(Rs, ts, edges) -> float:
    """Sum over edges of wR |Ri^T Rj - ER|_F^2 + wt |Ri^T (tj - ti) - Et|^2."""
    c = 0.0
    for i, j, ER, Et, wR, wt in edges:
        c += wR * np.sum((Rs[i].T @ Rs[j] - ER) ** 2)
        c += wt * np.sum((Rs[i].T @ (ts[j] - ts[i]) - Et) ** 2)
    return c


def _edge_residual(Ri, ti, Rj, tj, ER, Et, wR, wt):
    return np.concatenate([np.sqrt(wR) * (Ri.T @ Rj - ER).ravel(), np.sqrt(wt) * (Ri.T @ (tj - ti) - Et)])


def reference_gauss_newton(Rs, ts, edges, fixed=0, iters=100, tol=1e-13):
    """Dense Gauss-Newton with left rotation updates R <- exp(w) R, t <- t + d.

    Jacobians are numeric (central differences), so the solver shares nothing with
    the analytic implementation except the cost it minimizes.
    """
    Rs = [np.array(R, float) for R in Rs]
    ts = [np.array(t, float) for t in ts]
    n = len(Rs)
    free = [k for k in range(n) if k != fixed]
    col = {k: 6 * c for c, k in enumerate(free)}
    h = 1e-6

    def pert(R, t, d):
        return Rotation.from_rotvec(d[:3]).as_matrix() @ R, t + d[3:]

    for _ in range(iters):
        rows, J = [], []
        for i, j, ER, Et, wR, wt in edges:
            r0 = _edge_residual(Rs[i], ts[i], Rs[j], ts[j], ER, Et, wR, wt)
            Jrow = np.zeros((12, 6 * len(free)))
            for node in (i, j):
                if node == fixed:
                    continue
                for k in range(6):
                    d = np.zeros(6)
                    d[k] = h
                    vals = []
                    for s in (1.0, -1.0):
                        R2, t2 = pert(Rs[node], ts[node], s * d)
                        Ri, ti = (R2, t2) if node == i else (Rs[i], ts[i])
                        Rj, tj = (R2, t2) if node == j else (Rs[j], ts[j])
                        vals.append(_edge_residual(Ri, ti, Rj, tj, ER, Et, wR, wt))
                    Jrow[:, col[node] + k] += (vals[0] - vals[1]) / (2 * h)
            rows.append(r0)
            J.append(Jrow)
        r = np.concatenate(rows)
        J = np.vstack(J)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        for k in free:
            Rs[k], ts[k] = pert(Rs[k], ts[k], step[col[k]:col[k] + 6])
        if np.abs(step).max() < tol:
            break
    return Rs, ts


def right_perturbation_jacobian(f, T, eps=1e-6):
    """Central differences of f(T exp(xi)) at xi = 0, with xi = (phi, rho)."""
    cols = []
    for k in range(6):
        xi = np.zeros(6)
        xi[k] = eps
        cols.append((f(T @ _exp_se3(xi)) - f(T @ _exp_se3(-xi))) / (2 * eps))
    return np.stack(cols, -1)


def _exp_se3(xi):
    """Matrix exponential of the twist, computed by scipy's expm."""
    from scipy.linalg import expm
    X = np.zeros((4, 4))
    w = xi[:3]
    X[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    X[:3, 3] = xi[3:]
    return expm(X)


# -- descriptors ------------------------------------------------------------------

def p_at_k_by_enumeration(vectors, boxes, k, iou_threshold=0.5) -> float:
    """Percent of hits among each query's k closest others, closeness = L1 distance, ties by index."""
    n = len(vectors)
    total = 0.0
    for q in range(n):
        others = sorted((float(np.abs(np.subtract(vectors[q], vectors[o])).sum()), o) for o in range(n) if o != q)
        hits = 0
        for _, o in others[:k]:
            (amin, amax), (bmin, bmax) = boxes[q], boxes[o]
            lo = np.maximum(amin, bmin)
            hi = np.minimum(amax, bmax)
            inter = float(np.prod(np.clip(np.subtract(hi, lo), 0, None)))
            union = float(np.prod(np.subtract(amax, amin)) + np.prod(np.subtract(bmax, bmin))) - inter
            hits += union > 0 and inter / union >= iou_threshold
        total += hits / k
    return 100.0 * total / n


def all_pairs_within(points, r):
    return {(i, j) for i, j in combinations(range(len(points)), 2)
            if np.linalg.norm(np.subtract(points[i], points[j])) <= r}
