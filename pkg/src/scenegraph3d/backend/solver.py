"""Levenberg-Marquardt over SE(3) poses with GNC-TLS weights on loop-closure edges.

Each edge (i, j) with measurement E and weights (w_R, w_t) contributes

    w_R * ||R_i^T R_j - E_R||_F^2 + w_t * ||R_i^T (t_j - t_i) - E_t||^2,

which is the trace form tr(M W M^T) of M = T_i^-1 T_j - E with W = diag(w_R, w_R, w_R, w_t).
Position-only edges have w_R = 0. Poses are perturbed on the right, T <- T exp(xi),
xi = (phi, rho).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .. import se3
from .deformation import LC, DeformationGraph

try:  # sparse Cholesky; SuperLU is the fallback
    import cvxopt
    import cvxopt.cholmod
except ImportError:  # pragma: no cover
    cvxopt = None


class SingularSystemError(RuntimeError):
    pass


@dataclass
class GncConfig:
    inlier_cost: float = 50.0  # squared weighted residual above which a closure is an outlier
    max_outer: int = 20
    mu_factor: float = 2.0  # the convexity scale is divided by this each outer iteration
    inner_max_iter: int = 5  # LM iterations per reweighting, warm-started
    lm_max_iter: int = 50  # LM iterations of the final solve
    lm_tol: float = 1e-10
    lambda_init: float = 1e-4

    def validate(self) -> None:
        if not (self.inlier_cost > 0 and self.max_outer > 0 and self.mu_factor > 1 and self.lm_max_iter > 0
                and self.inner_max_iter > 0):
            raise ValueError("GNC settings must be positive (mu_factor > 1)")


@dataclass
class EdgeArrays:
    I: np.ndarray
    J: np.ndarray
    ER: np.ndarray  # (m, 3, 3)
    Et: np.ndarray  # (m, 3)
    sw_rot: np.ndarray  # sqrt weights
    sw_trans: np.ndarray
    is_lc: np.ndarray

    @classmethod
    def from_graph(cls, dg: DeformationGraph) -> "EdgeArrays":
        m = len(dg.edges)
        E = np.array([e.measurement for e in dg.edges]).reshape(m, 4, 4)
        return cls(np.array([e.i for e in dg.edges], np.int64), np.array([e.j for e in dg.edges], np.int64),
                   E[:, :3, :3], E[:, :3, 3],
                   np.sqrt([e.w_rot for e in dg.edges]).reshape(m), np.sqrt([e.w_trans for e in dg.edges]).reshape(m),
                   np.array([e.kind == LC for e in dg.edges], bool).reshape(m))


def edge_residuals(poses, ea: EdgeArrays, robust=None) -> np.ndarray:
    """(m, 12) whitened residuals: rotation columns then translation."""
    Ri, Rj = poses[ea.I, :3, :3], poses[ea.J, :3, :3]
    ti, tj = poses[ea.I, :3, 3], poses[ea.J, :3, 3]
    A = np.einsum("mki,mkj->mij", Ri, Rj)
    b = np.einsum("mki,mk->mi", Ri, tj - ti)
    rr = (A - ea.ER).transpose(0, 2, 1).reshape(-1, 9) * ea.sw_rot[:, None]
    rt = (b - ea.Et) * ea.sw_trans[:, None]
    r = np.concatenate([rr, rt], 1)
    if robust is not None:
        r = r * np.sqrt(robust)[:, None]
    return r


def edge_jacobians(poses, ea: EdgeArrays, robust=None):
    """(m, 12, 6) blocks d r / d xi_i and d r / d xi_j."""
    m = len(ea.I)
    Ri, Rj = poses[ea.I, :3, :3], poses[ea.J, :3, :3]
    ti, tj = poses[ea.I, :3, 3], poses[ea.J, :3, 3]
    A = np.einsum("mki,mkj->mij", Ri, Rj)
    b = np.einsum("mki,mk->mi", Ri, tj - ti)
    Ji = np.zeros((m, 12, 6))
    Jj = np.zeros((m, 12, 6))
    eye = np.eye(3)
    for c in range(3):
        Ji[:, 3 * c:3 * c + 3, :3] = se3.hat_batch(A[:, :, c])
        Jj[:, 3 * c:3 * c + 3, :3] = -A @ se3.hat(eye[c])
    Ji[:, 9:, :3] = se3.hat_batch(b)
    Ji[:, 9:, 3:] = -eye
    Jj[:, 9:, 3:] = A
    s = np.concatenate([np.repeat(ea.sw_rot[:, None], 9, 1), np.repeat(ea.sw_trans[:, None], 3, 1)], 1)
    if robust is not None:
        s = s * np.sqrt(robust)[:, None]
    return Ji * s[:, :, None], Jj * s[:, :, None]


def total_cost(poses, ea: EdgeArrays, robust=None) -> float:
    r = edge_residuals(poses, ea, robust)
    return float((r * r).sum())


def edge_costs(poses, ea: EdgeArrays) -> np.ndarray:
    r = edge_residuals(poses, ea)
    return (r * r).sum(1)


def retract(poses, delta: np.ndarray) -> np.ndarray:
    out = poses.copy()
    d = delta.reshape(-1, 6)
    moved = np.flatnonzero(np.abs(d).sum(1) > 0)
    out[moved] = poses[moved] @ se3.exp_se3_batch(d[moved])
    return out


def solve_spd(A, b) -> np.ndarray:
    """Solve A x = b for a sparse symmetric positive definite A."""
    if cvxopt is not None:
        try:
            return _Cholesky(A).solve(A, b)
        except ArithmeticError:
            pass
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return spsolve(A.tocsc(), b)


class _Cholesky:
    """One-off CHOLMOD solve of a scipy matrix."""

    def __init__(self, A):
        low = sp.tril(A, format="coo")
        self.M = cvxopt.spmatrix(cvxopt.matrix(low.data.astype(float)), cvxopt.matrix(low.row.astype(np.int32)),
                                 cvxopt.matrix(low.col.astype(np.int32)), size=A.shape)

    def solve(self, A, b) -> np.ndarray:
        cvxopt.cholmod.options["supernodal"] = 2
        x = cvxopt.matrix(np.asarray(b, float).reshape(-1, 1))
        cvxopt.cholmod.linsolve(self.M, x, uplo="L")
        return np.array(x).reshape(-1)


def _block_masks(ea: EdgeArrays):
    """Structural nonzeros of the (ii, ij, ji, jj) Hessian blocks of every edge.

    A position-only edge touches pose j only through its translation.
    """
    m = len(ea.I)
    full = ea.sw_rot > 0
    ii = np.ones((m, 6, 6), bool)
    ij = np.ones((m, 6, 6), bool)
    ij[~full, :, :3] = False
    ji = ij.transpose(0, 2, 1).copy()
    jj = ij & ji
    return ii, ij, ji, jj


class _BlockSystem:
    """Gauss-Newton system J^T J, J^T r assembled from 6x6 blocks into a fixed sparsity pattern.

    The pattern depends only on the edges, so one symbolic factorization serves every
    solve. Fixed poses keep an identity diagonal block and zero gradient.
    """

    def __init__(self, ea: EdgeArrays, n: int, fixed):
        self.n = n
        N = 6 * n
        self.free = np.ones(N, bool)
        for f in fixed:
            self.free[6 * f:6 * f + 6] = False
        k = np.arange(6)
        rows, cols, masks = [], [], []
        for (a, b), mask in zip(((ea.I, ea.I), (ea.I, ea.J), (ea.J, ea.I), (ea.J, ea.J)), _block_masks(ea)):
            rows.append(np.broadcast_to(((6 * a)[:, None] + k)[:, :, None], mask.shape)[mask])
            cols.append(np.broadcast_to(((6 * b)[:, None] + k)[:, None, :], mask.shape)[mask])
            masks.append(mask)
        self.masks = masks
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self.keep = self.free[rows] & self.free[cols]
        fixed_dofs = np.flatnonzero(~self.free)
        rows = np.concatenate([rows[self.keep], fixed_dofs, np.arange(N)])
        cols = np.concatenate([cols[self.keep], fixed_dofs, np.arange(N)])
        self.num_fixed = len(fixed_dofs)
        uniq, self.slot = np.unique(rows.astype(np.int64) * N + cols, return_inverse=True)
        r_u, c_u = np.divmod(uniq, N)
        self.indices = c_u.astype(np.int32)
        self.indptr = np.searchsorted(r_u, np.arange(N + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self.diag_slot = np.searchsorted(uniq, np.arange(N, dtype=np.int64) * (N + 1))
        # the upper triangle in row order is the lower triangle in column order
        self.upper = np.flatnonzero(r_u <= c_u)
        self._M = self._factor = None
        if cvxopt is not None:
            self._M = cvxopt.spmatrix(cvxopt.matrix(np.ones(len(self.upper))),
                                      cvxopt.matrix(c_u[self.upper].astype(np.int32)),
                                      cvxopt.matrix(r_u[self.upper].astype(np.int32)), size=(N, N))

    def assemble(self, poses, ea: EdgeArrays, robust=None):
        Ji, Jj = edge_jacobians(poses, ea, robust)
        r = edge_residuals(poses, ea, robust)
        JiT, JjT = Ji.transpose(0, 2, 1), Jj.transpose(0, 2, 1)
        blocks = [(X @ Y)[mask] for (X, Y), mask in zip(((JiT, Ji), (JiT, Jj), (JjT, Ji), (JjT, Jj)), self.masks)]
        vals = np.concatenate([np.concatenate(blocks)[self.keep], np.ones(self.num_fixed), np.zeros(6 * self.n)])
        data = np.bincount(self.slot, weights=vals, minlength=self.nnz)
        g = np.zeros(6 * self.n)
        np.add.at(g.reshape(-1, 6), ea.I, (JiT @ r[:, :, None])[:, :, 0])
        np.add.at(g.reshape(-1, 6), ea.J, (JjT @ r[:, :, None])[:, :, 0])
        g[~self.free] = 0.0
        return data, g

    def matrix(self, data):
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(6 * self.n,) * 2)

    def solve(self, data, rhs) -> np.ndarray:
        if self._M is not None:
            try:
                self._M.V = cvxopt.matrix(data[self.upper])
                cvxopt.cholmod.options["supernodal"] = 2
                if self._factor is None:
                    self._factor = cvxopt.cholmod.symbolic(self._M, uplo="L")
                cvxopt.cholmod.numeric(self._M, self._factor)
                x = cvxopt.matrix(np.asarray(rhs, float).reshape(-1, 1))
                cvxopt.cholmod.solve(self._factor, x)
                return np.array(x).reshape(-1)
            except ArithmeticError:
                pass
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return spsolve(self.matrix(data).tocsc(), rhs)


def _normal_equations(poses, ea, robust, n, fixed):
    """J^T J and J^T r over the free coordinates (reference assembly through the full Jacobian)."""
    Ji, Jj = edge_jacobians(poses, ea, robust)
    r = edge_residuals(poses, ea, robust).reshape(-1)
    m = len(ea.I)
    rows = np.repeat(np.arange(12 * m).reshape(m, 12, 1), 6, 2)
    ci = np.broadcast_to((6 * ea.I)[:, None, None] + np.arange(6)[None, None, :], (m, 12, 6))
    cj = np.broadcast_to((6 * ea.J)[:, None, None] + np.arange(6)[None, None, :], (m, 12, 6))
    data = np.concatenate([Ji.reshape(-1), Jj.reshape(-1)])
    rr = np.concatenate([rows.reshape(-1), rows.reshape(-1)])
    cc = np.concatenate([ci.reshape(-1), cj.reshape(-1)])
    J = sp.csr_matrix((data, (rr, cc)), shape=(12 * m, 6 * n))
    free = np.ones(6 * n, bool)
    for f in fixed:
        free[6 * f:6 * f + 6] = False
    J = J[:, np.flatnonzero(free)]
    return (J.T @ J).tocsc(), J.T @ r, free


@dataclass
class LmResult:
    poses: np.ndarray
    cost: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)  # cost after every accepted step


def levenberg_marquardt(poses, ea: EdgeArrays, robust=None, fixed=(0,), max_iter: int = 50,
                        tol: float = 1e-10, lam: float = 1e-4, system: _BlockSystem | None = None) -> LmResult:
    n = len(poses)
    system = system or _BlockSystem(ea, n, fixed)
    cost = total_cost(poses, ea, robust)
    hist = [cost]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        data, g = system.assemble(poses, ea, robust)
        if not np.isfinite(g).all():
            raise SingularSystemError("non-finite gradient")
        if np.abs(g).max(initial=0.0) < 1e-14:
            converged = True
            break
        diag = data[system.diag_slot]
        floor = 1e-9 * (1.0 + diag.max(initial=0.0))
        improved = False
        while lam < 1e12:
            damped = data.copy()
            damped[system.diag_slot] += lam * (diag + floor)
            step = system.solve(damped, -g)
            if not np.isfinite(step).all():
                lam *= 10
                continue
            step[~system.free] = 0.0
            cand = retract(poses, step)
            c_new = total_cost(cand, ea, robust)
            if c_new <= cost:
                rel = (cost - c_new) / max(cost, 1e-300)
                poses, cost = cand, c_new
                hist.append(cost)
                lam = max(lam / 10, 1e-12)
                improved = True
                if rel < tol or np.abs(step).max() < tol:
                    converged = True
                break
            lam *= 10
        if not improved:
            converged = True
            break
        if converged:
            break
    return LmResult(poses, cost, it, converged, hist)


def tls_weights(r2: np.ndarray, mu: float, cbar2: float) -> np.ndarray:
    """Graduated truncated-least-squares weights; larger mu is closer to the true TLS."""
    w = np.empty_like(r2)
    lo = mu / (mu + 1) * cbar2
    hi = (mu + 1) / mu * cbar2
    w[r2 <= lo] = 1.0
    w[r2 >= hi] = 0.0
    mid = (r2 > lo) & (r2 < hi)
    w[mid] = np.sqrt(cbar2 * mu * (mu + 1) / r2[mid]) - mu
    return np.clip(w, 0.0, 1.0)


@dataclass
class OptimizeResult:
    poses: np.ndarray
    cost: float
    closure_inliers: np.ndarray  # bool per loop-closure edge, in edge order
    closure_weights: np.ndarray
    converged: bool
    outer_iterations: int
    history: list


def optimize(dg: DeformationGraph, gnc: GncConfig | None = None, fixed=None) -> OptimizeResult:
    """Minimize the edge costs; loop closures are reweighted by GNC, the first agent is held fixed."""
    gnc = gnc or GncConfig()
    gnc.validate()
    if fixed is None:
        agents = dg.nodes_of("a")
        fixed = (agents[0],) if agents else (0,)
    ea = EdgeArrays.from_graph(dg)
    if len(ea.I) == 0:
        return OptimizeResult(dg.poses.copy(), 0.0, np.zeros(0, bool), np.zeros(0), True, 0, [0.0])
    lc = np.flatnonzero(ea.is_lc)
    w = np.ones(len(ea.I))
    poses = dg.poses.copy()
    hist = []
    mu = None
    system = _BlockSystem(ea, len(poses), fixed)
    converged = True
    outer = 0
    for outer in range(1, gnc.max_outer + 1):
        res = levenberg_marquardt(poses, ea, w, fixed, gnc.inner_max_iter, gnc.lm_tol, gnc.lambda_init, system)
        poses = res.poses
        hist.extend(res.history)
        converged = res.converged
        if len(lc) == 0:
            break
        r2 = edge_costs(poses, ea)[lc]
        if mu is None:
            top = r2.max()
            if top <= gnc.inlier_cost:
                break
            mu = gnc.inlier_cost / (2 * top - gnc.inlier_cost)
        else:
            mu *= gnc.mu_factor
        w_new = tls_weights(r2, mu, gnc.inlier_cost)
        settled = np.all((w_new == 0) | (w_new == 1)) and np.array_equal(w_new, w[lc])
        w[lc] = w_new
        if settled:
            break
    else:
        converged = False
    if len(lc) and mu is not None:
        # final solve with the settled weights
        res = levenberg_marquardt(poses, ea, w, fixed, gnc.lm_max_iter, gnc.lm_tol, gnc.lambda_init, system)
        poses = res.poses
        hist.extend(res.history)
    cost = total_cost(poses, ea, w)
    return OptimizeResult(poses, cost, w[lc] > 0.5, w[lc].copy(), converged, outer, hist)
