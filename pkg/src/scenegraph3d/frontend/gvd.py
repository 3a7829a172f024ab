"""Generalized Voronoi diagram voxels from the brushfire site field.

A free voxel is on the diagram when a 26-neighbor was reached from a distinct
obstacle whose bisector with the voxel's own obstacle passes within half a
voxel of the voxel center. Basis points are grouped into obstacles (sites
that are not 26-adjacent), then the count and the angle filter are applied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

MAX_BASIS = 8


@nb.njit(cache=True)
def _gvd_kernel(site, d2, cand, n_b, cos_max, max_basis):
    nx, ny, nz = site.shape
    N = nx * ny * nz
    is_gvd = np.zeros(N, np.bool_)
    nbasis = np.zeros(N, np.int64)
    reps = np.full((N, max_basis), -1, np.int64)
    buf = np.empty(27, np.int64)
    rx = np.empty(max_basis, np.int64)
    ry = np.empty(max_basis, np.int64)
    rz = np.empty(max_basis, np.int64)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not cand[x, y, z]:
                    continue
                sv = site[x, y, z]
                if sv < 0 or d2[x, y, z] <= 0:
                    continue
                svx = sv // (ny * nz)
                svy = (sv // nz) % ny
                svz = sv % nz
                b = d2[x, y, z]
                nc = 0
                buf[nc] = sv
                nc += 1
                for dx in range(-1, 2):
                    xx = x + dx
                    if xx < 0 or xx >= nx:
                        continue
                    for dy in range(-1, 2):
                        yy = y + dy
                        if yy < 0 or yy >= ny:
                            continue
                        for dz in range(-1, 2):
                            zz = z + dz
                            if zz < 0 or zz >= nz or (dx == 0 and dy == 0 and dz == 0):
                                continue
                            su = site[xx, yy, zz]
                            if su < 0 or su == sv:
                                continue
                            sux = su // (ny * nz)
                            suy = (su // nz) % ny
                            suz = su % nz
                            sep2 = (sux - svx) ** 2 + (suy - svy) ** 2 + (suz - svz) ** 2
                            if sep2 <= 3:
                                continue
                            a = (x - sux) ** 2 + (y - suy) ** 2 + (z - suz) ** 2
                            # distance to the bisector plane is (a - b) / (2 |su - sv|) <= 1/2
                            if (a - b) * (a - b) <= sep2:
                                buf[nc] = su
                                nc += 1
                # group basis sites into distinct obstacles
                nr = 0
                for i in range(nc):
                    s = buf[i]
                    sx = s // (ny * nz)
                    sy = (s // nz) % ny
                    sz = s % nz
                    new = True
                    for r in range(nr):
                        if (sx - rx[r]) ** 2 + (sy - ry[r]) ** 2 + (sz - rz[r]) ** 2 <= 3:
                            new = False
                            break
                    if new and nr < max_basis:
                        rx[nr] = sx
                        ry[nr] = sy
                        rz[nr] = sz
                        reps[(x * ny + y) * nz + z, nr] = s
                        nr += 1
                f = (x * ny + y) * nz + z
                nbasis[f] = nr
                if nr < n_b:
                    continue
                # widest angle between basis directions
                best = 1.0
                for i in range(nr):
                    ax, ay, az = rx[i] - x, ry[i] - y, rz[i] - z
                    na = np.sqrt(ax * ax + ay * ay + az * az)
                    for j in range(i + 1, nr):
                        bx, by, bz = rx[j] - x, ry[j] - y, rz[j] - z
                        nb_ = np.sqrt(bx * bx + by * by + bz * bz)
                        c = (ax * bx + ay * by + az * bz) / (na * nb_)
                        if c < best:
                            best = c
                if best <= cos_max + 1e-12:
                    is_gvd[f] = True
    return is_gvd.reshape(site.shape), nbasis.reshape(site.shape), reps


@dataclass
class GvdResult:
    mask: np.ndarray  # bool per voxel
    num_basis: np.ndarray  # distinct obstacles per voxel
    basis: np.ndarray  # (N, MAX_BASIS) flat indices of representative basis voxels, -1 padded


def extract_gvd(site: np.ndarray, sq_dist: np.ndarray, candidates: np.ndarray, theta_min: float = np.pi / 4,
                n_b: int = 2) -> GvdResult:
    """Diagram voxels among `candidates` (usually observed free voxels).

    `site` / `sq_dist` come from compute_esdf on the same grid. `theta_min` is
    the smallest admissible widest angle between basis directions (radians).
    """
    if n_b < 2:
        raise ValueError("n_b must be at least 2")
    cos_max = float(np.cos(theta_min))
    mask, nbasis, reps = _gvd_kernel(np.ascontiguousarray(site), np.ascontiguousarray(sq_dist),
                                     np.ascontiguousarray(candidates, dtype=np.bool_), int(n_b), cos_max, MAX_BASIS)
    return GvdResult(mask, nbasis, reps)
