"""Brushfire Euclidean distance field on a voxel grid.

A label-correcting wavefront seeded at boundary obstacle voxels carries the
index of its source voxel; each voxel keeps the source with the smallest exact
squared distance (integer voxel units), so distances are exact Euclidean
distances between voxel centers rather than chamfer approximations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

NO_SITE = -1
_BIG = np.iinfo(np.int64).max


@nb.njit(cache=True)
def _push(hk, hv, n, key, val):
    i = n
    hk[i] = key
    hv[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if hk[p] <= hk[i]:
            break
        hk[p], hk[i] = hk[i], hk[p]
        hv[p], hv[i] = hv[i], hv[p]
        i = p
    return n + 1


@nb.njit(cache=True)
def _pop(hk, hv, n):
    k = hk[0]
    v = hv[0]
    n -= 1
    hk[0] = hk[n]
    hv[0] = hv[n]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and hk[c + 1] < hk[c]:
            c += 1
        if hk[i] <= hk[c]:
            break
        hk[c], hk[i] = hk[i], hk[c]
        hv[c], hv[i] = hv[i], hv[c]
        i = c
    return k, v, n


@nb.njit(cache=True)
def _brushfire(occ, max_d2, cap):
    nx, ny, nz = occ.shape
    N = nx * ny * nz
    d2 = np.full(N, _BIG, np.int64)
    site = np.full(N, -1, np.int64)
    hk = np.empty(cap, np.int64)
    hv = np.empty(cap, np.int64)
    n = 0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not occ[x, y, z]:
                    continue
                f = (x * ny + y) * nz + z
                d2[f] = 0
                site[f] = f
                # only obstacle voxels touching free space can be nearest to a free voxel
                border = False
                for dx in range(-1, 2):
                    for dy in range(-1, 2):
                        for dz in range(-1, 2):
                            xx, yy, zz = x + dx, y + dy, z + dz
                            if 0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz and not occ[xx, yy, zz]:
                                border = True
                if border:
                    if n == cap:
                        return d2.reshape(occ.shape), site.reshape(occ.shape), False
                    n = _push(hk, hv, n, 0, f)
    while n > 0:
        k, f, n = _pop(hk, hv, n)
        if k > d2[f]:
            continue
        s = site[f]
        sx = s // (ny * nz)
        sy = (s // nz) % ny
        sz = s % nz
        x = f // (ny * nz)
        y = (f // nz) % ny
        z = f % nz
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
                    if zz < 0 or zz >= nz:
                        continue
                    g = (xx * ny + yy) * nz + zz
                    e = (xx - sx) ** 2 + (yy - sy) ** 2 + (zz - sz) ** 2
                    if e < d2[g] and e <= max_d2:
                        d2[g] = e
                        site[g] = s
                        if n == cap:
                            return d2.reshape(occ.shape), site.reshape(occ.shape), False
                        n = _push(hk, hv, n, e, g)
    return d2.reshape(occ.shape), site.reshape(occ.shape), True


@dataclass
class Esdf:
    sq_dist: np.ndarray  # int64 squared distance in voxel units; -1 where unreached
    site: np.ndarray  # flat index of the nearest obstacle voxel, NO_SITE where unreached
    voxel_size: float

    @property
    def distance(self) -> np.ndarray:
        """Metric distance; +inf where no obstacle was reached."""
        d = np.sqrt(np.maximum(self.sq_dist, 0).astype(float)) * self.voxel_size
        d[self.sq_dist < 0] = np.inf
        return d


def compute_esdf(occupied: np.ndarray, voxel_size: float = 1.0, max_distance: float | None = None) -> Esdf:
    """Distance from every voxel center to the nearest occupied voxel center.

    `max_distance` (metres) stops the wavefront early; voxels beyond it stay unreached.
    """
    occ = np.ascontiguousarray(occupied, dtype=np.bool_)
    if max_distance is None:
        max_d2 = _BIG
    else:
        max_d2 = int(np.floor((max_distance / voxel_size) ** 2 + 1e-9))
    # the heap is a fixed buffer (growing it inside the kernel is much slower); retry when it overflows
    cap = 4 * occ.size + 1024
    while True:
        d2, site, ok = _brushfire(occ, max_d2, cap)
        if ok:
            break
        cap *= 2
    d2 = np.where(d2 == _BIG, -1, d2)
    return Esdf(d2, site, float(voxel_size))
