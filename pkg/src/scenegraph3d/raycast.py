"""Exact voxel traversal (Amanatides-Woo) for visibility and free-space carving."""
from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _traverse(occ, obs, origin, vs, o, e, t_end, carve):
    """Walk voxels on segment o->e for t in [0, t_end].

    Returns True if an occupied voxel is met. When `carve` is set, every non-occupied
    voxel on the way is flagged observed.
    """
    nx, ny, nz = occ.shape
    d0 = e[0] - o[0]
    d1 = e[1] - o[1]
    d2 = e[2] - o[2]
    i = int(np.floor((o[0] - origin[0]) / vs))
    j = int(np.floor((o[1] - origin[1]) / vs))
    k = int(np.floor((o[2] - origin[2]) / vs))
    inf = 1e30
    if d0 > 0:
        si, tmi, tdi = 1, ((origin[0] + (i + 1) * vs) - o[0]) / d0, vs / d0
    elif d0 < 0:
        si, tmi, tdi = -1, ((origin[0] + i * vs) - o[0]) / d0, -vs / d0
    else:
        si, tmi, tdi = 0, inf, inf
    if d1 > 0:
        sj, tmj, tdj = 1, ((origin[1] + (j + 1) * vs) - o[1]) / d1, vs / d1
    elif d1 < 0:
        sj, tmj, tdj = -1, ((origin[1] + j * vs) - o[1]) / d1, -vs / d1
    else:
        sj, tmj, tdj = 0, inf, inf
    if d2 > 0:
        sk, tmk, tdk = 1, ((origin[2] + (k + 1) * vs) - o[2]) / d2, vs / d2
    elif d2 < 0:
        sk, tmk, tdk = -1, ((origin[2] + k * vs) - o[2]) / d2, -vs / d2
    else:
        sk, tmk, tdk = 0, inf, inf
    while True:
        if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            if occ[i, j, k]:
                return True
            if carve:
                obs[i, j, k] = True
        if tmi <= tmj and tmi <= tmk:
            if tmi > t_end:
                break
            i += si
            tmi += tdi
        elif tmj <= tmk:
            if tmj > t_end:
                break
            j += sj
            tmj += tdj
        else:
            if tmk > t_end:
                break
            k += sk
            tmk += tdk
    return False


@nb.njit(cache=True)
def segments_blocked(occ, origin, vs, o, targets, t_end):
    """For each target, whether the segment from o to it crosses an occupied voxel."""
    out = np.zeros(targets.shape[0], dtype=np.bool_)
    dummy = np.zeros((1, 1, 1), dtype=np.bool_)
    for n in range(targets.shape[0]):
        out[n] = _traverse(occ, dummy, origin, vs, o, targets[n], t_end, False)
    return out


@nb.njit(cache=True)
def carve_free(occ, obs, origin, vs, o, targets, t_end):
    """Flag voxels between o and each target (stopping at the first occupied voxel) as observed."""
    for n in range(targets.shape[0]):
        _traverse(occ, obs, origin, vs, o, targets[n], t_end, True)


def segment_voxels_oracle(origin, vs, o, e, step_frac=1e-3) -> set:
    """Dense-sampling reference for the voxels met by a segment (tests only)."""
    o = np.asarray(o, float)
    e = np.asarray(e, float)
    n = max(2, int(np.linalg.norm(e - o) / (vs * step_frac)) + 2)
    ts = np.linspace(0.0, 1.0, n)
    pts = o + ts[:, None] * (e - o)
    idx = np.floor((pts - origin) / vs).astype(np.int64)
    return {tuple(v) for v in idx}
