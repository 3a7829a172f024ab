"""Dense voxel grid with occupancy, semantic labels and observation flags."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

# semantic label ids shared by the generator, the frontend and evaluation
FREE = 0
WALL = 1
FLOOR = 2
CEILING = 3
OBJECT_LABEL_BASE = 10

NEIGHBORS_26 = np.array([(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                         if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)
NEIGHBORS_6 = np.array([(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)], dtype=np.int64)


@dataclass
class VoxelGrid:
    origin: np.ndarray  # world position of the minimum corner of voxel (0, 0, 0)
    voxel_size: float
    occupied: np.ndarray  # bool, shape (nx, ny, nz)
    labels: np.ndarray  # int32 semantic label per voxel (FREE for free space)
    observed: np.ndarray | None = None  # bool; None means fully known
    object_ids: np.ndarray | None = None  # int32 ground-truth object index or -1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.voxel_size = float(self.voxel_size)
        if self.observed is None:
            self.observed = np.ones(self.occupied.shape, dtype=bool)

    @classmethod
    def empty(cls, origin, voxel_size: float, dims) -> "VoxelGrid":
        dims = tuple(int(d) for d in dims)
        return cls(np.asarray(origin, float), voxel_size, np.zeros(dims, bool),
                   np.zeros(dims, np.int32), np.zeros(dims, bool), None)

    @property
    def dims(self) -> tuple:
        return self.occupied.shape

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def free(self) -> np.ndarray:
        return self.observed & ~self.occupied

    def index_of(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.floor((p - self.origin) / self.voxel_size).astype(np.int64)

    def center_of(self, ijk) -> np.ndarray:
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.voxel_size

    def in_bounds(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.all((ijk >= 0) & (ijk < np.array(self.dims)), axis=-1)

    def flat(self, ijk) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(ijk).T), self.dims)

    def unflat(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.dims), axis=-1)

    def flat_centers(self, idx) -> np.ndarray:
        return self.center_of(self.unflat(idx))

    def surface_mask(self) -> np.ndarray:
        """Occupied voxels with at least one free face neighbor (grid border counts as closed)."""
        occ = self.occupied
        free = ~occ
        mask = np.zeros_like(occ)
        for d in NEIGHBORS_6:
            shifted = np.zeros_like(free)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            for ax in range(3):
                if d[ax] == 1:
                    dst[ax], src[ax] = slice(0, -1), slice(1, None)
                elif d[ax] == -1:
                    dst[ax], src[ax] = slice(1, None), slice(0, -1)
            shifted[tuple(dst)] = free[tuple(src)]
            mask |= shifted
        return mask & occ

    def dump_raw(self, path) -> None:
        """Header (dims, voxel size, origin), then row-major uint8 occupancy, int32 labels,
        uint8 observed mask and, when present, int32 object ids."""
        with open(path, "wb") as f:
            f.write(b"VXG1")
            f.write(struct.pack("<3q", *self.dims))
            f.write(struct.pack("<d", self.voxel_size))
            f.write(struct.pack("<3d", *self.origin))
            f.write(np.ascontiguousarray(self.occupied, dtype=np.uint8).tobytes())
            f.write(np.ascontiguousarray(self.labels, dtype="<i4").tobytes())
            f.write(np.ascontiguousarray(self.observed, dtype=np.uint8).tobytes())
            if self.object_ids is not None:
                f.write(np.ascontiguousarray(self.object_ids, dtype="<i4").tobytes())

    @classmethod
    def load_raw(cls, path) -> "VoxelGrid":
        with open(path, "rb") as f:
            if f.read(4) != b"VXG1":
                raise ValueError(f"{path}: not a voxel grid dump")
            dims = struct.unpack("<3q", f.read(24))
            vs = struct.unpack("<d", f.read(8))[0]
            origin = np.array(struct.unpack("<3d", f.read(24)))
            n = int(np.prod(dims))
            occ = np.frombuffer(f.read(n), dtype=np.uint8).reshape(dims).astype(bool)
            labels = np.frombuffer(f.read(4 * n), dtype="<i4").reshape(dims).astype(np.int32)
            obs = np.frombuffer(f.read(n), dtype=np.uint8).reshape(dims).astype(bool)
            rest = f.read(4 * n)
        ids = np.frombuffer(rest, dtype="<i4").reshape(dims).astype(np.int32) if len(rest) == 4 * n else None
        return cls(origin, vs, occ, labels, obs, ids)
