"""Symbol counts for flat voxel maps, hierarchical maps and compressed scene graphs."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .scene_graph import AgentAttrs, Layer, SceneGraph
from .voxels import VoxelGrid


class MemoryMode(str, Enum):
    FLAT = "flat"
    HIERARCHICAL = "hierarchical"
    COMPRESSED = "compressed"


class MemoryModelError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryModel:
    mode: MemoryMode
    voxel_size: float = 0.1
    num_labels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", MemoryMode(self.mode))
        if not self.voxel_size > 0:
            raise MemoryModelError("voxel size must be positive")
        if self.num_labels < 1:
            raise MemoryModelError("need at least one label")


@dataclass(frozen=True)
class SymbolCount:
    symbols: int
    edges: int


def memory_footprint(target, model: MemoryModel, grid: VoxelGrid | None = None) -> SymbolCount:
    """Count stored symbols and edges.

    Flat and hierarchical modes work on a rasterized world: pass the world as
    `target` and its VoxelGrid as `grid`. Compressed mode takes a SceneGraph.
    """
    if model.mode == MemoryMode.COMPRESSED:
        if not isinstance(target, SceneGraph):
            raise MemoryModelError("compressed mode needs a scene graph")
        return _compressed(target)
    if grid is None:
        grid = target if isinstance(target, VoxelGrid) else None
    if grid is None:
        raise MemoryModelError(f"{model.mode.value} mode needs a rasterized world (voxel grid)")
    n_vox = grid.size
    if model.mode == MemoryMode.FLAT:
        # one label slot per voxel per label class
        return SymbolCount(model.num_labels * n_vox, 0)
    if isinstance(target, VoxelGrid):
        raise MemoryModelError("hierarchical mode needs the world's objects and rooms")
    n_obj, n_room = len(target.objects), len(target.rooms)
    n_bld = 1 if n_room else 0
    # every voxel has one parent symbol; objects hang off rooms, rooms off the building
    edges = n_vox + n_obj + (n_room if n_bld else 0)
    return SymbolCount(n_vox + n_obj + n_room + n_bld, edges)


def _compressed(g: SceneGraph) -> SymbolCount:
    sub = g.num_nodes(Layer.MESH) + g.num_nodes(Layer.PLACES)
    symbolic = sum(1 for n in g.nodes(Layer.OBJECTS) if not isinstance(g.attrs(n), AgentAttrs))
    symbolic += g.num_nodes(Layer.ROOMS) + g.num_nodes(Layer.BUILDING)
    return SymbolCount(sub + symbolic, g.num_edges())
