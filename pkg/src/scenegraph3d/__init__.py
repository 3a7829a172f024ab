"""Hierarchical 3D scene graphs from synthetic indoor worlds."""
from .scene_graph import (AgentAttrs, BuildingAttrs, HierarchyError, HierarchyReport, Layer, ObjectAttrs,
                          PlaceAttrs, RoomAttrs, SceneGraph, SurfacePoint, validate_hierarchy)
from .serialization import deserialize, serialize
from .memory import MemoryMode, MemoryModel, memory_footprint
from .tree_decomposition import build_htree, td_heuristic, td_hierarchical, treewidth_upper_bound, validate_td
from .world_synth import WorldSpec, TrajectorySpec, DriftModel, generate_world, generate_trajectory, apply_drift
from .frontend.integration import Frontend, FrontendConfig
from .rooms import RoomConfig, segment_rooms
from .loop_closure import LoopClosureConfig, build_descriptor, detect_loop_closures
from .backend.solver import GncConfig, optimize
from .backend.deform import reconcile
from .config import PipelineConfig
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AgentAttrs", "BuildingAttrs", "HierarchyError", "HierarchyReport", "Layer", "ObjectAttrs", "PlaceAttrs",
    "RoomAttrs", "SceneGraph", "SurfacePoint", "validate_hierarchy", "serialize", "deserialize",
    "MemoryMode", "MemoryModel", "memory_footprint",
    "build_htree", "td_heuristic", "td_hierarchical", "treewidth_upper_bound", "validate_td",
    "WorldSpec", "TrajectorySpec", "DriftModel", "generate_world", "generate_trajectory", "apply_drift",
    "Frontend", "FrontendConfig", "RoomConfig", "segment_rooms",
    "LoopClosureConfig", "build_descriptor", "detect_loop_closures",
    "GncConfig", "optimize", "reconcile", "PipelineConfig", "run_pipeline",
]
