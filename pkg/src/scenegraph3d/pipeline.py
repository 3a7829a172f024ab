"""Keyframe loop: frontend every keyframe, a slow stage every few keyframes and at the end."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import world_synth as ws
from .backend.deform import interpolate, reconcile
from .backend.deformation import add_loop_closures, build_deformation_graph
from .backend.solver import OptimizeResult, optimize
from .config import PipelineConfig
from .frontend.integration import Frontend
from .loop_closure import DescriptorDatabase, DescriptorDeferred, build_descriptor, detect_loop_closures
from .rooms import segment_rooms
from .scene_graph import SceneGraph


class StageError(RuntimeError):
    def __init__(self, stage: str, keyframe: int, err: Exception):
        self.stage, self.keyframe, self.err = stage, keyframe, err
        super().__init__(f"{stage} failed at keyframe {keyframe}: {err}")


@dataclass
class BackendResult:
    graph: SceneGraph
    optimization: OptimizeResult | None
    closure_edges: list  # deformation-graph edge index per closure


@dataclass
class PipelineResult:
    frontend_graph: SceneGraph
    graph: SceneGraph  # optimized, reconciled, with rooms
    closures: list
    descriptors: list
    anchors: dict
    keyframes: list
    estimated_poses: list
    odom_poses: list
    gt_poses: list
    optimization: OptimizeResult | None
    runtimes_ms: dict = field(default_factory=dict)
    grid_info: tuple = ()


def backend_pass(frontend_graph: SceneGraph, closures, cfg: PipelineConfig, grid_info=None,
                 rebuild_rooms: bool = True) -> BackendResult:
    """Optimize a copy of the (odometric) frontend graph with the given closures.

    Without closures the copy only gets its room layer.
    """
    g = frontend_graph.snapshot()
    if not closures:
        if rebuild_rooms:
            segment_rooms(g, cfg.rooms)
        return BackendResult(g, None, [])
    dg = build_deformation_graph(g, cfg.deformation, grid=grid_info)
    lc_edges = add_loop_closures(dg, closures, cfg.deformation)
    res = optimize(dg, cfg.gnc)
    interpolate(g, dg, res.poses, cfg.run.interpolation_neighbors)
    reconcile(g, cfg.run.place_merge_threshold, cfg.rooms, rebuild_rooms)
    return BackendResult(g, res, lc_edges)


def run_pipeline(world: ws.World, traj: ws.Trajectory, cfg: PipelineConfig, render_grid=None,
                 progress=None) -> PipelineResult:
    cfg.validate()
    rc = cfg.run
    fcfg = cfg.frontend
    grid = render_grid if render_grid is not None else ws.rasterize(world, fcfg.voxel_size)
    fe = Frontend.for_bounds(world.bounds_min, world.bounds_max, fcfg)
    grid_info = (fe.grid.origin, fe.grid.voxel_size, fe.grid.dims)
    poses_in = traj.gt_poses if rc.use_gt_trajectory or not traj.odom_poses else traj.odom_poses
    db = DescriptorDatabase()
    pending, queries = [], []
    anchors: dict = {}
    closures: list = []
    agent_of: dict = {}
    timing = {"render": 0.0, "frontend": 0.0, "descriptors": 0.0, "loop_closure": 0.0, "backend": 0.0}
    backend = BackendResult(fe.graph.snapshot(), None, [])

    def slow_stage(kf):
        nonlocal backend
        t0 = time.perf_counter()
        if rc.loop_closures and queries:
            try:
                found = detect_loop_closures(fe.graph, list(queries), db, anchors, cfg.loop_closure)
            except Exception as e:  # noqa: BLE001
                raise StageError("loop_closure", kf, e) from e
            closures.extend(found)
            queries.clear()
        t1 = time.perf_counter()
        try:
            backend = backend_pass(fe.graph, closures, cfg, grid_info)
        except Exception as e:  # noqa: BLE001
            raise StageError("backend", kf, e) from e
        timing["loop_closure"] += t1 - t0
        timing["backend"] += time.perf_counter() - t1

    def describe(pending, upto):
        still = []
        for k, a in pending:
            if k > upto:
                still.append((k, a))
                continue
            try:
                d = build_descriptor(fe.graph, a, cfg.loop_closure)
            except DescriptorDeferred:
                still.append((k, a))
                continue
            db.add(d)
            queries.append(d)
        return still

    n = len(traj.gt_poses)
    for kf in range(n):
        t0 = time.perf_counter()
        obs = ws.render_observation(world, grid, traj.gt_poses[kf], fcfg.max_range, keyframe=kf)
        t1 = time.perf_counter()
        try:
            res = fe.integrate_keyframe(obs, poses_in[kf])
        except Exception as e:  # noqa: BLE001
            raise StageError("frontend", kf, e) from e
        t2 = time.perf_counter()
        agent_of[kf] = res.agent
        anchors[kf] = obs.anchors
        pending.append((kf, res.agent))
        # an agent is described once its surroundings have had time to be mapped
        pending = describe(pending, kf - cfg.loop_closure.descriptor_delay)
        t3 = time.perf_counter()
        timing["render"] += t1 - t0
        timing["frontend"] += t2 - t1
        timing["descriptors"] += t3 - t2
        if progress:
            progress(kf, n)
        if (kf + 1) % rc.keyframe_cadence == 0 and kf + 1 < n:
            slow_stage(kf)
    pending = describe(pending, n)
    slow_stage(n - 1)

    g = backend.graph
    est = [g.attrs(agent_of[k]).pose.copy() for k in range(n)]
    return PipelineResult(fe.graph, g, list(closures), list(db.items), anchors, list(range(n)), est,
                          [p.copy() for p in poses_in], [p.copy() for p in traj.gt_poses], backend.optimization,
                          {k: 1000.0 * v for k, v in timing.items()}, grid_info)


def make_trajectory(world: ws.World, cfg: PipelineConfig, seed: int | None = None) -> ws.Trajectory:
    seed = cfg.run.seed if seed is None else seed
    traj = ws.generate_trajectory(world, cfg.trajectory, seed)
    return ws.apply_drift(traj, cfg.drift, seed)


def random_closures(agents_by_kf: dict, count: int, rng: np.random.Generator, min_gap: int = 5):
    """Closures between random keyframe pairs with random relative poses (outlier injection)."""
    from . import se3
    from .loop_closure import LoopClosure, Source

    kfs = sorted(agents_by_kf)
    out = []
    while len(out) < count and len(kfs) > min_gap:
        a, b = sorted(rng.choice(len(kfs), 2, replace=False))
        if kfs[b] - kfs[a] < min_gap:
            continue
        T = se3.random_pose(rng, trans_scale=3.0)
        out.append(LoopClosure(agents_by_kf[kfs[b]], agents_by_kf[kfs[a]], kfs[b], kfs[a], T, 0, Source.OBJECT))
    return out
