"""Command line entry points: generate, run, eval, decompose.

Exit status is 0 on success, 2 on usage or configuration errors and 1 when a
stage fails at runtime. Summaries go to stdout as one JSON object per command.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evaluation as ev
from . import world_synth as ws
from .backend.deform import export_tum, import_tum
from .loop_closure import closures_to_csv
from .memory import MemoryMode, MemoryModel, memory_footprint
from .pipeline import StageError, run_pipeline
from .rooms import object_room_graph
from .scene_graph import HierarchyError, Layer, SceneGraph
from .serialization import SerializationError, load_graph, save_graph
from .tree_decomposition import (Heuristic, build_htree, td_heuristic, td_hierarchical, treewidth_upper_bound,
                                 validate_td)
from .voxels import VoxelGrid

WORLD_FILE = "world.json"
GRID_FILE = "grid.bin"
TRAJ_FILE = "trajectory.tum"  # the trajectory of the artifact set (ground truth or estimate)
ODOM_FILE = "odometry.tum"
GRAPH_FILE = "scene_graph.json"
FRONTEND_FILE = "frontend_graph.json"
CLOSURES_FILE = "closures.csv"
DESCRIPTORS_FILE = "descriptors.json"


class UsageError(Exception):
    """Bad arguments, unreadable inputs or an invalid configuration (exit status 2)."""


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _load_config(args) -> config_mod.PipelineConfig:
    try:
        cfg = config_mod.reference()
        if args.config:
            cfg = config_mod.load(args.config, base=cfg)
    except config_mod.ConfigError as e:
        raise UsageError(str(e)) from None
    if args.seed is not None:
        cfg.run.seed = args.seed
    if getattr(args, "keyframe_cadence", None) is not None:
        cfg.run.keyframe_cadence = args.keyframe_cadence
    if getattr(args, "no_loop_closures", False):
        cfg.run.loop_closures = False
    if getattr(args, "drift_sigma_rot", None) is not None:
        cfg.drift.sigma_rot = args.drift_sigma_rot
    if getattr(args, "drift_sigma_trans", None) is not None:
        cfg.drift.sigma_trans = args.drift_sigma_trans
    if args.out is not None:
        cfg.run.out = args.out
    try:
        cfg.validate()
    except config_mod.ConfigError as e:
        raise UsageError(str(e)) from None
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise UsageError(f"output directory {out} is not writable: {e.strerror}") from None
    return out


def _need(path: Path) -> Path:
    if not path.is_file():
        raise UsageError(f"missing input file {path}")
    return path


def _read_trajectory(path: Path) -> list:
    try:
        return import_tum(_need(path).read_text())[1]
    except ValueError as e:
        raise UsageError(f"{path}: {e}") from None


def _load_world(d: Path):
    try:
        world = ws.World.from_dict(json.loads(_need(d / WORLD_FILE).read_text()))
        grid = VoxelGrid.load_raw(_need(d / GRID_FILE))
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"{d}: unreadable world files ({e})") from None
    return world, grid


# -- generate ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg.run.out)
    seed = cfg.run.seed
    try:
        world = ws.generate_world(cfg.world, seed)
    except ws.WorldSpecError as e:
        raise UsageError(f"[world] {e}") from None
    grid = ws.rasterize(world, cfg.frontend.voxel_size)
    traj = ws.apply_drift(ws.generate_trajectory(world, cfg.trajectory, seed), cfg.drift, seed)
    (out / WORLD_FILE).write_text(json.dumps(world.to_dict(), sort_keys=True, indent=1) + "\n")
    grid.dump_raw(out / GRID_FILE)
    (out / TRAJ_FILE).write_text(export_tum(traj.gt_poses))
    (out / ODOM_FILE).write_text(export_tum(traj.odom_poses))
    save_graph(ws.gt_object_room_graph(world), out / GRAPH_FILE)
    _emit({"command": "generate", "seed": seed, "out": str(out), "rooms": len(world.rooms),
           "objects": len(world.objects), "keyframes": len(traj.gt_poses), "voxels": int(grid.size)})
    return 0


# -- run ---------------------------------------------------------------------------

def _descriptors_json(descriptors) -> str:
    rows = [{"keyframe": int(d.keyframe), "vector": [float(x) for x in d.vector()],
             "bbox": [[float(x) for x in d.bbox[0]], [float(x) for x in d.bbox[1]]]}
            for d in sorted(descriptors, key=lambda d: d.keyframe)]
    return json.dumps({"descriptors": rows}) + "\n"


def cmd_run(args) -> int:
    cfg = _load_config(args)
    world_dir = Path(args.world) if args.world else Path(cfg.run.out)
    world, grid = _load_world(world_dir)
    gt = _read_trajectory(world_dir / TRAJ_FILE)
    drift_given = args.drift_sigma_rot is not None or args.drift_sigma_trans is not None
    if drift_given or not (world_dir / ODOM_FILE).is_file():
        traj = ws.apply_drift(ws.Trajectory(gt), cfg.drift, cfg.run.seed)
    else:
        odom = _read_trajectory(world_dir / ODOM_FILE)
        if len(odom) != len(gt):
            raise UsageError("odometry and ground-truth trajectories differ in length")
        traj = ws.Trajectory(gt, odom, cfg.drift)
    if abs(grid.voxel_size - cfg.frontend.voxel_size) > 1e-12:
        grid = ws.rasterize(world, cfg.frontend.voxel_size)
    out = _out_dir(cfg.run.out)
    res = run_pipeline(world, traj, cfg, render_grid=grid)
    save_graph(res.graph, out / GRAPH_FILE)
    save_graph(res.frontend_graph, out / FRONTEND_FILE)
    (out / CLOSURES_FILE).write_text(closures_to_csv(res.closures))
    (out / TRAJ_FILE).write_text(export_tum(res.estimated_poses))
    (out / ODOM_FILE).write_text(export_tum(res.odom_poses))
    (out / DESCRIPTORS_FILE).write_text(_descriptors_json(res.descriptors))
    opt = res.optimization
    _emit({"command": "run", "seed": cfg.run.seed, "out": str(out), "keyframes": len(res.keyframes),
           "closures": len(res.closures),
           "closure_inliers": int(opt.closure_inliers.sum()) if opt is not None else 0,
           "nodes": res.graph.num_nodes(), "edges": res.graph.num_edges(),
           "runtimes_ms": {k: round(v, 1) for k, v in res.runtimes_ms.items()}})
    return 0


# -- eval --------------------------------------------------------------------------

def evaluate_dirs(est_dir: Path, gt_dir: Path, cfg: config_mod.PipelineConfig) -> ev.MetricsReport:
    world, grid = _load_world(gt_dir)
    try:
        est = load_graph(_need(est_dir / GRAPH_FILE))
    except SerializationError as e:
        raise UsageError(f"{est_dir / GRAPH_FILE}: {e}") from None
    ecfg = cfg.evaluation
    rep = ev.MetricsReport()
    found = ev.object_metrics(ev.graph_objects(est), ev.world_objects(world), ecfg.object_threshold)
    if found is not None:
        rep.object_found_pct, rep.object_correct_pct = found
    gt_labels = ev.gt_room_labels(world, grid)
    if est.num_nodes(Layer.PLACES):
        places = np.array([est.attrs(p).position for p in est.nodes(Layer.PLACES)])
        centers = ev.gt_gvd_centers(grid, cfg.frontend.theta_min, cfg.frontend.n_b)
        rep.place_position_error_mean = ev.place_position_error(places, centers)
        est_labels = ev.estimated_room_labels(est, grid)
    else:
        # a ground-truth artifact set carries its rooms as voxel sets of the world itself
        est_labels = ev.gt_room_labels(ws.World.from_dict(json.loads((est_dir / WORLD_FILE).read_text())), grid) \
            if (est_dir / WORLD_FILE).is_file() else None
    if est_labels is not None:
        rep.room_precision, rep.room_recall = ev.room_pr_labels(est_labels, gt_labels)
    est_traj = _read_trajectory(est_dir / TRAJ_FILE)
    gt_traj = _read_trajectory(gt_dir / TRAJ_FILE)
    if len(est_traj) != len(gt_traj):
        raise UsageError(f"trajectory lengths differ: {len(est_traj)} vs {len(gt_traj)}")
    rep.ate_rmse = ev.ate(est_traj, gt_traj)
    dpath = est_dir / DESCRIPTORS_FILE
    if dpath.is_file():
        rows = json.loads(dpath.read_text())["descriptors"]
        if len(rows) > 1:
            H = np.array([r["vector"] for r in rows])
            boxes = [(np.array(r["bbox"][0]), np.array(r["bbox"][1])) for r in rows]
            rep.descriptor_p_at_k = {str(k): ev.descriptor_p_at_k(H, boxes, k, ecfg.iou_threshold)
                                     for k in ecfg.p_at_k if k < len(rows)}
    labels = max(len(world.label_names), 1)
    flat = memory_footprint(world, MemoryModel(MemoryMode.FLAT, grid.voxel_size, labels), grid)
    hier = memory_footprint(world, MemoryModel(MemoryMode.HIERARCHICAL, grid.voxel_size, labels), grid)
    comp = memory_footprint(est, MemoryModel(MemoryMode.COMPRESSED, grid.voxel_size, labels))
    rep.memory_counts = {"flat_symbols": flat.symbols, "hierarchical_symbols": hier.symbols,
                         "hierarchical_edges": hier.edges, "compressed_symbols": comp.symbols,
                         "compressed_edges": comp.edges}
    rep.validate()
    return rep


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    rep = evaluate_dirs(Path(args.est), Path(args.gt), cfg)
    out = _out_dir(cfg.run.out)
    (out / "metrics.json").write_text(rep.to_json() + "\n")
    (out / "metrics.csv").write_text(rep.to_csv())
    _emit({"command": "eval", **{k: v for k, v in rep.flat().items() if not k.startswith("runtimes")}})
    return 0


# -- decompose ---------------------------------------------------------------------

def _target(g: SceneGraph) -> SceneGraph:
    """The object-room-building part that the hierarchical decomposition works on."""
    return object_room_graph(g) if g.num_nodes(Layer.PLACES) else g


def _layer_adjacency(g: SceneGraph, layer: Layer) -> dict:
    nodes = [n for n in g.nodes(layer)]
    return {n: set(g.neighbors(n, layer)) for n in nodes}


def _object_layer_width(g: SceneGraph) -> int:
    adj = _layer_adjacency(g, Layer.OBJECTS)
    return treewidth_upper_bound(adj) if adj else -1


def _graph_files(root: Path) -> list:
    return sorted(p for p in root.rglob(GRAPH_FILE))


def cmd_decompose(args) -> int:
    path = Path(args.graph)
    out = _out_dir(args.out if args.out is not None else config_mod.RunConfig().out)
    heuristic = Heuristic(args.heuristic)
    if path.is_dir():
        rows = []
        for f in _graph_files(path):
            g = _target(load_graph(f))
            rooms = _layer_adjacency(g, Layer.ROOMS)
            row = {"file": str(f.relative_to(path)),
                   "rooms": treewidth_upper_bound(rooms) if rooms else -1,
                   "objects": _object_layer_width(g)}
            try:
                row["full"] = td_hierarchical(g).width()
            except HierarchyError:
                row["full"] = -1
            rows.append(row)
        if not rows:
            raise UsageError(f"no {GRAPH_FILE} under {path}")
        hist = Counter((layer, r[layer]) for r in rows for layer in ("rooms", "objects", "full"))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "width", "count"])
        for (layer, width), count in sorted(hist.items()):
            w.writerow([layer, width, count])
        (out / "width_histogram.csv").write_text(buf.getvalue())
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["file", "rooms", "objects", "full"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        (out / "widths.csv").write_text(buf.getvalue())
        _emit({"command": "decompose", "graphs": len(rows), "max_room_width": max(r["rooms"] for r in rows),
               "max_full_width": max(r["full"] for r in rows)})
        return 0
    try:
        g = _target(load_graph(_need(path)))
    except SerializationError as e:
        raise UsageError(f"{path}: {e}") from None
    if args.hierarchical:
        try:
            td = td_hierarchical(g, heuristic=heuristic)
        except HierarchyError as e:
            raise UsageError(f"graph is not hierarchical: {e}") from None
    else:
        td = td_heuristic(g, heuristic)
    report = validate_td(g.adjacency(), td)
    (out / "td.json").write_text(json.dumps(td.to_dict(), sort_keys=True) + "\n")
    summary = {"command": "decompose", "width": td.width(), "bags": len(td.bags), "valid": report.ok,
               "mode": "hierarchical" if args.hierarchical else heuristic.value}
    if args.htree:
        ht = build_htree(g)
        (out / "htree.json").write_text(json.dumps(ht.to_dict(), sort_keys=True) + "\n")
        summary["htree_nodes"] = len(ht.nodes)
    _emit(summary)
    return 0


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding the reference settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    drift = argparse.ArgumentParser(add_help=False)
    drift.add_argument("--drift-sigma-rot", type=float, help="odometry rotation noise per keyframe (rad)")
    drift.add_argument("--drift-sigma-trans", type=float, help="odometry translation noise per keyframe (m)")

    p = argparse.ArgumentParser(prog="scenegraph3d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common, drift], help="write a synthetic world and its trajectory")
    r = sub.add_parser("run", parents=[common, drift], help="build and optimize a scene graph")
    r.add_argument("--world", help="directory written by generate (defaults to --out)")
    r.add_argument("--keyframe-cadence", type=int, help="keyframes between slow-stage passes")
    r.add_argument("--no-loop-closures", action="store_true")
    e = sub.add_parser("eval", parents=[common], help="score an artifact set against ground truth")
    e.add_argument("--est", required=True, help="directory with the estimated artifacts")
    e.add_argument("--gt", required=True, help="directory written by generate")
    d = sub.add_parser("decompose", help="tree decomposition of a scene graph file or a directory of them")
    d.add_argument("graph")
    d.add_argument("--out")
    d.add_argument("--hierarchical", action="store_true", help="decompose layer by layer (needs a valid hierarchy)")
    d.add_argument("--heuristic", choices=[h.value for h in Heuristic], default=Heuristic.MIN_DEGREE.value)
    d.add_argument("--htree", action="store_true", help="also write the H-tree")
    return p


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "eval": cmd_eval, "decompose": cmd_decompose}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
