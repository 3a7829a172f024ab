"""JSON container for scene graphs and other artifacts.

Floats are written with 17 significant digits so that every value round-trips
exactly; keys and nodes are emitted in a fixed order so output is byte-stable.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .scene_graph import (AgentAttrs, BuildingAttrs, Layer, ObjectAttrs, PlaceAttrs,
                          RoomAttrs, SceneGraph, SurfacePoint)

FORMAT_VERSION = 1


class SerializationError(ValueError):
    pass


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise SerializationError(f"non-finite float {x!r} cannot be written")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(obj):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _emit(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    else:
        raise SerializationError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def loads(data) -> object:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise SerializationError(f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


# -- attrs <-> dict ----------------------------------------------------------

def _v(a) -> list:
    return [float(x) for x in np.asarray(a).reshape(-1)]


def attrs_to_dict(attrs) -> dict:
    if isinstance(attrs, SurfacePoint):
        return {"type": "surface_point", "position": _v(attrs.position), "label": attrs.label,
                "keyframe": attrs.keyframe}
    if isinstance(attrs, ObjectAttrs):
        return {"type": "object", "label": attrs.label, "centroid": _v(attrs.centroid),
                "bbox_min": _v(attrs.bbox_min), "bbox_max": _v(attrs.bbox_max),
                "members": sorted(attrs.members)}
    if isinstance(attrs, AgentAttrs):
        return {"type": "agent", "pose": _v(attrs.pose), "keyframe": attrs.keyframe,
                "appearance": [[k, float(attrs.appearance[k])] for k in sorted(attrs.appearance)]}
    if isinstance(attrs, PlaceAttrs):
        return {"type": "place", "position": _v(attrs.position), "distance": attrs.distance,
                "num_basis": attrs.num_basis, "basis": list(attrs.basis), "keyframe": attrs.keyframe}
    if isinstance(attrs, RoomAttrs):
        return {"type": "room", "centroid": _v(attrs.centroid), "label": attrs.label,
                "members": sorted(attrs.members), "pseudo": attrs.pseudo}
    if isinstance(attrs, BuildingAttrs):
        return {"type": "building", "centroid": _v(attrs.centroid)}
    raise SerializationError(f"unknown attrs type {type(attrs).__name__}")


def attrs_from_dict(d: dict, where: str = "attrs"):
    try:
        t = d["type"]
        if t == "surface_point":
            return SurfacePoint(d["position"], int(d["label"]), int(d.get("keyframe", -1)))
        if t == "object":
            return ObjectAttrs(int(d["label"]), d["centroid"], d["bbox_min"], d["bbox_max"],
                               frozenset(d.get("members", ())))
        if t == "agent":
            return AgentAttrs(np.asarray(d["pose"], dtype=float).reshape(4, 4), int(d["keyframe"]),
                              {int(k): float(v) for k, v in d.get("appearance", [])})
        if t == "place":
            return PlaceAttrs(d["position"], float(d["distance"]), int(d["num_basis"]),
                              tuple(d.get("basis", ())), int(d.get("keyframe", -1)))
        if t == "room":
            return RoomAttrs(d["centroid"], d.get("label"), frozenset(d.get("members", ())),
                             bool(d.get("pseudo", False)))
        if t == "building":
            return BuildingAttrs(d["centroid"])
    except SerializationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{where}: invalid attributes ({e})") from e
    raise SerializationError(f"{where}: unknown node type {t!r}")


def graph_to_dict(graph: SceneGraph) -> dict:
    nodes = []
    for nid in graph.nodes():
        n = graph.node(nid)
        nodes.append({"id": nid, "layer": int(n.layer), "attrs": attrs_to_dict(n.attrs)})
    return {"version": FORMAT_VERSION, "next_id": graph.next_id, "nodes": nodes,
            "edges": [_edge_row(graph, a, b) for a, b in graph.edges()]}


def _edge_row(graph, a, b) -> list:
    d = graph.edge_distance(a, b)
    return [a, b] if d is None else [a, b, float(d)]


def graph_from_dict(doc: dict) -> SceneGraph:
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise SerializationError("top level: expected an object with 'nodes' and 'edges'")
    if doc.get("version") != FORMAT_VERSION:
        raise SerializationError(f"version: unsupported format version {doc.get('version')!r}")
    g = SceneGraph()
    for i, nd in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        try:
            nid, layer = int(nd["id"]), Layer(int(nd["layer"]))
        except (KeyError, TypeError, ValueError) as e:
            raise SerializationError(f"{where}: bad id/layer ({e})") from e
        if nid in g:
            raise SerializationError(f"{where}: duplicate id {nid}")
        attrs = attrs_from_dict(nd.get("attrs", {}), where + ".attrs")
        # ids are preserved verbatim
        g._next_id = nid
        try:
            g.add_node(layer, attrs)
        except Exception as e:
            raise SerializationError(f"{where}: {e}") from e
    g._next_id = max(int(doc.get("next_id", 0)), max(g.nodes(), default=-1) + 1)
    for i, e in enumerate(doc["edges"]):
        try:
            a, b = int(e[0]), int(e[1])
            g.add_edge(a, b, float(e[2]) if len(e) > 2 else None)
        except Exception as ex:
            raise SerializationError(f"edges[{i}]: {ex}") from ex
    return g


def serialize(graph: SceneGraph) -> bytes:
    return dumps(graph_to_dict(graph)).encode("utf-8")


def deserialize(data) -> SceneGraph:
    return graph_from_dict(loads(data))


def save_graph(graph: SceneGraph, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(graph))


def load_graph(path) -> SceneGraph:
    with open(path, "rb") as f:
        return deserialize(f.read())
