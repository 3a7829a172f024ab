import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenegraph3d.scene_graph import (BuildingAttrs, Layer, ObjectAttrs, PlaceAttrs, RoomAttrs,  # noqa: E402
                                      SceneGraph)


def obj(label=10, c=(0.0, 0.0, 0.0), half=0.2):
    c = np.asarray(c, float)
    return ObjectAttrs(label, c, c - half, c + half)


def place(p=(0.0, 0.0, 0.0), d=1.0, nb=2):
    return PlaceAttrs(np.asarray(p, float), d, nb)


def building_graph():
    """Object-room-building graph with eight objects, four rooms and one building.

    Rooms R1, R2, R3 form a triangle and R4 hangs off R3; each room holds two
    linked objects. Returns the graph and a name -> node id map.
    """
    g = SceneGraph()
    ids = {}
    ids["B1"] = g.add_node(Layer.BUILDING, BuildingAttrs(np.zeros(3)))
    for k in range(1, 5):
        ids[f"R{k}"] = g.add_node(Layer.ROOMS, RoomAttrs(np.array([4.0 * k, 0, 0])))
        g.add_edge(ids[f"R{k}"], ids["B1"])
    for a, b in (("R1", "R2"), ("R2", "R3"), ("R1", "R3"), ("R3", "R4")):
        g.add_edge(ids[a], ids[b])
    for k in range(1, 9):
        room = ids[f"R{(k + 1) // 2}"]
        ids[f"O{k}"] = g.add_node(Layer.OBJECTS, obj(10 + k % 3, (4.0 * ((k + 1) // 2) + 0.5 * (k % 2), 1, 0)))
        g.add_edge(ids[f"O{k}"], room)
    for k in range(1, 9, 2):
        g.add_edge(ids[f"O{k}"], ids[f"O{k + 1}"])
    return g, ids


@pytest.fixture
def fig_graph():
    return building_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
