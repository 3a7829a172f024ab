"""Procedural indoor worlds: floorplans, objects, rasterization, trajectories, observations."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import se3
from .raycast import segments_blocked
from .scene_graph import BuildingAttrs, Layer, ObjectAttrs, RoomAttrs, SceneGraph
from .voxels import CEILING, FLOOR, NEIGHBORS_6, OBJECT_LABEL_BASE, WALL, VoxelGrid

DEFAULT_LABELS = ("chair", "table", "sofa", "bed", "cabinet", "plant", "tv", "lamp")


class WorldSpecError(ValueError):
    pass


class PathfindingError(RuntimeError):
    pass


@dataclass
class WorldSpec:
    num_rooms: tuple = (4, 6)
    room_size: tuple = (3.5, 6.0)  # side length range (m)
    room_height: float = 2.5
    wall_thickness: float = 0.25
    door_width: tuple = (0.5, 1.2)
    door_height: float = 2.0
    objects_per_room: tuple = (2, 4)
    object_size: tuple = (0.4, 0.9)  # horizontal extent range (m)
    object_height: tuple = (0.4, 1.0)
    labels: tuple = DEFAULT_LABELS
    extra_door_prob: float = 0.2
    bounded_doors: bool = False  # every room connects to at most two multi-door rooms
    floors: int = 1

    def validate(self) -> None:
        lo, hi = self.num_rooms
        if lo < 1 or hi < lo:
            raise WorldSpecError(f"num_rooms range {self.num_rooms} is infeasible")
        if self.room_size[0] <= 2 * 0.6 or self.room_size[1] < self.room_size[0]:
            raise WorldSpecError(f"room_size range {self.room_size} is infeasible")
        if not (0 < self.door_width[0] <= self.door_width[1]):
            raise WorldSpecError(f"door_width range {self.door_width} is infeasible")
        if self.door_width[1] > self.room_size[0] - 0.6:
            raise WorldSpecError("doors wider than the smallest wall")
        if self.objects_per_room[0] < 0 or self.objects_per_room[1] < self.objects_per_room[0]:
            raise WorldSpecError(f"objects_per_room range {self.objects_per_room} is infeasible")
        if self.objects_per_room[1] > 0 and not self.labels:
            raise WorldSpecError("objects requested but label vocabulary is empty")
        if self.room_height <= self.door_height or self.wall_thickness <= 0:
            raise WorldSpecError("room height must exceed door height; walls need thickness")
        if self.floors not in (1, 2):
            raise WorldSpecError("floors must be 1 or 2")


@dataclass
class Room:
    id: int
    box_min: np.ndarray  # free interior, half-open [min, max)
    box_max: np.ndarray
    label: int = 0
    floor: int = 0

    @property
    def footprint(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.box_min[:2], self.box_max[:2]
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    @property
    def height(self) -> float:
        return float(self.box_max[2] - self.box_min[2])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.box_min + self.box_max)


@dataclass
class Door:
    rooms: tuple  # (lower id, higher id)
    box_min: np.ndarray
    box_max: np.ndarray
    width: float
    vertical: bool = False  # stair opening between floors

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.box_min + self.box_max)


@dataclass
class WorldObject:
    id: int
    label: int  # semantic label id (OBJECT_LABEL_BASE + vocab index)
    center: np.ndarray
    extent: np.ndarray  # full side lengths
    room: int

    @property
    def box_min(self) -> np.ndarray:
        return self.center - 0.5 * self.extent

    @property
    def box_max(self) -> np.ndarray:
        return self.center + 0.5 * self.extent


@dataclass
class World:
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    rooms: list
    doors: list
    objects: list
    seed: int = 0
    label_names: tuple = DEFAULT_LABELS
    floor_levels: tuple = (0.0,)  # z of each floor's walking surface
    room_height: float = 2.5
    planar: bool = False  # single voxel slice, no floor/ceiling slabs

    def door_graph(self) -> dict:
        adj = {r.id: set() for r in self.rooms}
        for d in self.doors:
            a, b = d.rooms
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def room_of_point(self, p) -> int:
        for r in self.rooms:
            if np.all(p >= r.box_min) and np.all(p < r.box_max):
                return r.id
        return -1

    def label_name(self, label: int) -> str:
        i = label - OBJECT_LABEL_BASE
        return self.label_names[i] if 0 <= i < len(self.label_names) else str(label)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed), "bounds_min": self.bounds_min.tolist(), "bounds_max": self.bounds_max.tolist(),
            "label_names": list(self.label_names), "floor_levels": list(self.floor_levels),
            "room_height": self.room_height, "planar": self.planar,
            "rooms": [{"id": r.id, "box_min": r.box_min.tolist(), "box_max": r.box_max.tolist(),
                       "label": r.label, "floor": r.floor} for r in self.rooms],
            "doors": [{"rooms": list(d.rooms), "box_min": d.box_min.tolist(), "box_max": d.box_max.tolist(),
                       "width": d.width, "vertical": d.vertical} for d in self.doors],
            "objects": [{"id": o.id, "label": o.label, "center": o.center.tolist(), "extent": o.extent.tolist(),
                         "room": o.room} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        a = np.asarray
        return cls(
            a(d["bounds_min"], float), a(d["bounds_max"], float),
            [Room(r["id"], a(r["box_min"], float), a(r["box_max"], float), r["label"], r["floor"]) for r in d["rooms"]],
            [Door(tuple(x["rooms"]), a(x["box_min"], float), a(x["box_max"], float), x["width"], x["vertical"])
             for x in d["doors"]],
            [WorldObject(o["id"], o["label"], a(o["center"], float), a(o["extent"], float), o["room"])
             for o in d["objects"]],
            d["seed"], tuple(d["label_names"]), tuple(d["floor_levels"]), d["room_height"], d["planar"])


# -- generation ------------------------------------------------------------------

def bounded_doors_hypothesis(adj: dict) -> bool:
    """Every room has at most two neighbors that themselves have doors to other rooms."""
    return all(sum(1 for m in adj[n] if len(adj[m]) >= 2) <= 2 for n in adj)


def _pick_cells(rng, n, cols, rows):
    start = (int(rng.integers(cols)), int(rng.integers(rows)))
    chosen = [start]
    chosen_set = {start}
    while len(chosen) < n:
        frontier = sorted({(c + dc, r + dr) for c, r in chosen for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1))
                           if 0 <= c + dc < cols and 0 <= r + dr < rows} - chosen_set)
        cell = frontier[int(rng.integers(len(frontier)))]
        chosen.append(cell)
        chosen_set.add(cell)
    return chosen


def _door_edges(rng, cells, spec):
    index = {c: i for i, c in enumerate(cells)}
    pairs = sorted({(min(index[c], index[d]), max(index[c], index[d]))
                    for c in cells for d in ((c[0] + 1, c[1]), (c[0], c[1] + 1)) if d in index})
    order = rng.permutation(len(pairs))
    parent = list(range(len(cells)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree, rest = [], []
    for k in order:
        a, b = pairs[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append(pairs[k])
        else:
            rest.append(pairs[k])
    edges = list(tree)
    for p in rest:
        if rng.random() < spec.extra_door_prob:
            trial = edges + [p]
            if spec.bounded_doors:
                adj = {i: set() for i in range(len(cells))}
                for a, b in trial:
                    adj[a].add(b)
                    adj[b].add(a)
                if not bounded_doors_hypothesis(adj):
                    continue
            edges = trial
    return sorted(edges)


def _layout(rng, spec):
    n = int(rng.integers(spec.num_rooms[0], spec.num_rooms[1] + 1))
    cols = int(np.ceil(np.sqrt(n))) + 1
    rows = cols
    widths = rng.uniform(*spec.room_size, size=cols)
    heights = rng.uniform(*spec.room_size, size=rows)
    xs = np.concatenate([[0.0], np.cumsum(widths)])
    ys = np.concatenate([[0.0], np.cumsum(heights)])
    cells = _pick_cells(rng, n, cols, rows)
    edges = _door_edges(rng, cells, spec)
    return cells, edges, xs, ys


def generate_world(spec: WorldSpec | None = None, seed: int = 0) -> World:
    spec = spec or WorldSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    for _ in range(500):
        cells, edges, xs, ys = _layout(rng, spec)
        if not spec.bounded_doors:
            break
        adj = {i: set() for i in range(len(cells))}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        if bounded_doors_hypothesis(adj):
            break
    else:
        raise WorldSpecError("could not satisfy the two-multi-door-neighbor condition")

    t, h = spec.wall_thickness, spec.room_height
    used_c = sorted({c for c, _ in cells})
    used_r = sorted({r for _, r in cells})
    x_lo, x_hi = xs[used_c[0]], xs[used_c[-1] + 1]
    y_lo, y_hi = ys[used_r[0]], ys[used_r[-1] + 1]
    floor_levels = tuple(f * (h + t) for f in range(spec.floors))
    rooms: list[Room] = []
    doors: list[Door] = []
    per_floor = len(cells)
    for f, z0 in enumerate(floor_levels):
        for i, (c, r) in enumerate(cells):
            bmin = np.array([xs[c] + t / 2 - x_lo, ys[r] + t / 2 - y_lo, z0])
            bmax = np.array([xs[c + 1] - t / 2 - x_lo, ys[r + 1] - t / 2 - y_lo, z0 + h])
            rooms.append(Room(f * per_floor + i, bmin, bmax, label=0, floor=f))
        fedges = edges if f == 0 else _door_edges(rng, cells, spec)
        for a, b in fedges:
            ra, rb = rooms[f * per_floor + a], rooms[f * per_floor + b]
            doors.append(_make_door(rng, ra, rb, spec))
    if spec.floors == 2:
        doors.append(_make_stair(rng, rooms, per_floor, spec))
    for r in rooms:
        r.label = int(rng.integers(0, 4))

    objects: list[WorldObject] = []
    for r in rooms:
        k = int(rng.integers(spec.objects_per_room[0], spec.objects_per_room[1] + 1))
        blocked = [d for d in doors if r.id in d.rooms]
        for _ in range(k):
            obj = _place_object(rng, r, blocked, [o for o in objects if o.room == r.id], spec, len(objects))
            if obj is not None:
                objects.append(obj)

    bounds_min = np.array([-t / 2, -t / 2, -t])
    bounds_max = np.array([x_hi - x_lo + t / 2, y_hi - y_lo + t / 2, floor_levels[-1] + h + t])
    return World(bounds_min, bounds_max, rooms, doors, objects, seed, tuple(spec.labels), floor_levels, h)


def _make_door(rng, ra: Room, rb: Room, spec) -> Door:
    t = spec.wall_thickness
    for ax in (0, 1):
        other = 1 - ax
        if abs(ra.box_max[ax] + t - rb.box_min[ax]) < 1e-6 or abs(rb.box_max[ax] + t - ra.box_min[ax]) < 1e-6:
            lo_room, hi_room = (ra, rb) if ra.box_max[ax] < rb.box_min[ax] else (rb, ra)
            wall_lo, wall_hi = lo_room.box_max[ax], hi_room.box_min[ax]
            s0 = max(ra.box_min[other], rb.box_min[other]) + 0.3
            s1 = min(ra.box_max[other], rb.box_max[other]) - 0.3
            w = float(min(rng.uniform(*spec.door_width), s1 - s0))
            c = rng.uniform(s0 + w / 2, s1 - w / 2)
            bmin = np.zeros(3)
            bmax = np.zeros(3)
            bmin[ax], bmax[ax] = wall_lo - 0.01, wall_hi + 0.01
            bmin[other], bmax[other] = c - w / 2, c + w / 2
            bmin[2], bmax[2] = ra.box_min[2], ra.box_min[2] + spec.door_height
            return Door((min(ra.id, rb.id), max(ra.id, rb.id)), bmin, bmax, w)
    raise WorldSpecError(f"rooms {ra.id} and {rb.id} are not adjacent")


def _make_stair(rng, rooms, per_floor, spec) -> Door:
    i = int(rng.integers(per_floor))
    lo, hi = rooms[i], rooms[per_floor + i]
    side = 1.2
    x = rng.uniform(lo.box_min[0] + 0.4, lo.box_max[0] - 0.4 - side)
    y = rng.uniform(lo.box_min[1] + 0.4, lo.box_max[1] - 0.4 - side)
    bmin = np.array([x, y, lo.box_max[2] - 0.01])
    bmax = np.array([x + side, y + side, hi.box_min[2] + 0.01])
    return Door((lo.id, hi.id), bmin, bmax, side, vertical=True)


def _place_object(rng, room: Room, doors, others, spec, oid):
    """Furniture stands against a wall, which keeps the middle of the room open."""
    gap = 0.1
    for _ in range(60):
        ext = np.array([rng.uniform(*spec.object_size), rng.uniform(*spec.object_size),
                        rng.uniform(*spec.object_height)])
        lo = room.box_min[:2] + gap + ext[:2] / 2
        hi = room.box_max[:2] - gap - ext[:2] / 2
        if np.any(hi <= lo):
            return None
        xy = rng.uniform(lo, hi)
        side = int(rng.integers(4))
        ax = side // 2
        xy[ax] = lo[ax] if side % 2 == 0 else hi[ax]
        center = np.array([xy[0], xy[1], room.box_min[2] + ext[2] / 2])
        bmin, bmax = center - ext / 2, center + ext / 2
        ok = True
        for d in doors:
            # keep a clear zone around door openings and stair holes
            if np.all(bmax[:2] > d.box_min[:2] - 1.0) and np.all(bmin[:2] < d.box_max[:2] + 1.0):
                ok = False
                break
        for o in others:
            if np.all(bmax[:2] > o.box_min[:2] - 0.6) and np.all(bmin[:2] < o.box_max[:2] + 0.6):
                ok = False
                break
        if ok:
            label = OBJECT_LABEL_BASE + int(rng.integers(len(spec.labels)))
            return WorldObject(oid, label, center, ext, room.id)
    return None


def fig2_world() -> World:
    """Planar 21 x 16 cell layout: four rooms behind an outer wall ring, 14 objects.

    At voxel size 1 it has 336 cells, 4 rooms, 14 objects and one building.
    """
    z0, z1 = 0.0, 1.0
    boxes = [((1, 1), (10, 7)), ((11, 1), (20, 7)), ((1, 8), (10, 15)), ((11, 8), (20, 15))]
    rooms = [Room(i, np.array([a[0], a[1], z0], float), np.array([b[0], b[1], z1], float)) for i, (a, b) in
             enumerate(boxes)]
    doors = [
        Door((0, 1), np.array([10, 3, z0], float), np.array([11, 4, z1], float), 1.0),
        Door((0, 2), np.array([4, 7, z0], float), np.array([5, 8, z1], float), 1.0),
        Door((1, 3), np.array([15, 7, z0], float), np.array([16, 8, z1], float), 1.0),
        Door((2, 3), np.array([10, 11, z0], float), np.array([11, 12, z1], float), 1.0),
    ]
    cells = [(2, 2), (7, 5), (8, 2), (2, 5),
             (13, 2), (18, 5), (18, 2), (13, 5),
             (2, 10), (7, 13), (2, 13),
             (13, 10), (17, 13), (18, 10)]
    objects = []
    for i, (x, y) in enumerate(cells):
        room = next(r.id for r in rooms if r.box_min[0] <= x < r.box_max[0] and r.box_min[1] <= y < r.box_max[1])
        objects.append(WorldObject(i, OBJECT_LABEL_BASE + i % 4, np.array([x + 0.5, y + 0.5, 0.5]),
                                   np.array([1.0, 1.0, 1.0]), room))
    return World(np.zeros(3), np.array([21.0, 16.0, 1.0]), rooms, doors, objects, seed=0,
                 label_names=DEFAULT_LABELS[:4], floor_levels=(0.0,), room_height=1.0, planar=True)


# -- rasterization ------------------------------------------------------------------

def _in_box(p, bmin, bmax):
    return np.all((p >= bmin) & (p < bmax), axis=-1)


def rasterize(world: World, voxel_size: float) -> VoxelGrid:
    if not voxel_size > 0:
        raise ValueError("voxel size must be positive")
    vs = float(voxel_size)
    ext = world.bounds_max - world.bounds_min
    dims = tuple(int(v) for v in np.maximum(1, np.ceil(ext / vs - 1e-9)))
    origin = world.bounds_min.copy()
    ii = [np.arange(d) for d in dims]
    centers = origin + (np.stack(np.meshgrid(*ii, indexing="ij"), axis=-1) + 0.5) * vs
    free = np.zeros(dims, bool)
    for r in world.rooms:
        free |= _in_box(centers, r.box_min, r.box_max)
    for d in world.doors:
        free |= _in_box(centers, d.box_min, d.box_max)
    occupied = ~free
    labels = np.zeros(dims, np.int32)
    if not world.planar:
        z = centers[..., 2]
        level = np.zeros(dims)
        for zf in world.floor_levels:
            level = np.where(z >= zf - 1e-9, zf, level)
        rel = z - level
        labels[occupied] = WALL
        labels[occupied & (rel < 0)] = FLOOR
        labels[occupied & (rel >= world.room_height)] = CEILING
    else:
        labels[occupied] = WALL
    object_ids = np.full(dims, -1, np.int32)
    for o in world.objects:
        m = _in_box(centers, o.box_min, o.box_max)
        occupied |= m
        labels[m] = o.label
        object_ids[m] = o.id
    return VoxelGrid(origin, vs, occupied, labels, np.ones(dims, bool), object_ids)


def room_voxel_sets(world: World, grid: VoxelGrid) -> dict:
    """Free voxels (flat indices) per room; door voxels go to the lower-id room."""
    free = ~grid.occupied
    idx = np.argwhere(free)
    centers = grid.center_of(idx)
    flat = grid.flat(idx)
    owner = np.full(len(idx), -1)
    for r in world.rooms:
        m = _in_box(centers, r.box_min, r.box_max) & (owner < 0)
        owner[m] = r.id
    for d in sorted(world.doors, key=lambda d: d.rooms):
        m = _in_box(centers, d.box_min, d.box_max) & (owner < 0)
        owner[m] = d.rooms[0]
    return {r.id: set(flat[owner == r.id].tolist()) for r in world.rooms}


def gt_object_room_graph(world: World, object_edge_radius: float = 2.0) -> SceneGraph:
    """Ground-truth object-room-building graph (objects linked within a room by proximity)."""
    g = SceneGraph()
    room_ids = {}
    for r in world.rooms:
        room_ids[r.id] = g.add_node(Layer.ROOMS, RoomAttrs(r.center, r.label))
    b = g.add_node(Layer.BUILDING, BuildingAttrs(np.mean([r.center for r in world.rooms], axis=0)))
    for r in world.rooms:
        g.add_edge(room_ids[r.id], b)
    for d in world.doors:
        g.add_edge(room_ids[d.rooms[0]], room_ids[d.rooms[1]])
    obj_ids = {}
    for o in world.objects:
        obj_ids[o.id] = g.add_node(Layer.OBJECTS, ObjectAttrs(o.label, o.center, o.box_min, o.box_max))
        g.add_edge(obj_ids[o.id], room_ids[o.room])
    for i, a in enumerate(world.objects):
        for c in world.objects[i + 1:]:
            if a.room == c.room and np.linalg.norm(a.center - c.center) <= object_edge_radius:
                g.add_edge(obj_ids[a.id], obj_ids[c.id])
    return g


# -- trajectories -----------------------------------------------------------------

@dataclass
class TrajectorySpec:
    keyframe_spacing: float = 0.5
    clearance: float = 0.35
    camera_height: float = 1.25
    revisit: bool = True
    laps: int = 1  # the room tour is repeated this many times
    plan_resolution: float = 0.1


@dataclass
class DriftModel:
    sigma_rot: float = 0.0
    sigma_trans: float = 0.0


@dataclass
class Trajectory:
    gt_poses: list
    odom_poses: list = field(default_factory=list)
    drift: DriftModel = field(default_factory=DriftModel)

    def __len__(self):
        return len(self.gt_poses)


def _plan_grid(world: World, floor: int, res: float, clearance: float):
    z0 = world.floor_levels[floor]
    lo = world.bounds_min[:2]
    dims = np.ceil((world.bounds_max[:2] - lo) / res).astype(int)
    ii = np.stack(np.meshgrid(np.arange(dims[0]), np.arange(dims[1]), indexing="ij"), -1)
    c2 = lo + (ii + 0.5) * res
    free = np.zeros(tuple(dims), bool)
    for r in world.rooms:
        if r.floor == floor:
            free |= np.all((c2 >= r.box_min[:2] + clearance) & (c2 < r.box_max[:2] - clearance), -1)
    for d in world.doors:
        if not d.vertical and d.box_min[2] <= z0 + 0.01 < d.box_max[2]:
            # door passage: shrink across the door width only
            across = 0 if (d.box_max[0] - d.box_min[0]) < (d.box_max[1] - d.box_min[1]) else 1
            bmin, bmax = d.box_min[:2].copy(), d.box_max[:2].copy()
            bmin[across] -= clearance + 0.05
            bmax[across] += clearance + 0.05
            other = 1 - across
            half = max(0.5 * (bmax[other] - bmin[other]) - clearance, 0.5 * res)
            mid = 0.5 * (bmin[other] + bmax[other])
            bmin[other], bmax[other] = mid - half, mid + half
            free |= np.all((c2 >= bmin) & (c2 < bmax), -1)
    for o in world.objects:
        if world.rooms[o.room].floor == floor:
            free &= ~np.all((c2 >= o.box_min[:2] - clearance) & (c2 < o.box_max[:2] + clearance), -1)
    return free, lo


def _astar(free, start, goal):
    if not free[start] or not free[goal]:
        raise PathfindingError("start or goal blocked")
    moves = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, 2 ** .5), (1, -1, 2 ** .5), (-1, 1, 2 ** .5), (-1, -1, 2 ** .5)]
    nx, ny = free.shape
    g = {start: 0.0}
    prev = {}
    h = lambda p: ((p[0] - goal[0]) ** 2 + (p[1] - goal[1]) ** 2) ** .5
    pq = [(h(start), 0.0, start)]
    while pq:
        f, gc, p = heapq.heappop(pq)
        if p == goal:
            path = [p]
            while p in prev:
                p = prev[p]
                path.append(p)
            return path[::-1]
        if gc > g[p]:
            continue
        for dx, dy, w in moves:
            q = (p[0] + dx, p[1] + dy)
            if 0 <= q[0] < nx and 0 <= q[1] < ny and free[q]:
                if dx and dy and not (free[p[0] + dx, p[1]] and free[p[0], p[1] + dy]):
                    continue
                ng = gc + w
                if ng < g.get(q, np.inf):
                    g[q] = ng
                    prev[q] = p
                    heapq.heappush(pq, (ng + h(q), ng, q))
    raise PathfindingError("no collision-free path between waypoints")


def _nearest_free(free, cell):
    if free[cell]:
        return cell
    idx = np.argwhere(free)
    if len(idx) == 0:
        raise PathfindingError("no free cell on this floor")
    k = np.argmin(((idx - np.array(cell)) ** 2).sum(1))
    return tuple(int(v) for v in idx[k])


def _room_walk(world: World, rng, revisit: bool) -> list:
    adj = world.door_graph()
    order = []
    seen = set()

    def dfs(u):
        seen.add(u)
        order.append(u)
        nbrs = sorted(adj[u])
        rng.shuffle(nbrs)
        for v in nbrs:
            if v not in seen:
                dfs(v)
                if revisit:
                    order.append(u)

    dfs(world.rooms[0].id)
    return order


def generate_trajectory(world: World, spec: TrajectorySpec | None = None, seed: int = 0) -> Trajectory:
    spec = spec or TrajectorySpec()
    rng = np.random.default_rng(seed)
    res = spec.plan_resolution
    walk = _room_walk(world, rng, spec.revisit)
    if spec.laps < 1:
        raise ValueError("laps must be at least 1")
    tour = list(walk)
    for _ in range(spec.laps - 1):
        # a closed tour repeats as is, an open one is walked back and forth
        nxt = walk if walk[-1] == walk[0] or tour[-1] == walk[0] else walk[::-1]
        tour += nxt[1:]
    walk = tour
    grids = [_plan_grid(world, f, res, spec.clearance) for f in range(len(world.floor_levels))]
    stairs = {tuple(sorted(d.rooms)): d for d in world.doors if d.vertical}

    def cell_of(p, f):
        free, lo = grids[f]
        c = tuple(int(v) for v in np.floor((p[:2] - lo) / res))
        return _nearest_free(free, c)

    def to_xy(cell, f):
        return grids[f][1] + (np.array(cell) + 0.5) * res

    pts: list[np.ndarray] = []
    rooms = {r.id: r for r in world.rooms}

    def go(a_xy, b_xy, f):
        free, _ = grids[f]
        path = _astar(free, cell_of(a_xy, f), cell_of(b_xy, f))
        z = world.floor_levels[f] + spec.camera_height
        for c in path:
            pts.append(np.array([*to_xy(c, f), z]))

    cur = rooms[walk[0]]
    pos = cur.center.copy()
    pts.append(np.array([*to_xy(cell_of(pos, cur.floor), cur.floor), world.floor_levels[cur.floor] + spec.camera_height]))
    for nxt_id in walk[1:]:
        nxt = rooms[nxt_id]
        if nxt.floor == cur.floor:
            go(pts[-1], nxt.center, cur.floor)
        else:
            st = stairs[tuple(sorted((cur.id, nxt.id)))]
            hole = st.center
            go(pts[-1], hole, cur.floor)
            z_to = world.floor_levels[nxt.floor] + spec.camera_height
            top = pts[-1].copy()
            for z in np.linspace(top[2], z_to, 12)[1:]:
                pts.append(np.array([top[0], top[1], z]))
            go(pts[-1], nxt.center, nxt.floor)
        cur = nxt
    poses = _resample(pts, spec.keyframe_spacing)
    if not poses:
        raise PathfindingError("empty trajectory")
    return Trajectory(poses, [], DriftModel())


def _resample(pts, spacing) -> list:
    pts = [p for i, p in enumerate(pts) if i == 0 or np.linalg.norm(p - pts[i - 1]) > 1e-9]
    if len(pts) == 1:
        return [se3.yaw_pose(*pts[0], 0.0)]
    seg = np.array([np.linalg.norm(pts[i + 1] - pts[i]) for i in range(len(pts) - 1)])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(2, int(np.floor(total / spacing)) + 1)
    s_vals = np.linspace(0.0, total, n)
    P = np.array(pts)
    out = []
    yaw = 0.0
    for s in s_vals:
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        a = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        p = P[i] + a * (P[i + 1] - P[i])
        d = P[i + 1] - P[i]
        if np.linalg.norm(d[:2]) > 1e-9:
            yaw = float(np.arctan2(d[1], d[0]))
        out.append(se3.yaw_pose(p[0], p[1], p[2], yaw))
    return out


def apply_drift(traj: Trajectory, drift: DriftModel, seed: int = 0) -> Trajectory:
    rng = np.random.default_rng(seed)
    gt = traj.gt_poses
    if drift.sigma_rot == 0 and drift.sigma_trans == 0:
        return Trajectory(list(gt), [T.copy() for T in gt], drift)
    odom = [gt[0].copy()]
    sig = np.array([drift.sigma_rot] * 3 + [drift.sigma_trans] * 3)
    for k in range(1, len(gt)):
        rel = se3.inv(gt[k - 1]) @ gt[k]
        xi = rng.normal(size=6) * sig
        noise = se3.exp_se3(xi) if np.any(sig > 0) else np.eye(4)
        odom.append(odom[-1] @ rel @ noise)
    return Trajectory(list(gt), odom, drift)


# -- observations ------------------------------------------------------------------

@dataclass
class Observation:
    keyframe: int
    points: np.ndarray  # (N, 3) visible surface-face centers, sensor frame
    labels: np.ndarray  # (N,) semantic labels
    landmark_ids: set  # ground-truth object ids with at least one visible point
    anchors: dict = field(default_factory=dict)  # keypoint id -> position in sensor frame


def _face_table(grid: VoxelGrid):
    if "faces" in grid._cache:
        return grid._cache["faces"]
    surf = np.argwhere(grid.surface_mask())
    vs = grid.voxel_size
    rows_c, rows_n, rows_l, rows_o = [], [], [], []
    occ = grid.occupied
    dims = np.array(grid.dims)
    for d in NEIGHBORS_6:
        nb = surf + d
        inside = np.all((nb >= 0) & (nb < dims), axis=1)
        ok = np.zeros(len(surf), bool)
        ok[inside] = ~occ[tuple(nb[inside].T)]
        s = surf[ok]
        rows_c.append(grid.center_of(s) + 0.5 * vs * d)
        rows_n.append(np.repeat(d[None, :].astype(float), len(s), 0))
        rows_l.append(grid.labels[tuple(s.T)])
        rows_o.append(grid.object_ids[tuple(s.T)] if grid.object_ids is not None else np.full(len(s), -1))
    table = (np.concatenate(rows_c), np.concatenate(rows_n), np.concatenate(rows_l), np.concatenate(rows_o))
    grid._cache["faces"] = table
    return table


ANCHORS_PER_OBJECT = 9


def anchor_points(obj: WorldObject) -> np.ndarray:
    """Keypoints of a landmark: its center then the eight box corners.

    Keypoint k of object i has id i * ANCHORS_PER_OBJECT + k.
    """
    corners = np.array([[sx, sy, sz] for sx in (0, 1) for sy in (0, 1) for sz in (0, 1)], float)
    return np.vstack([obj.center, obj.box_min + corners * (obj.box_max - obj.box_min)])


def render_observation(world: World, grid: VoxelGrid, pose: np.ndarray, max_range: float,
                       keyframe: int = 0) -> Observation:
    o = pose[:3, 3]
    ijk = grid.index_of(o)
    if grid.in_bounds(ijk) and grid.occupied[tuple(ijk)]:
        raise ValueError("sensor pose lies inside an occupied voxel")
    centers, normals, labels, oids = _face_table(grid)
    if max_range <= 0 or len(centers) == 0:
        return Observation(keyframe, np.zeros((0, 3)), np.zeros(0, np.int32), set(), {})
    rel = centers - o
    dist = np.linalg.norm(rel, axis=1)
    facing = np.einsum("ij,ij->i", normals, -rel) > 1e-12
    cand = np.nonzero(facing & (dist <= max_range))[0]
    t_end = 1.0 - 1e-7
    blocked = segments_blocked(grid.occupied, grid.origin, grid.voxel_size, o.astype(float),
                               np.ascontiguousarray(centers[cand]), t_end)
    vis = cand[~blocked]
    inv = se3.inv(pose)
    pts = se3.transform_points(inv, centers[vis])
    seen = sorted({int(i) for i in oids[vis] if i >= 0})
    by_id = {ob.id: ob for ob in world.objects}
    anchors = {}
    for i in seen:
        if i in by_id:
            for k, p in enumerate(se3.transform_points(inv, anchor_points(by_id[i]))):
                anchors[i * ANCHORS_PER_OBJECT + k] = p
    return Observation(keyframe, pts, labels[vis].astype(np.int32), set(seen), anchors)
