"""Deterministic 2-D grid world shared by the ground and overhead agents.

Coordinates are ``(x, y)`` with ``x`` growing east and ``y`` growing south,
so heading North moves toward smaller ``y``. One cell is one translation
step (``cell_size`` meters, 0.25 by default).
"""

from __future__ import annotations

import enum
import math
import random
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

Cell = tuple[int, int]

WALL = "wall"


class WorldError(Exception):
    pass


class Unreachable(WorldError):
    pass


class NoUniqueObject(WorldError):
    pass


class GenerationFailed(WorldError):
    pass


class Heading(enum.IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def vector(self) -> Cell:
        return _HEADING_VECTORS[self]

    @property
    def letter(self) -> str:
        return self.name[0]

    @classmethod
    def from_letter(cls, letter: str) -> Heading:
        for h in cls:
            if h.letter == letter.upper():
                return h
        raise ValueError(f"bad heading {letter!r}")


_HEADING_VECTORS = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}


class Action(enum.Enum):
    MOVE_AHEAD = "MoveAhead"
    MOVE_BACK = "MoveBack"
    ROTATE_LEFT = "RotateLeft"
    ROTATE_RIGHT = "RotateRight"
    DO_NOTHING = "DoNothing"

    def __str__(self) -> str:
        return self.value


ACTIONS: tuple[Action, ...] = tuple(Action)

_TOKEN_RE = re.compile("|".join(a.value for a in ACTIONS))
_LOOSE_RE = re.compile(
    r"move[\s_-]*ahead|move[\s_-]*back|rotate[\s_-]*left|rotate[\s_-]*right|do[\s_-]*nothing",
    re.IGNORECASE,
)


def parse_action(text: str) -> tuple[Action, bool]:
    """Parse an action token out of free text.

    Returns ``(action, parse_failure)``. An exact token wins; otherwise the
    earliest token occurring anywhere in the text (then a case- and separator-insensitive
    pass). Nothing found gives ``DoNothing`` with the failure flag set.
    """
    stripped = text.strip().strip(".").strip()
    for action in ACTIONS:
        if stripped == action.value:
            return action, False
    m = _TOKEN_RE.search(text)
    if m:
        return Action(m.group(0)), False
    m = _LOOSE_RE.search(text)
    if m:
        key = re.sub(r"[\s_-]", "", m.group(0)).lower()
        for action in ACTIONS:
            if action.value.lower() == key:
                return action, False
    return Action.DO_NOTHING, True


@dataclass(frozen=True, order=True)
class Pose:
    x: int
    y: int
    heading: Heading = Heading.NORTH

    @property
    def cell(self) -> Cell:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "heading": self.heading.name}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(int(d["x"]), int(d["y"]), Heading[d["heading"]])


@dataclass(frozen=True)
class ObjectInstance:
    id: str
    label: str
    cells: tuple[Cell, ...]
    is_obstacle: bool = False

    def __post_init__(self):
        if not self.label:
            raise ValueError("object label must be nonempty")
        if not self.cells:
            raise ValueError(f"object {self.id} has no cells")
        object.__setattr__(self, "cells", tuple(sorted(tuple(c) for c in self.cells)))


@dataclass(frozen=True)
class ActionResult:
    new_pose: Pose
    succeeded: bool
    blocking_object: str | None = None

    def to_dict(self) -> dict:
        return {
            "new_pose": self.new_pose.to_dict(),
            "succeeded": self.succeeded,
            "blocking_object": self.blocking_object,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ActionResult:
        return cls(Pose.from_dict(d["new_pose"]), d["succeeded"], d["blocking_object"])


@dataclass(frozen=True)
class Sighting:
    label: str
    bearing: str  # "Left" | "Center" | "Right"
    distance: float


@dataclass(frozen=True)
class GroundView:
    visible: tuple[Sighting, ...]
    blocked_ahead: bool

    def labels(self) -> set[str]:
        return {s.label for s in self.visible}


@dataclass(frozen=True)
class Crop:
    x: int
    y: int
    width: int
    height: int

    def contains(self, cell: Cell) -> bool:
        return self.x <= cell[0] < self.x + self.width and self.y <= cell[1] < self.y + self.height


@dataclass(frozen=True)
class OverheadView:
    crop: Crop
    semantic_grid: tuple[tuple[str, ...], ...]
    agent_marker: Cell | None

    @property
    def crop_origin(self) -> Cell:
        return (self.crop.x, self.crop.y)

    @property
    def crop_size(self) -> Cell:
        return (self.crop.width, self.crop.height)

    def labels(self) -> set[str]:
        return {c for row in self.semantic_grid for c in row if c not in (FREE_LABEL, BLOCKED_LABEL)}


FREE_LABEL = "."
BLOCKED_LABEL = "#"


@dataclass(frozen=True)
class GridWorld:
    """Occupancy grid with object instances.

    Cells not in ``blocked`` and not covered by an object are free. ``spawn``
    is the default start pose, the analogue of a scene's default agent
    location.
    """

    width: int
    height: int
    blocked: frozenset[Cell]
    objects: tuple[ObjectInstance, ...]
    spawn: Pose
    seed: int = 0
    cell_size: float = 0.25
    name: str = "world"
    _occupancy: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("world must be at least 1x1")
        object.__setattr__(self, "blocked", frozenset(self.blocked))
        ids = set()
        for obj in self.objects:
            if obj.id in ids:
                raise ValueError(f"duplicate object id {obj.id}")
            ids.add(obj.id)
            for c in obj.cells:
                if not self.in_bounds(c):
                    raise ValueError(f"object {obj.id} cell {c} out of bounds")
                if c in self._occupancy or c in self.blocked:
                    raise ValueError(f"cell {c} claimed twice")
                self._occupancy[c] = obj
        for c in self.blocked:
            if not self.in_bounds(c):
                raise ValueError(f"blocked cell {c} out of bounds")
        if not self.is_free(self.spawn.cell):
            raise ValueError(f"spawn {self.spawn} is not on a free cell")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def object_at(self, cell: Cell) -> ObjectInstance | None:
        return self._occupancy.get(cell)

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.blocked and cell not in self._occupancy

    def cell_label(self, cell: Cell) -> str:
        if cell in self.blocked:
            return BLOCKED_LABEL
        obj = self._occupancy.get(cell)
        return obj.label if obj else FREE_LABEL

    def vocabulary(self) -> frozenset[str]:
        return frozenset(o.label for o in self.objects)

    def instances(self, label: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.label == label]

    def target_region(self, label: str) -> frozenset[Cell]:
        """Free cells 4-adjacent to the footprint of every instance of ``label``."""
        key = ("region", label)
        if key not in self._cache:
            region = set()
            for obj in self.instances(label):
                for c in obj.cells:
                    for n in neighbors(c):
                        if self.is_free(n):
                            region.add(n)
            self._cache[key] = frozenset(region)
        return self._cache[key]

    def distance_field(self, goals: frozenset[Cell]) -> dict[Cell, int]:
        """Step counts from every reachable free cell to the nearest goal cell."""
        key = ("field", goals)
        if key not in self._cache:
            self._cache[key] = _bfs_field(self, goals)
        return self._cache[key]

    def free_cells(self) -> list[Cell]:
        return [(x, y) for y in range(self.height) for x in range(self.width) if self.is_free((x, y))]


def neighbors(cell: Cell) -> list[Cell]:
    x, y = cell
    return [(x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)]


def _bfs_field(world: GridWorld, goals: Iterable[Cell]) -> dict[Cell, int]:
    dist: dict[Cell, int] = {}
    queue: deque[Cell] = deque()
    for g in sorted(goals):
        if world.is_free(g) and g not in dist:
            dist[g] = 0
            queue.append(g)
    while queue:
        c = queue.popleft()
        for n in neighbors(c):
            if n not in dist and world.is_free(n):
                dist[n] = dist[c] + 1
                queue.append(n)
    return dist


# --- kinematics ---------------------------------------------------------------


def rotate(heading: Heading, action: Action) -> Heading:
    if action is Action.ROTATE_LEFT:
        return Heading((heading - 1) % 4)
    if action is Action.ROTATE_RIGHT:
        return Heading((heading + 1) % 4)
    return heading


def apply_action(world: GridWorld, pose: Pose, action: Action) -> ActionResult:
    if action in (Action.ROTATE_LEFT, Action.ROTATE_RIGHT):
        return ActionResult(Pose(pose.x, pose.y, rotate(pose.heading, action)), True)
    if action is Action.DO_NOTHING:
        return ActionResult(pose, True)
    dx, dy = pose.heading.vector
    if action is Action.MOVE_BACK:
        dx, dy = -dx, -dy
    target = (pose.x + dx, pose.y + dy)
    if world.is_free(target):
        return ActionResult(Pose(target[0], target[1], pose.heading), True)
    obj = world.object_at(target)
    return ActionResult(pose, False, obj.label if obj else WALL)


def geodesic_distance(world: GridWorld, start: Cell, goals: Iterable[Cell]) -> float:
    """Shortest 4-connected path length over free cells, in meters."""
    goals = frozenset(goals)
    steps = world.distance_field(goals).get(tuple(start))
    if steps is None:
        raise Unreachable(f"no path from {start} to goal set")
    return steps * world.cell_size


def distance_to_target(world: GridWorld, cell: Cell, label: str) -> float:
    return geodesic_distance(world, cell, world.target_region(label))


# --- observations -------------------------------------------------------------


def line_cells(a: Cell, b: Cell) -> list[Cell]:
    """Supercover of the segment between two cell centers (both ends included).

    When the segment passes exactly through a grid corner both side cells are
    included, so sight lines cannot slip between diagonal neighbours.
    """
    x0, y0 = a
    x1, y1 = b
    dx, dy = x1 - x0, y1 - y0
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    x, y = x0, y0
    out = [(x, y)]
    ix = iy = 0
    while ix < nx or iy < ny:
        decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if decision == 0:
            out.append((x + sx, y))
            out.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        out.append((x, y))
    return out


def _relative_angle(pose: Pose, cell: Cell) -> float:
    """Signed angle in degrees from the heading to ``cell``; positive is to the right."""
    fx, fy = pose.heading.vector
    vx, vy = cell[0] - pose.x, cell[1] - pose.y
    # y grows southward, so the cross product sign flips relative to math convention
    cross = fx * vy - fy * vx
    dot = fx * vx + fy * vy
    return math.degrees(math.atan2(cross, dot))


def ground_observation(
    world: GridWorld, pose: Pose, fov_half_angle: float = 45.0, view_range: float = 2.0
) -> GroundView:
    center_band = fov_half_angle / 3.0
    best: dict[str, tuple[float, float, str]] = {}
    for obj in world.objects:
        for cell in obj.cells:
            dist = math.hypot(cell[0] - pose.x, cell[1] - pose.y) * world.cell_size
            if dist > view_range + 1e-9:
                continue
            angle = _relative_angle(pose, cell)
            if abs(angle) > fov_half_angle + 1e-9:
                continue
            path = line_cells(pose.cell, cell)[1:]
            if any(c != cell and not world.is_free(c) for c in path):
                continue
            prev = best.get(obj.id)
            if prev is None or (dist, abs(angle)) < (prev[0], abs(prev[1])):
                best[obj.id] = (dist, angle, obj.label)
    sightings = []
    for dist, angle, label in best.values():
        if abs(angle) <= center_band + 1e-9:
            bearing = "Center"
        elif angle < 0:
            bearing = "Left"
        else:
            bearing = "Right"
        sightings.append(Sighting(label, bearing, round(dist, 4)))
    sightings.sort(key=lambda s: (s.distance, s.label, s.bearing))
    dx, dy = pose.heading.vector
    ahead = (pose.x + dx, pose.y + dy)
    return GroundView(tuple(sightings), not world.is_free(ahead))


def full_crop(world: GridWorld) -> Crop:
    return Crop(0, 0, world.width, world.height)


def overhead_observation(world: GridWorld, pose: Pose, crop: Crop | None = None) -> OverheadView:
    crop = crop or full_crop(world)
    if crop.width < 1 or crop.height < 1 or crop.x < 0 or crop.y < 0 \
            or crop.x + crop.width > world.width or crop.y + crop.height > world.height:
        raise ValueError(f"crop {crop} outside world bounds")
    grid = tuple(
        tuple(world.cell_label((x, y)) for x in range(crop.x, crop.x + crop.width))
        for y in range(crop.y, crop.y + crop.height)
    )
    marker = pose.cell if crop.contains(pose.cell) else None
    return OverheadView(crop, grid, marker)


# --- targets and generation ---------------------------------------------------


def unique_labels(world: GridWorld) -> list[str]:
    counts: dict[str, int] = {}
    for o in world.objects:
        counts[o.label] = counts.get(o.label, 0) + 1
    return sorted(label for label, n in counts.items() if n == 1)


def sample_target(world: GridWorld, rng_seed: int) -> str:
    candidates = unique_labels(world)
    if not candidates:
        raise NoUniqueObject("every label in the world has several instances")
    return random.Random(rng_seed).choice(candidates)


# label -> footprint length (1 = single cell, 2 = two-cell furniture)
OBJECT_POOL: dict[str, int] = {
    "Sofa": 2,
    "Bed": 2,
    "DiningTable": 2,
    "Desk": 2,
    "Dresser": 2,
    "Bookshelf": 2,
    "Fridge": 1,
    "ArmChair": 1,
    "Chair": 1,
    "Television": 1,
    "FloorLamp": 1,
    "HousePlant": 1,
    "GarbageCan": 1,
    "Mug": 1,
    "PepperShaker": 1,
    "Laptop": 1,
    "Vase": 1,
    "Pillow": 1,
    "Box": 1,
    "Toilet": 1,
}


@dataclass(frozen=True)
class WorldParams:
    width: int = 12
    height: int = 12
    object_count: int = 8
    obstacle_density: float = 0.15
    seed: int = 0
    cell_size: float = 0.25
    duplicate_prob: float = 0.25
    max_attempts: int = 100


def generate_world(params: WorldParams) -> GridWorld:
    if not 0.0 <= params.obstacle_density < 1.0:
        raise ValueError("obstacle_density must be in [0, 1)")
    if params.object_count < 1:
        raise ValueError("object_count must be >= 1")
    if params.object_count * 2 + 1 > params.width * params.height:
        raise ValueError("objects do not fit in the grid")
    rng = random.Random(params.seed)
    labels_pool = sorted(OBJECT_POOL)
    for _ in range(params.max_attempts):
        world = _try_generate(params, rng, labels_pool)
        if world is not None:
            return world
    raise GenerationFailed(f"no connected world after {params.max_attempts} attempts (seed {params.seed})")


def _try_generate(params: WorldParams, rng: random.Random, labels_pool: list[str]) -> GridWorld | None:
    w, h = params.width, params.height
    taken: set[Cell] = set()
    objects: list[ObjectInstance] = []
    labels: list[str] = []
    for i in range(params.object_count):
        if labels and rng.random() < params.duplicate_prob:
            label = rng.choice(labels)
        else:
            fresh = [lab for lab in labels_pool if lab not in labels]
            label = rng.choice(fresh or labels_pool)
        length = OBJECT_POOL[label]
        for _ in range(50):
            x, y = rng.randrange(w), rng.randrange(h)
            cells = [(x, y)]
            if length == 2:
                cells.append((x + 1, y) if rng.random() < 0.5 else (x, y + 1))
            if all(0 <= c[0] < w and 0 <= c[1] < h and c not in taken for c in cells):
                break
        else:
            return None
        taken.update(cells)
        labels.append(label)
        objects.append(ObjectInstance(f"obj{i}", label, tuple(cells), is_obstacle=length > 1))
    blocked = set()
    for y in range(h):
        for x in range(w):
            if (x, y) not in taken and rng.random() < params.obstacle_density:
                blocked.add((x, y))
    free = [(x, y) for y in range(h) for x in range(w) if (x, y) not in taken and (x, y) not in blocked]
    if not free:
        return None
    if not any(labels.count(lab) == 1 for lab in labels):
        return None
    spawn_cell = rng.choice(free)
    spawn = Pose(spawn_cell[0], spawn_cell[1], Heading(rng.randrange(4)))
    world = GridWorld(w, h, frozenset(blocked), tuple(objects), spawn, params.seed, params.cell_size,
                      name=f"world-{params.seed:05d}")
    reach = _bfs_field(world, [spawn_cell])
    if len(reach) != len(free):
        return None
    for obj in objects:
        if not any(c in reach for c in world.target_region(obj.label)):
            return None
    return world


# --- serialization ------------------------------------------------------------

_CODES = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"


def dumps_world(world: GridWorld) -> str:
    if len(world.objects) > len(_CODES):
        raise ValueError("too many objects to serialize")
    code_of = {o.id: _CODES[i] for i, o in enumerate(world.objects)}
    lines = [
        "gcnav-world 1",
        f"name {world.name}",
        f"size {world.width} {world.height}",
        f"cell_size {world.cell_size!r}",
        f"seed {world.seed}",
        f"spawn {world.spawn.x} {world.spawn.y} {world.spawn.heading.letter}",
        "grid",
    ]
    for y in range(world.height):
        row = []
        for x in range(world.width):
            obj = world.object_at((x, y))
            if obj is not None:
                row.append(code_of[obj.id])
            elif (x, y) in world.blocked:
                row.append(BLOCKED_LABEL)
            else:
                row.append(FREE_LABEL)
        lines.append("".join(row))
    lines.append("objects")
    for o in world.objects:
        kind = "obstacle" if o.is_obstacle else "item"
        lines.append(f"{code_of[o.id]} {o.id} {o.label} {kind}")
    return "\n".join(lines) + "\n"


def loads_world(text: str) -> GridWorld:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "gcnav-world 1":
        raise ValueError("not a gcnav world file")
    header: dict[str, list[str]] = {}
    i = 1
    while lines[i] != "grid":
        key, *rest = lines[i].split()
        header[key] = rest
        i += 1
    width, height = int(header["size"][0]), int(header["size"][1])
    grid_rows = lines[i + 1:i + 1 + height]
    if len(grid_rows) != height or any(len(r) != width for r in grid_rows):
        raise ValueError("grid block does not match declared size")
    if lines[i + 1 + height] != "objects":
        raise ValueError("missing objects table")
    table = {}
    for line in lines[i + 2 + height:]:
        if not line.strip():
            continue
        code, oid, label, kind = line.split()
        table[code] = (oid, label, kind == "obstacle")
    blocked = set()
    cells: dict[str, list[Cell]] = {code: [] for code in table}
    for y, row in enumerate(grid_rows):
        for x, ch in enumerate(row):
            if ch == BLOCKED_LABEL:
                blocked.add((x, y))
            elif ch != FREE_LABEL:
                if ch not in cells:
                    raise ValueError(f"unknown cell code {ch!r}")
                cells[ch].append((x, y))
    objects = tuple(
        ObjectInstance(oid, label, tuple(cells[code]), obstacle)
        for code, (oid, label, obstacle) in table.items()
    )
    sx, sy, sh = header["spawn"]
    return GridWorld(
        width, height, frozenset(blocked), objects,
        Pose(int(sx), int(sy), Heading.from_letter(sh)),
        seed=int(header["seed"][0]),
        cell_size=float(header["cell_size"][0]),
        name=header.get("name", ["world"])[0],
    )


def save_world(world: GridWorld, path: str | Path) -> None:
    Path(path).write_text(dumps_world(world))


def load_world(path: str | Path) -> GridWorld:
    return loads_world(Path(path).read_text())


def world_from_rows(rows: Sequence[str], legend: dict[str, str] | None = None,
                    spawn: Pose | None = None, cell_size: float = 0.25) -> GridWorld:
    """Build a world from ASCII rows; handy for tests and hand-made maps.

    ``#`` is blocked, ``.`` is free, any other character is an object whose
    label comes from ``legend`` (default: the character itself). Identical
    characters form one object instance.
    """
    legend = legend or {}
    cells: dict[str, list[Cell]] = {}
    blocked = set()
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == BLOCKED_LABEL:
                blocked.add((x, y))
            elif ch != FREE_LABEL:
                cells.setdefault(ch, []).append((x, y))
    objects = tuple(
        ObjectInstance(f"obj{i}", legend.get(ch, ch), tuple(cs), len(cs) > 1)
        for i, (ch, cs) in enumerate(sorted(cells.items()))
    )
    height, width = len(rows), len(rows[0])
    if spawn is None:
        spawn_cell = next((x, y) for y in range(height) for x in range(width)
                          if rows[y][x] == FREE_LABEL)
        spawn = Pose(spawn_cell[0], spawn_cell[1], Heading.NORTH)
    return GridWorld(width, height, frozenset(blocked), objects, spawn, cell_size=cell_size)
