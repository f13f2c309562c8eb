"""Ground-truth environment: voxel occupancy, targets, depot, sensing and motion.

The grid lives only inside the simulator. Robots never read it directly; they
see it through :func:`sense` and act on it through :func:`step_motion`,
:func:`apply_pickup` and :func:`apply_delivery`.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SCENARIO_SCHEMA = "semcomm.scenario"
SCENARIO_VERSION = 1

LABELS = ("box", "crate", "barrel", "canister", "toolkit", "sample")

Voxel = tuple[int, int, int]
Vec3 = tuple[float, float, float]

# 8-connected in-plane moves, fixed order for deterministic expansion.
MOVES_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


class Status(IntEnum):
    """Task status lattice: unassigned < claimed < carried < delivered."""

    UNASSIGNED = 0
    CLAIMED = 1
    CARRIED = 2
    DELIVERED = 3


class WorldError(Exception):
    pass


class ScenarioParseError(WorldError):
    pass


class ScenarioValidationError(WorldError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class GenerationError(WorldError):
    pass


class PickupRangeError(WorldError):
    pass


class PickupConflictError(WorldError):
    pass


def ground_neighbors(blocked: np.ndarray, x: int, y: int) -> Iterator[tuple[int, int]]:
    """Yield 8-connected neighbours of (x, y) that are free in ``blocked``.

    Diagonal moves are only allowed when both orthogonal cells are free, so
    robots never squeeze through touching corners.
    """
    nx_, ny_ = blocked.shape
    for dx, dy in MOVES_8:
        nx, ny = x + dx, y + dy
        if not (0 <= nx < nx_ and 0 <= ny < ny_) or blocked[nx, ny]:
            continue
        if dx and dy and (blocked[x + dx, y] or blocked[x, y + dy]):
            continue
        yield nx, ny


@dataclass(frozen=True)
class TargetTruth:
    id: int
    label: str
    position: Vec3
    orientation: float
    status: Status = Status.UNASSIGNED
    holder: int | None = None  # claimer or carrier robot id


@dataclass(frozen=True)
class RobotState:
    id: int
    position: Vec3
    heading: float = 0.0
    busy: bool = False
    carrying: int | None = None
    distance_traveled: float = 0.0


@dataclass(frozen=True, eq=False)
class GridWorld:
    dims: tuple[int, int, int]
    voxel_size: float
    occupancy: np.ndarray
    depot: Voxel
    targets: tuple[TargetTruth, ...]
    spawns: tuple[Voxel, ...] = ()

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "depot", tuple(int(v) for v in self.depot))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "spawns", tuple(tuple(int(v) for v in s) for s in self.spawns))
        self.validate()

    def validate(self) -> None:
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ScenarioValidationError("dims", f"every axis must be positive, got {self.dims}")
        if self.voxel_size <= 0:
            raise ScenarioValidationError("voxel_size", "must be positive")
        if self.occupancy.shape != self.dims:
            raise ScenarioValidationError(
                "occupancy", f"shape {self.occupancy.shape} does not match dims {self.dims}"
            )
        if not self.in_bounds(self.depot):
            raise ScenarioValidationError("depot", f"{self.depot} outside the grid")
        if self.occupancy[self.depot]:
            raise ScenarioValidationError("depot", f"{self.depot} lies inside an obstacle")
        seen = set()
        for t in self.targets:
            if t.id in seen:
                raise ScenarioValidationError("targets", f"duplicate target id {t.id}")
            seen.add(t.id)
            if not self.contains(t.position):
                raise ScenarioValidationError("targets", f"target {t.id} outside the boundary")
            if t.status <= Status.CLAIMED and self.occupancy[self.voxel_of(t.position)]:
                raise ScenarioValidationError("targets", f"target {t.id} lies inside an obstacle")
        for s in self.spawns:
            if not self.in_bounds(s) or self.occupancy[s]:
                raise ScenarioValidationError("spawns", f"spawn {s} is not a free voxel")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridWorld):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.occupancy, other.occupancy)
            and self.depot == other.depot
            and self.targets == other.targets
            and self.spawns == other.spawns
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def boundary(self) -> tuple[Vec3, Vec3]:
        hi = tuple(d * self.voxel_size for d in self.dims)
        return (0.0, 0.0, 0.0), hi  # type: ignore[return-value]

    @property
    def ground_blocked(self) -> np.ndarray:
        return self.occupancy[:, :, 0]

    def in_bounds(self, v: Sequence[int]) -> bool:
        return all(0 <= int(c) < d for c, d in zip(v, self.dims))

    def contains(self, p: Sequence[float]) -> bool:
        lo, hi = self.boundary
        return all(lo[i] <= p[i] <= hi[i] for i in range(3))

    def voxel_of(self, p: Sequence[float]) -> Voxel:
        v = tuple(int(math.floor(c / self.voxel_size)) for c in p)
        return tuple(min(max(c, 0), d - 1) for c, d in zip(v, self.dims))  # type: ignore[return-value]

    def center(self, v: Sequence[int]) -> Vec3:
        return tuple((c + 0.5) * self.voxel_size for c in v)  # type: ignore[return-value]

    def target(self, target_id: int) -> TargetTruth:
        for t in self.targets:
            if t.id == target_id:
                return t
        raise KeyError(target_id)

    def with_target(self, updated: TargetTruth) -> GridWorld:
        targets = tuple(updated if t.id == updated.id else t for t in self.targets)
        return replace(self, targets=targets)

    def is_free(self, v: Voxel) -> bool:
        return self.in_bounds(v) and not self.occupancy[v]


# ---------------------------------------------------------------------------
# Scenario generation and files


@dataclass(frozen=True)
class ScenarioParams:
    dims: tuple[int, int, int] = (32, 32, 4)
    voxel_size: float = 1.0
    density: float = 0.15
    n_targets: int = 6
    depot: tuple[int, int] = (2, 2)
    n_spawns: int = 6
    min_target_separation: int = 3
    min_depot_distance: int = 5
    max_attempts: int = 50

    def __post_init__(self):
        if not 0.0 <= self.density < 1.0:
            raise ValueError(f"density must be in [0, 1), got {self.density}")
        if self.n_targets < 1:
            raise ValueError("n_targets must be >= 1")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")


def reachable_ground(blocked: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Boolean mask of ground cells reachable from ``start`` (BFS)."""
    seen = np.zeros_like(blocked, dtype=bool)
    if blocked[start]:
        return seen
    seen[start] = True
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for n in ground_neighbors(blocked, x, y):
            if not seen[n]:
                seen[n] = True
                queue.append(n)
    return seen


def _bfs_order(blocked: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    order = [start]
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for n in ground_neighbors(blocked, x, y):
            if n not in seen:
                seen.add(n)
                order.append(n)
                queue.append(n)
    return order


def _place_obstacles(rng: np.random.Generator, params: ScenarioParams) -> np.ndarray:
    nx, ny, nz = params.dims
    occ = np.zeros(params.dims, dtype=bool)
    goal = params.density * nx * ny
    while occ[:, :, 0].sum() < goal:
        height = int(rng.integers(1, nz + 1))
        if rng.random() < 0.5:
            w, h = (int(v) for v in rng.integers(1, 4, size=2))
        else:
            length = int(rng.integers(3, 9))
            w, h = (length, 1) if rng.random() < 0.5 else (1, length)
        x0 = int(rng.integers(0, nx))
        y0 = int(rng.integers(0, ny))
        occ[x0 : x0 + w, y0 : y0 + h, :height] = True
    return occ


def generate_scenario(seed: int, params: ScenarioParams | None = None) -> GridWorld:
    """Build a random world whose targets and spawns all connect to the depot.

    Free ground cells cut off from the depot are filled in, so the remaining
    free space is a single connected region. Attempts are re-seeded
    deterministically from ``seed`` until placement succeeds.
    """
    params = params or ScenarioParams()
    nx, ny, nz = params.dims
    dx, dy = params.depot
    if not (0 <= dx < nx and 0 <= dy < ny):
        raise ValueError(f"depot {params.depot} outside dims {params.dims}")

    for attempt in range(params.max_attempts):
        rng = np.random.default_rng([seed, attempt])
        occ = _place_obstacles(rng, params)
        occ[max(dx - 1, 0) : dx + 2, max(dy - 1, 0) : dy + 2, :] = False

        blocked = occ[:, :, 0]
        reach = reachable_ground(blocked, (dx, dy))
        pockets = ~blocked & ~reach
        occ[:, :, 0] |= pockets
        blocked = occ[:, :, 0]

        order = _bfs_order(blocked, (dx, dy))
        spawns = [(x, y, 0) for x, y in order[1 : 1 + params.n_spawns]]
        if len(spawns) < params.n_spawns:
            continue
        taken = {(x, y) for x, y, _ in spawns} | {(dx, dy)}
        candidates = [
            c
            for c in sorted(order)
            if c not in taken and max(abs(c[0] - dx), abs(c[1] - dy)) >= params.min_depot_distance
        ]
        chosen: list[tuple[int, int]] = []
        for idx in rng.permutation(len(candidates)):
            c = candidates[int(idx)]
            if all(
                max(abs(c[0] - o[0]), abs(c[1] - o[1])) >= params.min_target_separation
                for o in chosen
            ):
                chosen.append(c)
                if len(chosen) == params.n_targets:
                    break
        if len(chosen) < params.n_targets:
            continue

        vs = params.voxel_size
        targets = tuple(
            TargetTruth(
                id=i + 1,
                label=LABELS[int(rng.integers(len(LABELS)))],
                position=((c[0] + 0.5) * vs, (c[1] + 0.5) * vs, 0.5 * vs),
                orientation=float(rng.uniform(-math.pi, math.pi)),
            )
            for i, c in enumerate(chosen)
        )
        return GridWorld(
            dims=params.dims,
            voxel_size=vs,
            occupancy=occ,
            depot=(dx, dy, 0),
            targets=targets,
            spawns=tuple(spawns),
        )
    raise GenerationError(
        f"no connected placement for density={params.density} after {params.max_attempts} attempts"
    )


def _rle_row(row: np.ndarray) -> list[int]:
    runs = []
    current = False
    count = 0
    for v in row:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    return runs


def _unrle_row(runs: list[int], length: int) -> np.ndarray:
    row = np.zeros(length, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if not isinstance(r, int) or r < 0:
            raise ScenarioValidationError("occupancy", f"bad run length {r!r}")
        row[pos : pos + r] = value
        pos += r
        value = not value
    if pos != length:
        raise ScenarioValidationError("occupancy", f"row covers {pos} voxels, expected {length}")
    return row


def scenario_to_dict(world: GridWorld) -> dict:
    nx, ny, nz = world.dims
    rows = [[_rle_row(world.occupancy[:, y, z]) for y in range(ny)] for z in range(nz)]
    return {
        "schema": SCENARIO_SCHEMA,
        "version": SCENARIO_VERSION,
        "dims": list(world.dims),
        "voxel_size": world.voxel_size,
        "occupancy": rows,
        "depot": list(world.depot),
        "targets": [
            {"id": t.id, "label": t.label, "position": list(t.position), "orientation": t.orientation}
            for t in world.targets
        ],
        "spawns": [list(s) for s in world.spawns],
    }


def save_scenario(world: GridWorld, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(world), indent=1))


def scenario_from_dict(doc: dict) -> GridWorld:
    try:
        if doc.get("schema") != SCENARIO_SCHEMA:
            raise ScenarioValidationError("schema", f"expected {SCENARIO_SCHEMA!r}")
        if doc.get("version") != SCENARIO_VERSION:
            raise ScenarioValidationError("version", f"unsupported version {doc.get('version')!r}")
        dims = tuple(int(d) for d in doc["dims"])
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ScenarioValidationError("dims", f"invalid dims {doc['dims']!r}")
        nx, ny, nz = dims
        rows = doc["occupancy"]
        if len(rows) != nz or any(len(layer) != ny for layer in rows):
            raise ScenarioValidationError("occupancy", "row count does not match dims")
        occ = np.zeros(dims, dtype=bool)
        for z, layer in enumerate(rows):
            for y, runs in enumerate(layer):
                occ[:, y, z] = _unrle_row(runs, nx)
        targets = tuple(
            TargetTruth(
                id=int(t["id"]),
                label=str(t["label"]),
                position=tuple(float(c) for c in t["position"]),
                orientation=float(t["orientation"]),
            )
            for t in doc["targets"]
        )
        return GridWorld(
            dims=dims,
            voxel_size=float(doc["voxel_size"]),
            occupancy=occ,
            depot=tuple(int(c) for c in doc["depot"]),
            targets=targets,
            spawns=tuple(tuple(int(c) for c in s) for s in doc.get("spawns", [])),
        )
    except ScenarioValidationError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc!r}") from exc


def load_scenario(path: str | Path) -> GridWorld:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: top level must be an object")
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# Sensing


@dataclass(frozen=True)
class TargetSighting:
    id: int
    label: str
    position: Vec3
    orientation: float
    confidence: float


@dataclass(frozen=True)
class RangeReturn:
    origin: Vec3
    direction: Vec3
    distance: float

    @property
    def hit_point(self) -> Vec3:
        return tuple(o + d * self.distance for o, d in zip(self.origin, self.direction))  # type: ignore[return-value]


@dataclass(frozen=True)
class Observation:
    robot_id: int
    step: int
    visible_occupied: frozenset[Voxel]
    visible_free: frozenset[Voxel]
    range_returns: tuple[RangeReturn, ...] = ()
    visible_targets: tuple[TargetSighting, ...] = ()


@dataclass
class _StaticView:
    occupied: frozenset
    free: frozenset
    returns: tuple


class Sensor:
    """Planar ray caster, one fan of rays per z layer.

    Rays start at the centre of the robot's voxel and are sampled every
    ``sample_step`` voxels out to ``radius``. A ray stops at its first
    occupied voxel or when it leaves the grid. Only voxels whose centre lies
    within ``radius`` (planar) of the robot's centre are reported.
    """

    def __init__(
        self,
        radius: float = 8.0,
        fov: float = 2 * math.pi,
        resolution: float = math.radians(1.0),
        sample_step: float = 0.1,
        position_noise: float = 0.5,
        orientation_noise: float = 0.1,
    ):
        if radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 < fov <= 2 * math.pi + 1e-12:
            raise ValueError("fov must be in (0, 2*pi]")
        self.radius = radius
        self.fov = fov
        self.resolution = resolution
        self.sample_step = sample_step
        self.position_noise = position_noise
        self.orientation_noise = orientation_noise
        self._cache: dict = {}
        self._cache_owner: int | None = None
        self._geometry: dict = {}

    @property
    def full_circle(self) -> bool:
        return self.fov >= 2 * math.pi - 1e-12

    def ray_angles(self, heading: float) -> np.ndarray:
        n = max(1, int(round(self.fov / self.resolution)))
        return heading - self.fov / 2 + (np.arange(n) + 0.5) * self.fov / n

    def _ray_geometry(self, heading: float, voxel_size: float):
        key = (round(heading, 9), voxel_size)
        geom = self._geometry.get(key)
        if geom is None:
            r = self.radius / voxel_size
            angles = self.ray_angles(heading)
            t = np.arange(0, int(math.floor(r / self.sample_step)) + 1) * self.sample_step
            cos, sin = np.cos(angles)[:, None], np.sin(angles)[:, None]
            ox = np.floor(0.5 + t[None, :] * cos).astype(np.int64)
            oy = np.floor(0.5 + t[None, :] * sin).astype(np.int64)
            valid = ox * ox + oy * oy <= r * r + 1e-9
            geom = (angles, t, ox, oy, valid)
            self._geometry[key] = geom
        return geom

    def _static_view(self, world: GridWorld, voxel: Voxel, heading: float) -> _StaticView:
        if self._cache_owner != id(world.occupancy):
            self._cache = {}
            self._cache_owner = id(world.occupancy)
        hkey = None if self.full_circle else round(heading, 9)
        key = (voxel, hkey)
        view = self._cache.get(key)
        if view is not None:
            return view

        angles, t, ox, oy, valid = self._ray_geometry(0.0 if self.full_circle else heading, world.voxel_size)
        nx, ny, nz = world.dims
        vx, vy, _ = voxel
        xs, ys = vx + ox, vy + oy
        inb = (xs >= 0) & (xs < nx) & (ys >= 0) & (ys < ny)
        cx, cy = np.clip(xs, 0, nx - 1), np.clip(ys, 0, ny - 1)
        n_samples = t.shape[0]
        idx = np.arange(n_samples)[None, :]
        vs = world.voxel_size
        origin_xy = ((vx + 0.5) * vs, (vy + 0.5) * vs)

        occupied: set = set()
        free: set = set()
        returns = []
        for z in range(nz):
            occ = world.occupancy[cx, cy, z] & inb
            stop = ~inb | occ
            has_stop = stop.any(axis=1)
            first = np.where(has_stop, stop.argmax(axis=1), n_samples)
            seen_free = valid & (idx < first[:, None])
            for x, y in set(zip(xs[seen_free].tolist(), ys[seen_free].tolist())):
                free.add((x, y, z))
            rays = np.nonzero(has_stop)[0]
            for ray in rays.tolist():
                j = int(first[ray])
                if not (inb[ray, j] and valid[ray, j]):
                    continue
                occupied.add((int(xs[ray, j]), int(ys[ray, j]), z))
                a = float(angles[ray])
                returns.append(
                    RangeReturn(
                        origin=(origin_xy[0], origin_xy[1], (z + 0.5) * vs),
                        direction=(math.cos(a), math.sin(a), 0.0),
                        distance=float(t[j]) * vs,
                    )
                )
        view = _StaticView(frozenset(occupied), frozenset(free), tuple(returns))
        self._cache[key] = view
        return view

    def sense(
        self,
        world: GridWorld,
        robot: RobotState,
        rng: np.random.Generator | None = None,
        step: int = 0,
    ) -> Observation:
        voxel = world.voxel_of(robot.position)
        view = self._static_view(world, voxel, robot.heading)
        vs = world.voxel_size
        sightings = []
        r2 = (self.radius / vs) ** 2
        for t in sorted(world.targets, key=lambda t: t.id):
            if t.status > Status.CLAIMED:
                continue
            tv = world.voxel_of(t.position)
            if tv not in view.free:
                continue
            d2 = (tv[0] - voxel[0]) ** 2 + (tv[1] - voxel[1]) ** 2
            if d2 > r2:
                continue
            pos = t.position
            theta = t.orientation
            if rng is not None:
                noise = rng.uniform(-self.position_noise, self.position_noise, size=3) * vs
                pos = tuple(float(min(max(p + n, 0.0), hi)) for p, n, hi in zip(pos, noise, world.boundary[1]))
                theta = _wrap(theta + float(rng.uniform(-self.orientation_noise, self.orientation_noise)))
            conf = 1.0 - 0.5 * math.sqrt(d2) / (self.radius / vs)
            sightings.append(TargetSighting(t.id, t.label, tuple(pos), theta, conf))  # type: ignore[arg-type]
        return Observation(
            robot_id=robot.id,
            step=step,
            visible_occupied=view.occupied,
            visible_free=view.free,
            range_returns=view.returns,
            visible_targets=tuple(sightings),
        )


_default_sensors: dict = {}


def sense(
    world: GridWorld,
    robot: RobotState,
    radius: float = 8.0,
    fov: float = 2 * math.pi,
    rng: np.random.Generator | None = None,
    step: int = 0,
) -> Observation:
    key = (radius, fov)
    sensor = _default_sensors.get(key)
    if sensor is None:
        sensor = _default_sensors[key] = Sensor(radius=radius, fov=fov)
    return sensor.sense(world, robot, rng=rng, step=step)


def _wrap(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


# ---------------------------------------------------------------------------
# Motion and task physics


@dataclass(frozen=True)
class MotionAction:
    kind: str = "wait"  # "move" | "rotate" | "wait"
    delta: tuple[int, int, int] = (0, 0, 0)
    rotation: float = 0.0

    @classmethod
    def move(cls, dx: int, dy: int, dz: int = 0) -> MotionAction:
        return cls("move", (dx, dy, dz))

    @classmethod
    def rotate(cls, angle: float) -> MotionAction:
        return cls("rotate", rotation=angle)

    @classmethod
    def wait(cls) -> MotionAction:
        return cls("wait")


WAIT = MotionAction.wait()


def step_motion(world: GridWorld, robot: RobotState, action: MotionAction) -> RobotState:
    """Apply one action. Blocked moves leave the position unchanged."""
    if action.kind == "wait":
        return robot
    if action.kind == "rotate":
        return replace(robot, heading=_wrap(robot.heading + action.rotation))
    if action.kind != "move":
        raise ValueError(f"unknown action kind {action.kind!r}")
    dx, dy, dz = action.delta
    if max(abs(dx), abs(dy), abs(dz)) != 1:
        raise ValueError(f"move must reach an adjacent voxel, got {action.delta}")

    heading = math.atan2(dy, dx) if (dx or dy) else robot.heading
    x, y, z = world.voxel_of(robot.position)
    dest = (x + dx, y + dy, z + dz)
    ok = world.is_free(dest)
    if ok and dx and dy:
        ok = world.is_free((x + dx, y, z + dz)) and world.is_free((x, y + dy, z + dz))
    if not ok:
        return replace(robot, heading=heading)
    step = world.voxel_size * math.sqrt(dx * dx + dy * dy + dz * dz)
    return replace(
        robot,
        position=world.center(dest),
        heading=heading,
        distance_traveled=robot.distance_traveled + step,
    )


def apply_claim(world: GridWorld, robot_id: int, target_id: int) -> GridWorld:
    t = world.target(target_id)
    if t.status != Status.UNASSIGNED:
        return world
    return world.with_target(replace(t, status=Status.CLAIMED, holder=robot_id))


def apply_pickup(
    world: GridWorld, robot: RobotState, target_id: int, radius: float = 1.5
) -> tuple[GridWorld, RobotState]:
    t = world.target(target_id)
    if t.status >= Status.CARRIED:
        raise PickupConflictError(f"target {target_id} already {t.status.name.lower()}")
    if robot.carrying is not None:
        raise PickupConflictError(f"robot {robot.id} already carries {robot.carrying}")
    d = math.dist(robot.position, t.position)
    if d > radius:
        raise PickupRangeError(f"target {target_id} is {d:.2f} m away (radius {radius})")
    world = world.with_target(replace(t, status=Status.CARRIED, holder=robot.id))
    return world, replace(robot, carrying=target_id, busy=True)


def apply_delivery(
    world: GridWorld, robot: RobotState, radius: float = 1.5
) -> tuple[GridWorld, RobotState]:
    if robot.carrying is None:
        raise WorldError(f"robot {robot.id} is not carrying anything")
    depot = world.center(world.depot)
    d = math.dist(robot.position[:2], depot[:2])
    if d > radius:
        raise PickupRangeError(f"robot {robot.id} is {d:.2f} m from the depot (radius {radius})")
    t = world.target(robot.carrying)
    world = world.with_target(replace(t, status=Status.DELIVERED, holder=None, position=depot))
    return world, replace(robot, carrying=None, busy=False)
