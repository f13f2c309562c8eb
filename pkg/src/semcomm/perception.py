"""Turn an observation into structural, geometric and object semantics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .world import Observation, RobotState, Status, Vec3

MASK_SIZE = 256
MASK_BITS = MASK_SIZE * MASK_SIZE


@dataclass(frozen=True)
class EdgeConfig:
    """Geometry of the robot-centred edge mask.

    Each ground voxel within the sensing radius maps to a square block of
    ``cells_per_voxel`` x ``cells_per_voxel`` mask cells. The frame is
    axis-aligned with the global frame, so moving the robot is a pure integer
    translation of the mask.
    """

    voxel_size: float = 1.0
    sensing_radius: float = 8.0
    size: int = MASK_SIZE
    extractor: str = "occupancy_boundary"

    @property
    def radius_voxels(self) -> int:
        return int(math.ceil(self.sensing_radius / self.voxel_size - 1e-9))

    @property
    def cells_per_voxel(self) -> int:
        k = self.size // (2 * self.radius_voxels + 1)
        if k < 1:
            raise ValueError("sensing radius too large for the mask size")
        return k

    @property
    def center_cell(self) -> int:
        """Mask index of the first cell of the robot's own voxel."""
        return self.size // 2 - self.cells_per_voxel // 2

    @property
    def scale(self) -> float:
        return self.voxel_size / self.cells_per_voxel

    def origin_cell(self, voxel_xy: tuple[int, int]) -> tuple[int, int]:
        """Global cell index of mask cell (0, 0) for a robot at ``voxel_xy``."""
        k, c0 = self.cells_per_voxel, self.center_cell
        return voxel_xy[0] * k - c0, voxel_xy[1] * k - c0

    def origin_for_position(self, position: Iterable[float]) -> tuple[int, int]:
        p = list(position)
        vx = int(math.floor(p[0] / self.voxel_size))
        vy = int(math.floor(p[1] / self.voxel_size))
        return self.origin_cell((vx, vy))


@dataclass(frozen=True, eq=False)
class EdgeMask:
    bits: np.ndarray  # (size, size) bool, indexed [x_cell, y_cell]
    origin_cell: tuple[int, int]
    cells_per_voxel: int
    voxel_size: float

    @property
    def scale(self) -> float:
        return self.voxel_size / self.cells_per_voxel

    @property
    def frame(self) -> tuple[tuple[float, float], float, float]:
        """(origin in metres, metres per cell, yaw)."""
        s = self.scale
        return (self.origin_cell[0] * s, self.origin_cell[1] * s), s, 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeMask):
            return NotImplemented
        return (
            self.origin_cell == other.origin_cell
            and self.cells_per_voxel == other.cells_per_voxel
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None  # type: ignore[assignment]


_FACES = ((1, 0), (-1, 0), (0, 1), (0, -1))


def occupancy_boundary(obs: Observation) -> dict[tuple[int, int], frozenset[tuple[int, int]]]:
    """Ground columns holding an observed occupied voxel next to observed free space.

    Maps each column to the in-plane directions where free space was seen, so
    the mask can draw the boundary on those faces only.
    """
    free = obs.visible_free
    faces: dict[tuple[int, int], set[tuple[int, int]]] = {}
    for x, y, z in obs.visible_occupied:
        for dx, dy in _FACES:
            if (x + dx, y + dy, z) in free:
                faces.setdefault((x, y), set()).add((dx, dy))
    return {c: frozenset(f) for c, f in faces.items()}


def occupancy_block(obs: Observation) -> set[tuple[int, int]]:
    """Same columns as ``occupancy_boundary``, rendered as filled blocks."""
    return set(occupancy_boundary(obs))


EdgeExtractor = Callable[[Observation], "Mapping[tuple[int, int], Iterable[tuple[int, int]]] | Iterable[tuple[int, int]]"]

EXTRACTORS: dict[str, EdgeExtractor] = {
    "occupancy_boundary": occupancy_boundary,
    "occupancy_block": occupancy_block,
}


def mask_from_columns(
    columns: Mapping[tuple[int, int], Iterable[tuple[int, int]]] | Iterable[tuple[int, int]],
    robot_voxel: tuple[int, int],
    config: EdgeConfig,
) -> EdgeMask:
    """Render ground columns into a robot-centred mask.

    A mapping draws a one-cell line on each listed face (direction towards
    free space); a plain iterable fills each column's whole block. Columns
    whose block would be cut by the mask border are left out.
    """
    k, c0, size = config.cells_per_voxel, config.center_cell, config.size
    bits = np.zeros((size, size), dtype=bool)
    faces = columns if isinstance(columns, Mapping) else None
    for x, y in columns:
        u = c0 + (x - robot_voxel[0]) * k
        v = c0 + (y - robot_voxel[1]) * k
        if u < 0 or v < 0 or u + k > size or v + k > size:
            continue
        if faces is None:
            bits[u : u + k, v : v + k] = True
            continue
        for dx, dy in faces[(x, y)]:
            if dx:
                uu = u + (k - 1 if dx > 0 else 0)
                bits[uu, v : v + k] = True
            else:
                vv = v + (k - 1 if dy > 0 else 0)
                bits[u : u + k, vv] = True
    return EdgeMask(bits, config.origin_cell(robot_voxel), k, config.voxel_size)


def extract_edges(obs: Observation, robot: RobotState, config: EdgeConfig | None = None) -> EdgeMask:
    config = config or EdgeConfig()
    try:
        extractor = EXTRACTORS[config.extractor]
    except KeyError:
        raise ValueError(f"unknown edge extractor {config.extractor!r}") from None
    vx = int(math.floor(robot.position[0] / config.voxel_size))
    vy = int(math.floor(robot.position[1] / config.voxel_size))
    return mask_from_columns(extractor(obs), (vx, vy), config)


def empty_mask(origin_cell: tuple[int, int], config: EdgeConfig | None = None) -> EdgeMask:
    config = config or EdgeConfig()
    bits = np.zeros((config.size, config.size), dtype=bool)
    return EdgeMask(bits, origin_cell, config.cells_per_voxel, config.voxel_size)


def reproject(mask: EdgeMask, origin_cell: tuple[int, int]) -> EdgeMask:
    """Translate ``mask`` into the frame whose cell (0, 0) is ``origin_cell``.

    Cells shifted outside the new frame are dropped; newly exposed cells are 0.
    """
    du = mask.origin_cell[0] - origin_cell[0]
    dv = mask.origin_cell[1] - origin_cell[1]
    size = mask.bits.shape[0]
    out = np.zeros_like(mask.bits)
    if abs(du) < size and abs(dv) < size:
        src_u = slice(max(0, -du), min(size, size - du))
        dst_u = slice(max(0, du), min(size, size + du))
        src_v = slice(max(0, -dv), min(size, size - dv))
        dst_v = slice(max(0, dv), min(size, size + dv))
        out[dst_u, dst_v] = mask.bits[src_u, src_v]
    return EdgeMask(out, origin_cell, mask.cells_per_voxel, mask.voxel_size)


def edge_distance(a: EdgeMask | np.ndarray, b: EdgeMask | np.ndarray) -> float:
    """Normalised Hamming distance between two masks."""
    ba = a.bits if isinstance(a, EdgeMask) else a
    bb = b.bits if isinstance(b, EdgeMask) else b
    if ba.shape != bb.shape:
        raise ValueError(f"mask shapes differ: {ba.shape} vs {bb.shape}")
    return int(np.count_nonzero(ba != bb)) / ba.size


# ---------------------------------------------------------------------------
# Sparse anchors


@dataclass(frozen=True)
class Anchor:
    position: Vec3
    confidence: float


def extract_anchors(
    obs: Observation,
    voxel: float,
    outlier_min_neighbors: int = 2,
    neighbor_cap: int = 8,
    m_max: int = 1200,
) -> tuple[Anchor, ...]:
    """Voxel-downsample range hits into at most ``m_max`` anchors.

    Each occupied bin yields one anchor at the centroid of its points with
    confidence ``min(1, count / neighbor_cap)``. Bins with fewer than
    ``outlier_min_neighbors`` points are dropped as outliers.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    if not obs.range_returns:
        return ()
    pts = np.array([r.hit_point for r in obs.range_returns], dtype=float)
    return anchors_from_points(pts, voxel, outlier_min_neighbors, neighbor_cap, m_max)


def anchors_from_points(
    pts: np.ndarray,
    voxel: float,
    outlier_min_neighbors: int = 2,
    neighbor_cap: int = 8,
    m_max: int = 1200,
) -> tuple[Anchor, ...]:
    if len(pts) == 0:
        return ()
    keys = np.floor(pts / voxel).astype(np.int64)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]
    keep = counts >= outlier_min_neighbors
    anchors = [
        Anchor(tuple(float(c) for c in centroids[i]), min(1.0, counts[i] / neighbor_cap))
        for i in np.nonzero(keep)[0]
    ]
    if len(anchors) > m_max:
        anchors.sort(key=lambda a: (-a.confidence, a.position))
        anchors = anchors[:m_max]
    anchors.sort(key=lambda a: a.position)
    return tuple(anchors)


# ---------------------------------------------------------------------------
# Object entities


@dataclass(frozen=True)
class EntityObservation:
    id: int
    label: str
    position: Vec3
    orientation: float
    confidence: float
    status: Status = Status.UNASSIGNED


def detect_objects(
    obs: Observation, beliefs: Mapping[int, Status] | None = None
) -> list[EntityObservation]:
    beliefs = beliefs or {}
    return [
        EntityObservation(
            id=s.id,
            label=s.label,
            position=s.position,
            orientation=s.orientation,
            confidence=min(1.0, max(0.0, s.confidence)),
            status=beliefs.get(s.id, Status.UNASSIGNED),
        )
        for s in sorted(obs.visible_targets, key=lambda s: s.id)
    ]


class TargetEstimator:
    """Per-robot running mean of its own noisy target sightings.

    Averaging shrinks the jitter between successive estimates, so pose
    refinement events taper off once a target has been seen for a while.
    """

    def __init__(self):
        self._n: dict[int, int] = {}
        self._pos: dict[int, np.ndarray] = {}
        self._sin: dict[int, float] = {}
        self._cos: dict[int, float] = {}

    def update(self, entities: Iterable[EntityObservation]) -> list[EntityObservation]:
        out = []
        for e in entities:
            n = self._n.get(e.id, 0) + 1
            self._n[e.id] = n
            p = np.asarray(e.position, dtype=float)
            prev = self._pos.get(e.id)
            self._pos[e.id] = p if prev is None else prev + (p - prev) / n
            self._sin[e.id] = self._sin.get(e.id, 0.0) + math.sin(e.orientation)
            self._cos[e.id] = self._cos.get(e.id, 0.0) + math.cos(e.orientation)
            out.append(
                EntityObservation(
                    id=e.id,
                    label=e.label,
                    position=tuple(float(c) for c in self._pos[e.id]),
                    orientation=math.atan2(self._sin[e.id], self._cos[e.id]),
                    confidence=e.confidence,
                    status=e.status,
                )
            )
        return out
