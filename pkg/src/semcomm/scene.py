"""Per-robot shared semantic scene: fused edges, anchors and entity table.

Each robot keeps one replica, fed by the broadcast channel. The fusion rules
are chosen so replicas converge regardless of delivery order:

* edges are a union (only ever gain cells),
* anchors keep the latest contribution per sender per voxel and expose their
  confidence-weighted merge,
* entity statuses only move up the lattice, and entity geometry is the
  confidence-weighted merge of the latest estimate from each source.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, MutableMapping

import numpy as np

from .codec import EntityRecordWire, SemanticMessage
from .perception import Anchor, EdgeConfig, EdgeMask, EntityObservation
from .world import Status, Vec3

log = logging.getLogger(__name__)


class Traversability(Enum):
    BLOCKED = "blocked"
    UNKNOWN_FREE = "unknown_free"


@dataclass(frozen=True)
class SourceEstimate:
    source: int
    position: Vec3
    orientation: float
    confidence: float
    step: int


@dataclass(frozen=True)
class EntityRecord:
    id: int
    label: str
    position: Vec3
    orientation: float
    confidence: float
    status: Status
    claimer: int | None = None
    claim_step: int | None = None
    last_update_step: int = 0
    sources: tuple[SourceEstimate, ...] = ()


# ---------------------------------------------------------------------------
# Anchors


@dataclass(frozen=True)
class MergedAnchor:
    position: Vec3
    confidence: float
    weight: float
    count: int


def anchor_key(position: Iterable[float], voxel: float) -> tuple[int, int, int]:
    return tuple(int(math.floor(c / voxel)) for c in position)  # type: ignore[return-value]


def merge_anchors(
    index: MutableMapping[tuple, MergedAnchor], incoming: Iterable[Anchor], voxel: float
) -> MutableMapping[tuple, MergedAnchor]:
    """Fold anchors into a voxel-keyed index, in place.

    Each voxel keeps the confidence-weighted mean position of everything that
    fell into it and the maximum confidence. The running weight makes the
    result independent of insertion order. When every weight is zero the
    plain mean is used.
    """
    for a in incoming:
        key = anchor_key(a.position, voxel)
        cur = index.get(key)
        if cur is None:
            index[key] = MergedAnchor(tuple(a.position), a.confidence, a.confidence, 1)  # type: ignore[arg-type]
            continue
        w = cur.weight + a.confidence
        n = cur.count + 1
        if w > 0:
            pos = tuple((cur.weight * p + a.confidence * q) / w for p, q in zip(cur.position, a.position))
        else:
            pos = tuple((cur.count * p + q) / n for p, q in zip(cur.position, a.position))
        index[key] = MergedAnchor(pos, max(cur.confidence, a.confidence), w, n)  # type: ignore[arg-type]
    return index


# ---------------------------------------------------------------------------
# Entities


def _fuse_sources(sources: Iterable[SourceEstimate]) -> tuple[Vec3, float, float]:
    src = list(sources)
    if len(src) == 1:
        return src[0].position, src[0].orientation, src[0].confidence
    total = sum(s.confidence for s in src)
    if total > 0:
        weights = [s.confidence / total for s in src]
    else:
        weights = [1.0 / len(src)] * len(src)
    pos = tuple(sum(w * s.position[i] for w, s in zip(weights, src)) for i in range(3))
    sin = sum(w * math.sin(s.orientation) for w, s in zip(weights, src))
    cos = sum(w * math.cos(s.orientation) for w, s in zip(weights, src))
    theta = math.atan2(sin, cos) if (sin or cos) else src[0].orientation
    return pos, theta, max(s.confidence for s in src)  # type: ignore[return-value]


def _match(
    entities: Mapping[int, EntityRecord], incoming: EntityRecordWire, eps_o: float
) -> EntityRecord | None:
    same = entities.get(incoming.id)
    if same is not None:
        return same
    best = None
    for rec in entities.values():
        if rec.label != incoming.label:
            continue
        d = math.dist(rec.position, incoming.position)
        if d <= eps_o and (best is None or (d, rec.id) < best[0]):
            best = ((d, rec.id), rec)
    return None if best is None else best[1]


def associate_and_sync(
    entities: MutableMapping[int, EntityRecord],
    incoming: EntityRecordWire | EntityObservation,
    eps_o: float,
    step: int,
    source: int = 0,
) -> MutableMapping[int, EntityRecord]:
    """Match ``incoming`` to a record and fuse it, in place.

    A record with the same id is preferred; otherwise the nearest record with
    the same label within ``eps_o`` (ties to the lower id). Statuses only
    rise. Geometry keeps the latest estimate per ``source``.
    """
    if eps_o <= 0:
        raise ValueError("eps_o must be positive")
    claimer = getattr(incoming, "claimer", None) or None
    est = SourceEstimate(source, tuple(incoming.position), incoming.orientation, incoming.confidence, step)  # type: ignore[arg-type]
    rec = _match(entities, incoming, eps_o)
    if rec is None:
        active = Status.CLAIMED <= incoming.status < Status.DELIVERED
        pos, theta, conf = _fuse_sources((est,))
        entities[incoming.id] = EntityRecord(
            id=incoming.id,
            label=incoming.label,
            position=pos,
            orientation=theta,
            confidence=conf,
            status=incoming.status,
            claimer=claimer if active else None,
            claim_step=step if active and claimer is not None else None,
            last_update_step=step,
            sources=(est,),
        )
        return entities

    sources = {s.source: s for s in rec.sources}
    prev = sources.get(source)
    if prev is None or step >= prev.step:
        sources[source] = est
    ordered = tuple(sources[k] for k in sorted(sources))
    pos, theta, conf = _fuse_sources(ordered)
    status, who, when = rec.status, rec.claimer, rec.claim_step
    if incoming.status > rec.status:
        status = incoming.status
        if status == Status.DELIVERED:
            who, when = None, None
        else:
            who, when = claimer, step
    entities[rec.id] = replace(
        rec,
        position=pos,
        orientation=theta,
        confidence=conf,
        status=status,
        claimer=who,
        claim_step=when,
        last_update_step=max(rec.last_update_step, step),
        sources=ordered,
    )
    return entities


# ---------------------------------------------------------------------------
# Edges


def aggregate_edges(edges: np.ndarray, mask_bits: np.ndarray, origin_cell: tuple[int, int]) -> int:
    """OR a translated mask into the global grid, in place.

    Returns the number of 1-cells that fell outside the grid and were dropped.
    """
    gx, gy = edges.shape
    su, sv = mask_bits.shape
    u0, v0 = origin_cell
    x0, x1 = max(u0, 0), min(u0 + su, gx)
    y0, y1 = max(v0, 0), min(v0 + sv, gy)
    total = int(np.count_nonzero(mask_bits))
    if x0 >= x1 or y0 >= y1:
        return total
    window = mask_bits[x0 - u0 : x1 - u0, y0 - v0 : y1 - v0]
    edges[x0:x1, y0:y1] |= window
    return total - int(np.count_nonzero(window))


def dilate(grid: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation of a 2D boolean grid."""
    if radius <= 0:
        return grid.copy()
    out = grid.copy()
    nx, ny = grid.shape
    for dx in range(-radius, radius + 1):
        for dy in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            xs = slice(max(dx, 0), nx + min(dx, 0))
            xd = slice(max(-dx, 0), nx + min(-dx, 0))
            ys = slice(max(dy, 0), ny + min(dy, 0))
            yd = slice(max(-dy, 0), ny + min(-dy, 0))
            out[xd, yd] |= grid[xs, ys]
    return out


# ---------------------------------------------------------------------------
# Scene


@dataclass(frozen=True)
class SceneConfig:
    dims: tuple[int, int, int] = (32, 32, 4)
    voxel_size: float = 1.0
    edge: EdgeConfig = field(default_factory=EdgeConfig)
    merge_voxel: float | None = None  # defaults to voxel_size
    eps_o: float = 0.5
    inflation: int = 0
    cover_radius: float = 4.0

    @property
    def anchor_voxel(self) -> float:
        return self.merge_voxel or self.voxel_size


def _cover_offsets(radius: float, step: float = 0.25):
    r = int(math.floor(radius))
    cells = []
    paths = []
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            if dx * dx + dy * dy > radius * radius:
                continue
            n = max(1, int(math.ceil(math.hypot(dx, dy) / step)))
            inner = []
            for i in range(1, n):
                f = i / n
                c = (int(math.floor(0.5 + f * dx)), int(math.floor(0.5 + f * dy)))
                if c != (0, 0) and c != (dx, dy) and (not inner or inner[-1] != c):
                    inner.append(c)
            cells.append((dx, dy))
            paths.append(inner)
    width = max(1, max(len(p) for p in paths))
    px = np.zeros((len(cells), width), dtype=np.int64)
    py = np.zeros((len(cells), width), dtype=np.int64)
    for i, p in enumerate(paths):
        for j, (a, b) in enumerate(p):
            px[i, j], py[i, j] = a, b
    return np.array(cells, dtype=np.int64), px, py


class SharedScene:
    """One robot's fused replica of the team's semantics."""

    def __init__(self, config: SceneConfig | None = None, owner: int | None = None):
        self.config = config or SceneConfig()
        self.owner = owner
        nx, ny, _ = self.config.dims
        k = self.config.edge.cells_per_voxel
        self.edges = np.zeros((nx * k, ny * k), dtype=bool)
        self._edge_voxels = np.zeros((nx, ny), dtype=bool)
        self._blocked_cache: dict[int, np.ndarray] = {}
        self.anchor_sources: dict[tuple, dict[int, tuple[Anchor, int]]] = {}
        self.anchor_index: dict[tuple, MergedAnchor] = {}
        self.entities: dict[int, EntityRecord] = {}
        self.teammates: dict[int, tuple[tuple[float, ...], int]] = {}
        self.covered = np.zeros((nx, ny), dtype=bool)
        self.last_fused_step = -1
        self.dropped_edge_cells = 0
        self.edges_without_pose = 0
        self._cover = _cover_offsets(self.config.cover_radius)

    # -- fusion ------------------------------------------------------------

    def fuse_message(self, msg: SemanticMessage) -> SharedScene:
        h = msg.header
        sender, step = h.robot_id, h.timestamp
        if msg.edge is not None:
            if h.pose is None:
                self.edges_without_pose += 1
                log.info("edge section from robot %d without pose skipped", sender)
            else:
                origin = self.config.edge.origin_for_position(h.pose[:3])
                self._aggregate(msg.edge, origin)
        if h.pose is not None:
            known = self.teammates.get(sender)
            if known is None or step >= known[1]:
                self.teammates[sender] = (tuple(h.pose), step)
            self._mark_covered(h.pose)
        if msg.anchors:
            self._fuse_anchors(msg.anchors, sender, step)
        for e in msg.objects or ():
            associate_and_sync(self.entities, e, self.config.eps_o, step, source=sender)
        self.last_fused_step = max(self.last_fused_step, step)
        return self

    def _fuse_anchors(self, anchors: Iterable[Anchor], sender: int, step: int) -> None:
        voxel = self.config.anchor_voxel
        touched = set()
        for a in anchors:
            key = anchor_key(a.position, voxel)
            per = self.anchor_sources.setdefault(key, {})
            prev = per.get(sender)
            if prev is None or step >= prev[1]:
                per[sender] = (a, step)
                touched.add(key)
        for key in touched:
            per = self.anchor_sources[key]
            view: dict = {}
            merge_anchors(view, (per[s][0] for s in sorted(per)), voxel)
            self.anchor_index[key] = view[key]

    def _aggregate(self, bits: np.ndarray, origin: tuple[int, int]) -> None:
        dropped = aggregate_edges(self.edges, bits, origin)
        self.dropped_edge_cells += dropped
        k = self.config.edge.cells_per_voxel
        nx, ny = self._edge_voxels.shape
        vx0 = max(origin[0] // k, 0)
        vy0 = max(origin[1] // k, 0)
        vx1 = min(-(-(origin[0] + bits.shape[0]) // k), nx)
        vy1 = min(-(-(origin[1] + bits.shape[1]) // k), ny)
        if vx0 >= vx1 or vy0 >= vy1:
            return
        region = self.edges[vx0 * k : vx1 * k, vy0 * k : vy1 * k]
        reduced = region.reshape(vx1 - vx0, k, vy1 - vy0, k).any(axis=(1, 3))
        if not np.array_equal(reduced, self._edge_voxels[vx0:vx1, vy0:vy1]):
            self._edge_voxels[vx0:vx1, vy0:vy1] = reduced
            self._blocked_cache.clear()

    def _mark_covered(self, pose: tuple[float, ...]) -> None:
        nx, ny = self.covered.shape
        vs = self.config.voxel_size
        vx, vy = int(math.floor(pose[0] / vs)), int(math.floor(pose[1] / vs))
        if not (0 <= vx < nx and 0 <= vy < ny):
            return
        cells, px, py = self._cover
        cx, cy = vx + cells[:, 0], vy + cells[:, 1]
        ok = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        ix = np.clip(vx + px, 0, nx - 1)
        iy = np.clip(vy + py, 0, ny - 1)
        clear = ~self._edge_voxels[ix, iy].any(axis=1)
        sel = ok & clear
        self.covered[cx[sel], cy[sel]] = True

    def observe_edges(self, mask: EdgeMask) -> None:
        """Fold the owner's own edge mask straight into the aggregate."""
        self._aggregate(mask.bits, mask.origin_cell)

    def observe_local(self, entities: Iterable[EntityObservation], step: int) -> None:
        """Fold the owner's own sightings in directly; robots always know what they see."""
        src = self.owner if self.owner is not None else 0
        for e in entities:
            associate_and_sync(self.entities, e, self.config.eps_o, step, source=src)

    def apply_local_status(self, entity_id: int, status: Status, robot_id: int, step: int) -> bool:
        rec = self.entities.get(entity_id)
        if rec is None or status <= rec.status:
            return False
        if status == Status.DELIVERED:
            who, when = None, None
        else:
            who, when = robot_id, step
        self.entities[entity_id] = replace(
            rec, status=status, claimer=who, claim_step=when, last_update_step=max(rec.last_update_step, step)
        )
        return True

    # -- queries -----------------------------------------------------------

    @property
    def edge_voxels(self) -> np.ndarray:
        return self._edge_voxels

    def blocked_grid(self, inflation: int | None = None) -> np.ndarray:
        r = self.config.inflation if inflation is None else inflation
        grid = self._blocked_cache.get(r)
        if grid is None:
            grid = dilate(self._edge_voxels, r)
            self._blocked_cache[r] = grid
        return grid

    def status_table(self) -> dict[int, Status]:
        return {i: r.status for i, r in sorted(self.entities.items())}

    def state_key(self) -> tuple:
        """Hashable summary of the fused content, for equality checks."""
        anchors = tuple(sorted((k, v.position, v.confidence) for k, v in self.anchor_index.items()))
        entities = tuple(sorted(self.entities.items()))
        return (self.edges.tobytes(), anchors, entities)

    def snapshot(self, step: int) -> dict:
        edge_vox = np.argwhere(self._edge_voxels)
        return {
            "schema": "semcomm.scene_snapshot",
            "version": 1,
            "owner": self.owner,
            "step": step,
            "edge_cell_count": int(self.edges.sum()),
            "edge_voxels": edge_vox.tolist(),
            "anchors": [
                {"voxel": list(k), "position": list(v.position), "confidence": v.confidence}
                for k, v in sorted(self.anchor_index.items())
            ],
            "entities": [
                {
                    "id": r.id,
                    "label": r.label,
                    "position": list(r.position),
                    "orientation": r.orientation,
                    "confidence": r.confidence,
                    "status": r.status.name.lower(),
                    "claimer": r.claimer,
                    "last_update_step": r.last_update_step,
                }
                for _, r in sorted(self.entities.items())
            ],
        }

    def write_snapshot(self, path, step: int) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(step), fh, sort_keys=True)


def fuse_message(scene: SharedScene, msg: SemanticMessage) -> SharedScene:
    return scene.fuse_message(msg)


def query_traversability(scene: SharedScene, cell: tuple[int, int], inflation: int | None = None) -> Traversability:
    nx, ny = scene.covered.shape
    x, y = cell[0], cell[1]
    if not (0 <= x < nx and 0 <= y < ny):
        raise ValueError(f"cell {cell} outside the boundary")
    grid = scene.blocked_grid(inflation)
    return Traversability.BLOCKED if grid[x, y] else Traversability.UNKNOWN_FREE
