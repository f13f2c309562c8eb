"""Event-triggered transmission and the shared bandwidth-capped channel."""

from __future__ import annotations

import bisect
import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Mapping

import numpy as np

from .codec import (
    K_MAX,
    EntityRecordWire,
    Header,
    PriorityClass,
    RawPayload,
    SemanticMessage,
    payload_size,
)
from .perception import Anchor, EdgeConfig, EdgeMask, edge_distance
from .world import Status, Vec3

log = logging.getLogger(__name__)

E1, E2, E3, E4 = "E1", "E2", "E3", "E4"


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class EventThresholds:
    delta_p: float = 0.25
    delta_theta: float = 0.35
    delta_E: float = 0.01

    def __post_init__(self):
        if min(self.delta_p, self.delta_theta, self.delta_E) <= 0:
            raise ValueError("event thresholds must be strictly positive")


@dataclass(frozen=True)
class CachedEntity:
    position: Vec3
    orientation: float
    status: Status


@dataclass(frozen=True)
class TransmitCache:
    entities: Mapping[int, CachedEntity] = field(default_factory=dict)
    edge: EdgeMask | None = None
    last_step: int | None = None
    # ground columns covered by every edge mask transmitted so far
    edge_columns: frozenset[tuple[int, int]] = frozenset()


@dataclass(frozen=True)
class LocalSemantics:
    """One robot's semantics for one step, plus what the header needs."""

    robot_id: int
    step: int
    pose: tuple[float, float, float, float]
    edge: EdgeMask
    anchors: tuple[Anchor, ...]
    entities: tuple[EntityRecordWire, ...]


@dataclass(frozen=True)
class TransmitDecision:
    gamma: bool
    triggered: frozenset[str]
    message: SemanticMessage | None = None


def entity_events(
    entities: Iterable[EntityRecordWire], cache: TransmitCache, thr: EventThresholds
) -> dict[int, set[str]]:
    """Per-entity E1/E2/E3 flags against the last transmitted state."""
    flags: dict[int, set[str]] = {}
    for e in entities:
        cached = cache.entities.get(e.id)
        if cached is None:
            flags[e.id] = {E1}
            continue
        f = set()
        if math.dist(e.position, cached.position) > thr.delta_p or abs(
            wrap_angle(e.orientation - cached.orientation)
        ) > thr.delta_theta:
            f.add(E2)
        if e.status != cached.status:
            f.add(E3)
        if f:
            flags[e.id] = f
    return flags


def mask_columns(mask: EdgeMask) -> set[tuple[int, int]]:
    """Global ground columns whose blocks are set in ``mask``."""
    k = mask.cells_per_voxel
    us, vs = np.nonzero(mask.bits)
    if len(us) == 0:
        return set()
    cols = np.unique(np.stack([(us + mask.origin_cell[0]) // k, (vs + mask.origin_cell[1]) // k], axis=1), axis=0)
    return set(map(tuple, cols.tolist()))


def shared_reference(
    edge: EdgeMask, cache: TransmitCache, shared: AbstractSet[tuple[int, int]] = frozenset()
) -> EdgeMask:
    """The part of ``edge`` already covered by earlier transmissions.

    ``shared`` adds columns this robot has received from teammates.
    """
    k = edge.cells_per_voxel
    ref = np.zeros_like(edge.bits)
    known = cache.edge_columns | shared if shared else cache.edge_columns
    for cx, cy in mask_columns(edge) & known:
        u, v = cx * k - edge.origin_cell[0], cy * k - edge.origin_cell[1]
        ref[max(u, 0) : u + k, max(v, 0) : v + k] = True
    return EdgeMask(ref & edge.bits, edge.origin_cell, k, edge.voxel_size)


def structural_change(
    edge: EdgeMask, cache: TransmitCache, thr: EventThresholds, shared: AbstractSet[tuple[int, int]] = frozenset()
) -> bool:
    """Current edges against the already-shared structure in the same frame.

    Structure that scrolled out of view or is occluded is not a change: the
    team map is a union, so only unshared edges carry new information.
    ``shared`` holds columns already received from teammates.
    """
    return edge_distance(edge, shared_reference(edge, cache, shared)) > thr.delta_E


def _priority(triggered: frozenset[str]) -> PriorityClass:
    if E3 in triggered:
        return PriorityClass.P0_STATUS
    if E1 in triggered:
        return PriorityClass.P0_NEW
    if E2 in triggered:
        return PriorityClass.P1_POSE
    return PriorityClass.P2_STRUCTURE


def evaluate_events(
    sem: LocalSemantics,
    cache: TransmitCache,
    thr: EventThresholds,
    k_max: int = K_MAX,
    shared: AbstractSet[tuple[int, int]] = frozenset(),
) -> TransmitDecision:
    per_entity = entity_events(sem.entities, cache, thr)
    triggered: set[str] = set().union(*per_entity.values()) if per_entity else set()
    if structural_change(sem.edge, cache, thr, shared):
        triggered.add(E4)
    if not triggered:
        return TransmitDecision(False, frozenset())

    frozen = frozenset(triggered)
    objects = None
    if per_entity:
        order = {E3: 0, E1: 1, E2: 2}
        chosen = sorted(
            (e for e in sem.entities if e.id in per_entity),
            key=lambda e: (min(order[f] for f in per_entity[e.id]), e.id),
        )[:k_max]
        objects = tuple(sorted(chosen, key=lambda e: e.id))
    structure = E4 in frozen
    msg = SemanticMessage(
        header=Header(sem.robot_id, sem.step, sem.pose),
        edge=sem.edge.bits if structure else None,
        anchors=tuple(sem.anchors) if structure else None,
        objects=objects,
        priority_class=_priority(frozen),
    )
    return TransmitDecision(True, frozen, msg)


def update_cache(
    cache: TransmitCache, msg: SemanticMessage, step: int, edge_config: EdgeConfig | None = None
) -> TransmitCache:
    """Record what a granted message carried. Untouched entities keep their entries."""
    entities = dict(cache.entities)
    for e in msg.objects or ():
        entities[e.id] = CachedEntity(e.position, e.orientation, e.status)
    edge, columns = cache.edge, cache.edge_columns
    if msg.edge is not None and msg.header.pose is not None:
        cfg = edge_config or EdgeConfig()
        edge = EdgeMask(msg.edge, cfg.origin_for_position(msg.header.pose[:3]), cfg.cells_per_voxel, cfg.voxel_size)
        columns = columns | mask_columns(edge)
    return TransmitCache(entities, edge, step, frozenset(columns))


# ---------------------------------------------------------------------------
# Channel


class ConfigurationError(Exception):
    pass


RAW_CLASS = "RAW"


@dataclass
class _Entry:
    key: tuple
    sender: int
    enqueue_step: int
    payload: SemanticMessage | RawPayload
    bits: int
    remaining: int
    klass: str

    def __lt__(self, other: _Entry) -> bool:
        return self.key < other.key


@dataclass(frozen=True)
class LogRow:
    step: int
    sender: int
    klass: str
    bits: int
    enqueue_step: int
    grant_step: int | None


@dataclass
class ScheduleResult:
    granted: list[tuple[int, SemanticMessage | RawPayload]]
    deferred: int
    granted_bits: int


class BroadcastChannel:
    """Single shared arbiter enforcing a per-step bit budget.

    Semantic messages are granted whole in priority order (P0, then P1, then
    P2; FIFO by enqueue step within a class, E3 before E1 at equal steps,
    lower sender id first). Scheduling stops at the first message that does
    not fit. Raw payloads stream FIFO and may span several steps; a raw
    payload counts as granted on the step its last bit is sent.
    """

    def __init__(self, b_max: int, coalesce: bool = True):
        if b_max <= 0:
            raise ConfigurationError("b_max must be positive")
        self.b_max = int(b_max)
        self.coalesce = coalesce
        self._queue: list[_Entry] = []
        self._seq = itertools.count()
        self.log: list[LogRow] = []
        self.granted_per_step: dict[int, int] = {}
        self.queue_bits_history: list[int] = []
        self.latencies: list[int] = []
        self.coalesced: list[tuple[int, int]] = []
        self.submitted_bits = 0
        self._pending_bits = 0

    @property
    def pending(self) -> int:
        return len(self._queue)

    @property
    def pending_bits(self) -> int:
        return self._pending_bits

    def pending_entries(self) -> list[tuple[int, str, int, int]]:
        return [(e.sender, e.klass, e.remaining, e.enqueue_step) for e in self._queue]

    def submit(self, step: int, request: SemanticMessage | RawPayload, sender: int) -> None:
        bits = payload_size(request)
        if isinstance(request, RawPayload):
            klass = RAW_CLASS
            key = (3, step, 0, sender, next(self._seq))
        else:
            if bits > self.b_max:
                raise ConfigurationError(
                    f"message of {bits} bits from robot {sender} can never fit b_max={self.b_max}"
                )
            pc = PriorityClass.P2_STRUCTURE if request.priority_class is None else request.priority_class
            klass = pc.name
            if pc == PriorityClass.P2_STRUCTURE and self.coalesce:
                for entry in self._queue:
                    if entry.sender == sender and entry.klass == klass and entry.remaining == entry.bits:
                        self.submitted_bits += bits - entry.bits
                        self._pending_bits += bits - entry.bits
                        entry.payload = request
                        entry.bits = entry.remaining = bits
                        self.coalesced.append((step, sender))
                        log.debug("coalesced structural update from robot %d at step %d", sender, step)
                        return
            sub = 0 if pc == PriorityClass.P0_STATUS else 1 if pc == PriorityClass.P0_NEW else 0
            key = (pc.rank, step, sub, sender, next(self._seq))
        self.submitted_bits += bits
        self._pending_bits += bits
        bisect.insort(self._queue, _Entry(key, sender, step, request, bits, bits, klass))

    def schedule_step(self, step: int) -> ScheduleResult:
        budget = self.b_max
        granted = []
        i = 0
        queue = self._queue
        while i < len(queue) and budget > 0:
            entry = queue[i]
            if entry.klass == RAW_CLASS:
                chunk = min(entry.remaining, budget)
                entry.remaining -= chunk
                budget -= chunk
                self._pending_bits -= chunk
                done = entry.remaining == 0
                self.log.append(LogRow(step, entry.sender, entry.klass, chunk, entry.enqueue_step, step if done else None))
                if not done:
                    break
            elif entry.bits <= budget:
                budget -= entry.bits
                self._pending_bits -= entry.bits
                entry.remaining = 0
                self.log.append(LogRow(step, entry.sender, entry.klass, entry.bits, entry.enqueue_step, step))
            else:
                break
            granted.append((entry.sender, entry.payload))
            self.latencies.append(step - entry.enqueue_step)
            i += 1
        del queue[:i]
        used = self.b_max - budget
        assert used <= self.b_max
        self.granted_per_step[step] = used
        self.queue_bits_history.append(self._pending_bits)
        return ScheduleResult(granted, len(queue), used)

    @property
    def total_granted_bits(self) -> int:
        return sum(r.bits for r in self.log)

    def audit(self) -> list[int]:
        """Steps whose granted bits exceed b_max (should always be empty)."""
        per_step: dict[int, int] = {}
        for r in self.log:
            per_step[r.step] = per_step.get(r.step, 0) + r.bits
        return sorted(s for s, b in per_step.items() if b > self.b_max)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "sender", "class", "bits", "enqueue_step", "grant_step"])
            for r in self.log:
                w.writerow([r.step, r.sender, r.klass, r.bits, r.enqueue_step, "" if r.grant_step is None else r.grant_step])
