"""Bit-exact wire format for semantic messages and the raw baseline payload.

Layout (big-endian bit order, fields packed without alignment)::

    header     robot_id:8  timestamp:32  pose_present:1
               [x:16 y:16 z:16 yaw:16]            if pose_present
    presence   edge:1 anchors:1 objects:1
    edge       65536 mask bits, row-major over [x_cell, y_cell]
    anchors    count:11, then count x (x:14 y:14 z:14 confidence:6)
    objects    count:5,  then count x (id:16 label:8 x:16 y:16 z:16
                                       yaw:8 confidence:8 status:2 claimer:6)

The encoded stream is zero-padded to a whole number of bytes; ``nbits``
records the true length. Positions are quantised over the world boundary
with a mid-cell reconstruction, so the error is at most half a step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .perception import MASK_BITS, MASK_SIZE, Anchor
from .world import LABELS, Observation, Status, Vec3

Bounds = tuple[Sequence[float], Sequence[float]]

ROBOT_ID_BITS = 8
TIMESTAMP_BITS = 32
POSE_AXIS_BITS = 16
YAW_BITS = 16
PRESENCE_BITS = 3
ANCHOR_AXIS_BITS = 14
ANCHOR_CONF_BITS = 6
ANCHOR_BITS = 3 * ANCHOR_AXIS_BITS + ANCHOR_CONF_BITS  # 48
ANCHOR_COUNT_BITS = 11
ENTITY_ID_BITS = 16
LABEL_BITS = 8
ENTITY_AXIS_BITS = 16
ENTITY_YAW_BITS = 8
ENTITY_CONF_BITS = 8
STATUS_BITS = 2
CLAIMER_BITS = 6
ENTITY_BITS = (
    ENTITY_ID_BITS + LABEL_BITS + 3 * ENTITY_AXIS_BITS + ENTITY_YAW_BITS + ENTITY_CONF_BITS + STATUS_BITS + CLAIMER_BITS
)  # 96
OBJECT_COUNT_BITS = 5
HEADER_BITS_NO_POSE = ROBOT_ID_BITS + TIMESTAMP_BITS + 1
POSE_BITS = 3 * POSE_AXIS_BITS + YAW_BITS

K_MAX = 20
M_MAX = 1200
DEFAULT_S_RAW = 640 * 480 * 8


class CodecError(Exception):
    pass


class TruncatedStreamError(CodecError):
    pass


class UnknownSectionError(CodecError):
    """Bits remain after every declared section has been read."""


class RecordCountError(CodecError):
    pass


class UnknownLabelError(CodecError):
    pass


class PriorityClass(IntEnum):
    P0_STATUS = 0
    P0_NEW = 1
    P1_POSE = 2
    P2_STRUCTURE = 3

    @property
    def rank(self) -> int:
        """Scheduling class; the two P0 kinds share one class."""
        return {0: 0, 1: 0, 2: 1, 3: 2}[int(self)]


@dataclass(frozen=True)
class Header:
    robot_id: int
    timestamp: int
    pose: tuple[float, float, float, float] | None = None  # x, y, z, yaw

    @property
    def pose_present(self) -> bool:
        return self.pose is not None


@dataclass(frozen=True)
class EntityRecordWire:
    id: int
    label: str
    position: Vec3
    orientation: float
    confidence: float
    status: Status
    claimer: int | None = None


@dataclass(frozen=True, eq=False)
class SemanticMessage:
    header: Header
    edge: np.ndarray | None = None
    anchors: tuple[Anchor, ...] | None = None
    objects: tuple[EntityRecordWire, ...] | None = None
    priority_class: PriorityClass | None = field(default=None, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticMessage):
            return NotImplemented
        if (self.edge is None) != (other.edge is None):
            return False
        if self.edge is not None and not np.array_equal(self.edge, other.edge):
            return False
        return (
            self.header == other.header
            and self.anchors == other.anchors
            and self.objects == other.objects
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class RawPayload:
    """Fixed-size raw sensing blob.

    ``snapshot`` is the sender's semantic state at capture time; receivers
    derive the same semantics a raw-stream consumer would, but only after the
    full ``size_bits`` have crossed the channel.
    """

    size_bits: int
    sender: int
    step: int
    snapshot: SemanticMessage | None = field(default=None, compare=False)


@dataclass(frozen=True)
class WireBits:
    data: bytes
    nbits: int

    def __len__(self) -> int:
        return self.nbits

    def to_str(self) -> str:
        if not self.data:
            return ""
        return format(int.from_bytes(self.data, "big"), f"0{len(self.data) * 8}b")[: self.nbits]

    @classmethod
    def from_str(cls, bits: str) -> WireBits:
        n = len(bits)
        pad = (-n) % 8
        if n == 0:
            return cls(b"", 0)
        value = int(bits + "0" * pad, 2)
        return cls(value.to_bytes((n + pad) // 8, "big"), n)


# ---------------------------------------------------------------------------
# Quantisation


def _axis_step(lo: float, hi: float, bits: int) -> float:
    return (hi - lo) / (1 << bits)


def quantize_position(p: Sequence[float], bounds: Bounds, bits: int = ANCHOR_AXIS_BITS) -> tuple[int, ...]:
    lo, hi = bounds
    codes = []
    top = (1 << bits) - 1
    for i, v in enumerate(p):
        if not lo[i] <= v <= hi[i]:
            raise ValueError(f"position component {v} outside [{lo[i]}, {hi[i]}]")
        step = _axis_step(lo[i], hi[i], bits)
        codes.append(min(int(math.floor((v - lo[i]) / step)), top))
    return tuple(codes)


def dequantize_position(codes: Sequence[int], bounds: Bounds, bits: int = ANCHOR_AXIS_BITS) -> Vec3:
    lo, hi = bounds
    return tuple(lo[i] + (c + 0.5) * _axis_step(lo[i], hi[i], bits) for i, c in enumerate(codes))  # type: ignore[return-value]


def quantize_angle(theta: float, bits: int = YAW_BITS) -> int:
    n = 1 << bits
    return int(round((theta + math.pi) / (2 * math.pi) * n)) % n


def dequantize_angle(code: int, bits: int = YAW_BITS) -> float:
    return code * 2 * math.pi / (1 << bits) - math.pi


def quantize_unit(c: float, bits: int) -> int:
    top = (1 << bits) - 1
    return int(round(min(max(c, 0.0), 1.0) * top))


def dequantize_unit(code: int, bits: int) -> float:
    return code / ((1 << bits) - 1)


def _label_code(label: str) -> int:
    try:
        return LABELS.index(label)
    except ValueError:
        raise UnknownLabelError(f"label {label!r} has no wire code") from None


# ---------------------------------------------------------------------------
# Sizes


def section_sizes(msg: SemanticMessage) -> dict[str, int]:
    sizes = {
        "header": HEADER_BITS_NO_POSE + (POSE_BITS if msg.header.pose_present else 0),
        "presence": PRESENCE_BITS,
        "edge": MASK_BITS if msg.edge is not None else 0,
        "anchor_count": ANCHOR_COUNT_BITS if msg.anchors is not None else 0,
        "anchors": ANCHOR_BITS * len(msg.anchors) if msg.anchors is not None else 0,
        "object_count": OBJECT_COUNT_BITS if msg.objects is not None else 0,
        "objects": ENTITY_BITS * len(msg.objects) if msg.objects is not None else 0,
    }
    return sizes


def payload_size(msg: SemanticMessage | RawPayload) -> int:
    """Encoded length in bits, computed without encoding."""
    if isinstance(msg, RawPayload):
        return msg.size_bits
    return sum(section_sizes(msg).values())


# ---------------------------------------------------------------------------
# Encoding


def _fmt(value: int, width: int) -> str:
    if not 0 <= value < (1 << width):
        raise ValueError(f"value {value} does not fit in {width} bits")
    return format(value, f"0{width}b")


def _anchor_codes(a: Anchor, bounds: Bounds) -> tuple[int, int, int, int]:
    x, y, z = quantize_position(a.position, bounds, ANCHOR_AXIS_BITS)
    return x, y, z, quantize_unit(a.confidence, ANCHOR_CONF_BITS)


def encode(msg: SemanticMessage, bounds: Bounds, k_max: int = K_MAX, m_max: int = M_MAX) -> WireBits:
    h = msg.header
    parts = [_fmt(h.robot_id, ROBOT_ID_BITS), _fmt(h.timestamp, TIMESTAMP_BITS)]
    if h.pose is None:
        parts.append("0")
    else:
        parts.append("1")
        for c in quantize_position(h.pose[:3], bounds, POSE_AXIS_BITS):
            parts.append(_fmt(c, POSE_AXIS_BITS))
        parts.append(_fmt(quantize_angle(h.pose[3]), YAW_BITS))
    parts.append(
        "".join("1" if s is not None else "0" for s in (msg.edge, msg.anchors, msg.objects))
    )

    if msg.edge is not None:
        edge = np.asarray(msg.edge, dtype=bool)
        if edge.shape != (MASK_SIZE, MASK_SIZE):
            raise ValueError(f"edge mask must be {MASK_SIZE}x{MASK_SIZE}, got {edge.shape}")
        parts.append((edge.reshape(-1).astype(np.uint8) + 48).tobytes().decode("ascii"))

    if msg.anchors is not None:
        if len(msg.anchors) > m_max:
            raise RecordCountError(f"{len(msg.anchors)} anchors exceed m_max={m_max}")
        codes = sorted(_anchor_codes(a, bounds) for a in msg.anchors)
        parts.append(_fmt(len(codes), ANCHOR_COUNT_BITS))
        for x, y, z, c in codes:
            parts.append(
                _fmt(x, ANCHOR_AXIS_BITS) + _fmt(y, ANCHOR_AXIS_BITS) + _fmt(z, ANCHOR_AXIS_BITS) + _fmt(c, ANCHOR_CONF_BITS)
            )

    if msg.objects is not None:
        if len(msg.objects) > k_max:
            raise RecordCountError(f"{len(msg.objects)} objects exceed K_max={k_max}")
        parts.append(_fmt(len(msg.objects), OBJECT_COUNT_BITS))
        for e in sorted(msg.objects, key=lambda e: e.id):
            pos = quantize_position(e.position, bounds, ENTITY_AXIS_BITS)
            parts.append(
                _fmt(e.id, ENTITY_ID_BITS)
                + _fmt(_label_code(e.label), LABEL_BITS)
                + "".join(_fmt(c, ENTITY_AXIS_BITS) for c in pos)
                + _fmt(quantize_angle(e.orientation, ENTITY_YAW_BITS), ENTITY_YAW_BITS)
                + _fmt(quantize_unit(e.confidence, ENTITY_CONF_BITS), ENTITY_CONF_BITS)
                + _fmt(int(e.status), STATUS_BITS)
                + _fmt(e.claimer or 0, CLAIMER_BITS)
            )
    return WireBits.from_str("".join(parts))


class _Reader:
    def __init__(self, bits: str):
        self.bits = bits
        self.pos = 0

    def take(self, width: int, what: str) -> str:
        end = self.pos + width
        if end > len(self.bits):
            raise TruncatedStreamError(
                f"stream ends at bit {len(self.bits)} while reading {what} ({width} bits at {self.pos})"
            )
        chunk = self.bits[self.pos : end]
        self.pos = end
        return chunk

    def uint(self, width: int, what: str) -> int:
        return int(self.take(width, what), 2)


def decode(wire: WireBits, bounds: Bounds, k_max: int = K_MAX, m_max: int = M_MAX) -> SemanticMessage:
    if len(wire.data) * 8 < wire.nbits:
        raise TruncatedStreamError(f"{len(wire.data)} bytes cannot hold {wire.nbits} bits")
    if len(wire.data) != (wire.nbits + 7) // 8:
        raise UnknownSectionError(f"{len(wire.data)} bytes carry more than the declared {wire.nbits} bits")
    full = format(int.from_bytes(wire.data, "big"), f"0{len(wire.data) * 8}b") if wire.data else ""
    if "1" in full[wire.nbits :]:
        raise UnknownSectionError("non-zero padding after the declared length")
    r = _Reader(full[: wire.nbits])

    robot_id = r.uint(ROBOT_ID_BITS, "robot_id")
    timestamp = r.uint(TIMESTAMP_BITS, "timestamp")
    pose = None
    if r.uint(1, "pose_present"):
        xyz = dequantize_position(
            [r.uint(POSE_AXIS_BITS, "pose") for _ in range(3)], bounds, POSE_AXIS_BITS
        )
        pose = (*xyz, dequantize_angle(r.uint(YAW_BITS, "pose yaw")))
    has_edge, has_anchors, has_objects = (c == "1" for c in r.take(PRESENCE_BITS, "presence"))

    edge = None
    if has_edge:
        chunk = r.take(MASK_BITS, "edge mask")
        edge = (np.frombuffer(chunk.encode("ascii"), dtype=np.uint8) - 48).astype(bool).reshape(MASK_SIZE, MASK_SIZE)

    anchors = None
    if has_anchors:
        m = r.uint(ANCHOR_COUNT_BITS, "anchor count")
        if m > m_max:
            raise RecordCountError(f"anchor count {m} exceeds m_max={m_max}")
        items = []
        for _ in range(m):
            codes = [r.uint(ANCHOR_AXIS_BITS, "anchor position") for _ in range(3)]
            conf = dequantize_unit(r.uint(ANCHOR_CONF_BITS, "anchor confidence"), ANCHOR_CONF_BITS)
            items.append(Anchor(dequantize_position(codes, bounds, ANCHOR_AXIS_BITS), conf))
        anchors = tuple(items)

    objects = None
    if has_objects:
        k = r.uint(OBJECT_COUNT_BITS, "object count")
        if k > k_max:
            raise RecordCountError(f"object count {k} exceeds K_max={k_max}")
        items = []
        for _ in range(k):
            eid = r.uint(ENTITY_ID_BITS, "entity id")
            code = r.uint(LABEL_BITS, "label")
            if code >= len(LABELS):
                raise UnknownLabelError(f"label code {code} is not defined")
            pos = dequantize_position(
                [r.uint(ENTITY_AXIS_BITS, "entity position") for _ in range(3)], bounds, ENTITY_AXIS_BITS
            )
            yaw = dequantize_angle(r.uint(ENTITY_YAW_BITS, "entity yaw"), ENTITY_YAW_BITS)
            conf = dequantize_unit(r.uint(ENTITY_CONF_BITS, "entity confidence"), ENTITY_CONF_BITS)
            status = Status(r.uint(STATUS_BITS, "status"))
            claimer = r.uint(CLAIMER_BITS, "claimer") or None
            items.append(EntityRecordWire(eid, LABELS[code], pos, yaw, conf, status, claimer))
        objects = tuple(items)

    if r.pos != len(r.bits):
        raise UnknownSectionError(f"{len(r.bits) - r.pos} bits follow the last declared section")
    return SemanticMessage(Header(robot_id, timestamp, pose), edge, anchors, objects)


def canonicalize(msg: SemanticMessage, bounds: Bounds) -> SemanticMessage:
    """Quantise and reorder ``msg`` exactly as a receiver would see it."""
    out = decode(encode(msg, bounds), bounds)
    return SemanticMessage(out.header, out.edge, out.anchors, out.objects, msg.priority_class)


@dataclass(frozen=True)
class RawConfig:
    s_raw: int = DEFAULT_S_RAW

    def __post_init__(self):
        if self.s_raw <= 0:
            raise ValueError("s_raw must be positive")


def encode_raw(obs: Observation, config: RawConfig | None = None, snapshot: SemanticMessage | None = None) -> RawPayload:
    config = config or RawConfig()
    return RawPayload(size_bits=config.s_raw, sender=obs.robot_id, step=obs.step, snapshot=snapshot)
