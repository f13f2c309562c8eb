"""Run driver: configuration, the fixed step loop, metrics and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shutil
import statistics
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import codec
from .codec import (
    K_MAX,
    M_MAX,
    EntityRecordWire,
    Header,
    RawConfig,
    RawPayload,
    SemanticMessage,
    canonicalize,
    encode_raw,
    payload_size,
)
from .comms import (
    BroadcastChannel,
    EventThresholds,
    LocalSemantics,
    TransmitCache,
    evaluate_events,
    mask_columns,
    structural_change,
    update_cache,
)
from .coordination import (
    AllocationWeights,
    Mode,
    RobotBehavior,
    StepContext,
    claims_in,
    execute_step,
    resolve_claims,
    teammate_views,
)
from .perception import (
    Anchor,
    EdgeConfig,
    EdgeMask,
    TargetEstimator,
    detect_objects,
    extract_anchors,
    extract_edges,
)
from .scene import SceneConfig, SharedScene
from .world import (
    GridWorld,
    RobotState,
    ScenarioParams,
    Sensor,
    Status,
    generate_scenario,
    load_scenario,
    step_motion,
)

log = logging.getLogger(__name__)

METRICS_SCHEMA = "semcomm.metrics"
TRACE_SCHEMA_VERSION = 1
MODES = ("semantic", "raw")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SimConfig:
    mode: str = "semantic"
    robots: int = 4
    b_max: int = 200_000
    seed: int = 0
    step_cap: int = 5000
    scenario: str | None = None
    scenario_params: ScenarioParams = field(default_factory=ScenarioParams)
    thresholds: EventThresholds = field(default_factory=EventThresholds)
    weights: AllocationWeights = field(default_factory=AllocationWeights)
    s_raw: int = codec.DEFAULT_S_RAW
    raw_period: int = 1
    k_max: int = K_MAX
    m_max: int = M_MAX
    sensing_radius: float = 8.0
    fov: float = 2 * math.pi
    pickup_radius: float = 1.5
    delivery_radius: float = 1.5
    teammate_max_age: int = 5
    coalesce: bool = True
    wire_roundtrip: bool = True
    snapshot_interval: int = 0  # 0: final scenes only
    out_dir: str | None = None

    def largest_message_bits(self) -> int:
        """Size of a message with every section full."""
        return (
            codec.HEADER_BITS_NO_POSE
            + codec.POSE_BITS
            + codec.PRESENCE_BITS
            + codec.MASK_BITS
            + codec.ANCHOR_COUNT_BITS
            + codec.ANCHOR_BITS * self.m_max
            + codec.OBJECT_COUNT_BITS
            + codec.ENTITY_BITS * self.k_max
        )

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}, got {self.mode!r}")
        if not 1 <= self.robots < (1 << codec.CLAIMER_BITS):
            raise ConfigError("robots", f"need 1 <= N < {1 << codec.CLAIMER_BITS}, got {self.robots}")
        if self.step_cap <= 0:
            raise ConfigError("step_cap", "must be positive")
        if self.b_max < self.largest_message_bits():
            raise ConfigError(
                "b_max", f"{self.b_max} bits cannot carry a full message of {self.largest_message_bits()} bits"
            )
        if self.s_raw <= 0:
            raise ConfigError("s_raw", "must be positive")
        if self.raw_period <= 0:
            raise ConfigError("raw_period", "must be positive")
        if not 0 <= self.k_max < (1 << codec.OBJECT_COUNT_BITS):
            raise ConfigError("k_max", "does not fit the object count field")
        if not 0 <= self.m_max < (1 << codec.ANCHOR_COUNT_BITS):
            raise ConfigError("m_max", "does not fit the anchor count field")
        if self.sensing_radius <= 0:
            raise ConfigError("sensing_radius", "must be positive")
        if not 0 < self.fov <= 2 * math.pi:
            raise ConfigError("fov", "must lie in (0, 2*pi]")
        if self.pickup_radius <= 0 or self.delivery_radius <= 0:
            raise ConfigError("pickup_radius", "radii must be positive")
        if self.snapshot_interval < 0:
            raise ConfigError("snapshot_interval", "must be >= 0")


@dataclass(frozen=True)
class TargetMetrics:
    id: int
    discovery_step: int | None
    delivery_step: int | None
    claim_step: int | None = None
    pickup_step: int | None = None

    @property
    def latency(self) -> int | None:
        if self.discovery_step is None or self.delivery_step is None:
            return None
        return self.delivery_step - self.discovery_step


@dataclass
class RunMetrics:
    mode: str
    robots: int
    seed: int
    b_max: int
    total_bits: int
    completion_steps: int
    finished: bool
    total_distance: float
    robot_distance: list[float]
    targets: list[TargetMetrics]
    bits_by_class: dict[str, int]
    messages_granted: int
    mean_queue_bits: float
    max_queue_bits: int
    mean_grant_latency: float
    max_grant_latency: int
    pending_bits_at_end: int
    redundant_pursuit_steps: int
    replans: int
    fallbacks: int
    mean_teammate_age: float
    capacity_violations: int

    @property
    def latencies(self) -> list[int]:
        return [t.latency for t in self.targets if t.latency is not None]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = [
            {
                "id": t.id,
                "discovery_step": t.discovery_step,
                "claim_step": t.claim_step,
                "pickup_step": t.pickup_step,
                "delivery_step": t.delivery_step,
                "latency": t.latency,
            }
            for t in self.targets
        ]
        return {"schema": METRICS_SCHEMA, "version": TRACE_SCHEMA_VERSION, **d}


@dataclass
class _Agent:
    robot: RobotState
    behavior: RobotBehavior
    scene: SharedScene
    cache: TransmitCache
    estimator: TargetEstimator
    noise: np.random.Generator
    explore: np.random.Generator
    local_occupied: np.ndarray
    explored: np.ndarray
    owned: set[int] = field(default_factory=set)
    heard_columns: set[tuple[int, int]] = field(default_factory=set)


def _fmt(x: float) -> str:
    return repr(round(float(x), 6))


class Simulation:
    """One seeded run. ``step()`` advances the fixed phase loop by one step."""

    def __init__(self, config: SimConfig, world: GridWorld | None = None):
        config.validate()
        self.config = config
        if world is None:
            world = load_scenario(config.scenario) if config.scenario else generate_scenario(config.seed, config.scenario_params)
        if config.robots > len(world.spawns):
            raise ConfigError("robots", f"scenario has only {len(world.spawns)} spawn points")
        self.world = world
        nx, ny, _ = world.dims
        self.edge_cfg = EdgeConfig(voxel_size=world.voxel_size, sensing_radius=config.sensing_radius)
        self.scene_cfg = SceneConfig(dims=world.dims, voxel_size=world.voxel_size, edge=self.edge_cfg)
        self.sensor = Sensor(radius=config.sensing_radius, fov=config.fov)
        self.channel = BroadcastChannel(config.b_max, coalesce=config.coalesce)
        self.raw_cfg = RawConfig(config.s_raw)
        self.bounds = world.boundary
        self.agents: dict[int, _Agent] = {}
        for i in range(config.robots):
            rid = i + 1
            spawn = world.spawns[i]
            self.agents[rid] = _Agent(
                robot=RobotState(rid, world.center(spawn)),
                behavior=RobotBehavior(),
                scene=SharedScene(self.scene_cfg, owner=rid),
                cache=TransmitCache(),
                estimator=TargetEstimator(),
                noise=np.random.default_rng(np.random.SeedSequence([config.seed, 1, rid])),
                explore=np.random.default_rng(np.random.SeedSequence([config.seed, 2, rid])),
                local_occupied=np.zeros((nx, ny), dtype=bool),
                explored=np.zeros((nx, ny), dtype=bool),
            )
        self.t = 0
        self.in_flight: list[tuple[int, SemanticMessage | RawPayload]] = []
        self.discovered: dict[int, int] = {}
        self.delivered: dict[int, int] = {}
        self.claimed: dict[int, int] = {}
        self.picked: dict[int, int] = {}
        self.completion_step: int | None = None
        self.redundant_steps = 0
        self.teammate_age_sum = 0
        self.teammate_age_n = 0
        self.behavior_rows: list[tuple] = []
        self.trajectory_rows: list[tuple] = []
        self.timeline_rows: list[tuple] = []
        self.snapshots: dict[str, dict] = {}
        self.status_history: list[dict[int, dict[int, Status]]] = []  # per step, per robot
        self._view_cache: dict[tuple, tuple[EdgeMask, tuple[Anchor, ...], list, list]] = {}

    # -- helpers -----------------------------------------------------------

    @property
    def done(self) -> bool:
        return all(t.status == Status.DELIVERED for t in self.world.targets)

    def _perceive(self, agent: _Agent, obs) -> tuple[EdgeMask, tuple[Anchor, ...]]:
        """Edges and anchors depend only on the static view, so cache by voxel."""
        voxel = self.world.voxel_of(agent.robot.position)
        key = (voxel, agent.robot.heading) if not self.sensor.full_circle else (voxel,)
        hit = self._view_cache.get(key)
        if hit is None:
            mask = extract_edges(obs, agent.robot, self.edge_cfg)
            anchors = extract_anchors(obs, self.scene_cfg.anchor_voxel, m_max=self.config.m_max)
            occ = [(x, y) for x, y, z in obs.visible_occupied if z == 0]
            seen = occ + [(x, y) for x, y, z in obs.visible_free if z == 0]
            hit = (mask, anchors, occ, seen)
            self._view_cache[key] = hit
        mask, anchors, occ, seen = hit
        if occ:
            xs, ys = zip(*occ)
            agent.local_occupied[list(xs), list(ys)] = True
        if seen:
            xs, ys = zip(*seen)
            agent.explored[list(xs), list(ys)] = True
        return mask, anchors

    def _entity_wires(self, agent: _Agent, observed) -> tuple[EntityRecordWire, ...]:
        """Entities this robot speaks for: what it sees now and what it changed."""
        scene = agent.scene
        out = {}
        for e in observed:
            rec = scene.entities.get(e.id)
            status = rec.status if rec else e.status
            claimer = rec.claimer if rec else None
            out[e.id] = EntityRecordWire(e.id, e.label, e.position, e.orientation, e.confidence, status, claimer or 0)
        for eid in sorted(agent.owned):
            if eid in out:
                continue
            rec = scene.entities.get(eid)
            if rec is None:
                continue
            out[eid] = EntityRecordWire(
                rec.id, rec.label, rec.position, rec.orientation, rec.confidence, rec.status, rec.claimer or 0
            )
        return tuple(out[k] for k in sorted(out))

    def _pose(self, robot: RobotState) -> tuple[float, float, float, float]:
        return (*robot.position, robot.heading)  # type: ignore[return-value]

    def _broadcast(self, sender: int, msg: SemanticMessage) -> None:
        claims = claims_in(msg)
        edge_cols = set()
        if msg.edge is not None and msg.header.pose is not None:
            origin = self.edge_cfg.origin_for_position(msg.header.pose[:3])
            edge_cols = mask_columns(EdgeMask(msg.edge, origin, self.edge_cfg.cells_per_voxel, self.edge_cfg.voxel_size))
        for rid, agent in self.agents.items():
            if rid == sender:
                continue
            agent.scene.fuse_message(msg)
            if edge_cols:
                agent.heard_columns |= edge_cols
            if claims:
                resolve_claims(agent.scene, claims)

    # -- the loop ----------------------------------------------------------

    def step(self) -> None:
        t = self.t
        cfg = self.config

        # deliver what was granted last step
        for sender, payload in self.in_flight:
            msg = payload.snapshot if isinstance(payload, RawPayload) else payload
            if msg is not None:
                self._broadcast(sender, msg)
        self.in_flight = []

        # sense and perceive
        percepts = {}
        for rid, agent in self.agents.items():
            obs = self.sensor.sense(self.world, agent.robot, rng=agent.noise, step=t)
            mask, anchors = self._perceive(agent, obs)
            agent.scene.observe_edges(mask)
            for s in obs.visible_targets:
                self.discovered.setdefault(s.id, t)
            seen = agent.estimator.update(detect_objects(obs, agent.scene.status_table()))
            agent.scene.observe_local(seen, t)
            percepts[rid] = (obs, mask, anchors, seen)

        # decide and act on task state
        actions = {}
        for rid, agent in self.agents.items():
            views = teammate_views(agent.scene, rid, t, cfg.teammate_max_age)
            for tm in views.values():
                self.teammate_age_sum += t - tm.step
                self.teammate_age_n += 1
            ctx = StepContext(
                step=t,
                blocked=agent.scene.blocked_grid() | agent.local_occupied,
                explored=agent.explored | agent.scene.covered,
                rng=agent.explore,
                weights=cfg.weights,
                teammates=views,
                pickup_radius=cfg.pickup_radius,
                delivery_radius=cfg.delivery_radius,
                max_speed=math.sqrt(2) * self.world.voxel_size,
            )
            out = execute_step(agent.robot, agent.behavior, agent.scene, self.world, ctx)
            self.world = out.world
            agent.robot, agent.behavior = out.robot, out.behavior
            for ev in out.events:
                agent.scene.apply_local_status(ev.entity_id, ev.status, rid, t)
                agent.owned.add(ev.entity_id)
                if ev.status == Status.DELIVERED:
                    self.delivered[ev.entity_id] = t
                elif ev.status == Status.CARRIED:
                    self.picked[ev.entity_id] = t
                else:
                    self.claimed.setdefault(ev.entity_id, t)
            actions[rid] = out.action

        # submit
        for rid, agent in self.agents.items():
            obs, mask, anchors, seen = percepts[rid]
            wires = self._entity_wires(agent, seen)
            pose = self._pose(agent.robot)
            if cfg.mode == "raw":
                if t % cfg.raw_period == 0:
                    snap = SemanticMessage(Header(rid, t, pose), mask.bits, anchors, wires)
                    self.channel.submit(t, encode_raw(obs, self.raw_cfg, snapshot=snap), rid)
                continue
            if not structural_change(mask, agent.cache, cfg.thresholds, agent.heard_columns):
                anchors = ()
            sem = LocalSemantics(rid, t, pose, mask, anchors, wires)
            decision = evaluate_events(sem, agent.cache, cfg.thresholds, cfg.k_max, agent.heard_columns)
            if decision.gamma:
                msg = decision.message
                if cfg.wire_roundtrip:
                    msg = canonicalize(msg, self.bounds)
                self.channel.submit(t, msg, rid)

        # schedule
        result = self.channel.schedule_step(t)
        for sender, payload in result.granted:
            if isinstance(payload, SemanticMessage):
                agent = self.agents[sender]
                agent.cache = update_cache(agent.cache, payload, t, self.edge_cfg)
        self.in_flight = list(result.granted)

        # move
        for rid, agent in self.agents.items():
            before = agent.robot
            agent.robot = step_motion(self.world, agent.robot, actions[rid])
            if agent.robot.carrying is not None and agent.robot.position != before.position:
                tgt = self.world.target(agent.robot.carrying)
                self.world = self.world.with_target(replace(tgt, position=agent.robot.position))

        self._record(t)
        self.t += 1
        if self.completion_step is None and self.done:
            self.completion_step = self.t

    def _record(self, t: int) -> None:
        pursuing: dict[int, int] = {}
        for rid, agent in self.agents.items():
            b = agent.behavior
            if b.mode in (Mode.APPROACH, Mode.PICKUP, Mode.TRANSPORT) and b.assigned_target is not None:
                pursuing[b.assigned_target] = pursuing.get(b.assigned_target, 0) + 1
            x, y, z = agent.robot.position
            self.behavior_rows.append(
                (
                    t,
                    rid,
                    b.mode.value,
                    _fmt(x),
                    _fmt(y),
                    _fmt(z),
                    "" if b.assigned_target is None else b.assigned_target,
                    max(len(b.current_path) - 1, 0),
                    b.replans,
                )
            )
            self.trajectory_rows.append((t, rid, _fmt(x), _fmt(y), _fmt(z)))
        self.redundant_steps += sum(1 for n in pursuing.values() if n > 1)
        self.status_history.append(self.status_tables())
        delivered = sum(1 for tg in self.world.targets if tg.status == Status.DELIVERED)
        self.timeline_rows.append((t, len(self.discovered), delivered, self.config.mode, self.config.seed))
        iv = self.config.snapshot_interval
        if iv and t % iv == 0:
            self._snapshot(t)

    def _snapshot(self, t: int) -> None:
        for rid, agent in self.agents.items():
            self.snapshots[f"scene_r{rid}_s{t:05d}.json"] = agent.scene.snapshot(t)

    def run(self) -> RunMetrics:
        while self.completion_step is None and self.t < self.config.step_cap:
            self.step()
        if self.t > 0:
            self._snapshot(self.t - 1)
        metrics = self.metrics()
        if self.config.out_dir:
            write_outputs(self, metrics, self.config.out_dir)
        return metrics

    def drain(self, max_steps: int = 100_000) -> int:
        """Deliver everything queued without generating new traffic. Returns steps used."""
        used = 0
        while (self.channel.pending or self.in_flight) and used < max_steps:
            for sender, payload in self.in_flight:
                msg = payload.snapshot if isinstance(payload, RawPayload) else payload
                if msg is not None:
                    self._broadcast(sender, msg)
            result = self.channel.schedule_step(self.t)
            self.in_flight = list(result.granted)
            self.t += 1
            used += 1
        return used

    def status_tables(self) -> dict[int, dict[int, Status]]:
        return {rid: a.scene.status_table() for rid, a in self.agents.items()}

    def metrics(self) -> RunMetrics:
        ch = self.channel
        by_class: dict[str, int] = {}
        for r in ch.log:
            by_class[r.klass] = by_class.get(r.klass, 0) + r.bits
        dist = [self.agents[r].robot.distance_traveled for r in sorted(self.agents)]
        total = 0.0
        for d in dist:
            total += d
        finished = self.completion_step is not None
        targets = [
            TargetMetrics(
                tg.id,
                self.discovered.get(tg.id),
                self.delivered.get(tg.id),
                self.claimed.get(tg.id),
                self.picked.get(tg.id),
            )
            for tg in sorted(self.world.targets, key=lambda x: x.id)
        ]
        qh = ch.queue_bits_history
        lat = ch.latencies
        return RunMetrics(
            mode=self.config.mode,
            robots=self.config.robots,
            seed=self.config.seed,
            b_max=self.config.b_max,
            total_bits=ch.total_granted_bits,
            completion_steps=self.completion_step if finished else self.config.step_cap,
            finished=finished,
            total_distance=round(total, 9),
            robot_distance=[round(d, 9) for d in dist],
            targets=targets,
            bits_by_class=dict(sorted(by_class.items())),
            messages_granted=len(lat),
            mean_queue_bits=round(float(np.mean(qh)), 6) if qh else 0.0,
            max_queue_bits=int(max(qh)) if qh else 0,
            mean_grant_latency=round(float(np.mean(lat)), 6) if lat else 0.0,
            max_grant_latency=int(max(lat)) if lat else 0,
            pending_bits_at_end=ch.pending_bits,
            redundant_pursuit_steps=self.redundant_steps,
            replans=sum(a.behavior.replans for a in self.agents.values()),
            fallbacks=sum(a.behavior.fallbacks for a in self.agents.values()),
            mean_teammate_age=round(self.teammate_age_sum / self.teammate_age_n, 6) if self.teammate_age_n else 0.0,
            capacity_violations=len(ch.audit()),
        )


# ---------------------------------------------------------------------------
# Output


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


BEHAVIOR_COLUMNS = ("step", "robot", "mode", "x", "y", "z", "assigned_target", "path_length", "replans")
TIMELINE_COLUMNS = ("step", "discovered_cum", "delivered_cum", "mode", "seed")
TRAJECTORY_COLUMNS = ("step", "robot", "x", "y", "z")


def write_files_atomic(files: dict[str, str], out_dir: str | os.PathLike) -> None:
    """Write every file to a staging directory first, then move them in place.

    A failure while rendering or writing leaves ``out_dir`` untouched.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out.parent))
    try:
        for name, text in files.items():
            path = stage / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        out.mkdir(parents=True, exist_ok=True)
        for name in files:
            dest = out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, dest)
    except OSError as exc:
        raise OSError(f"could not write results to {out}: {exc}") from exc
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run_files(sim: Simulation, metrics: RunMetrics) -> dict[str, str]:
    files = {
        "metrics.json": json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n",
        "channel.csv": _csv_text(
            ("step", "sender", "class", "bits", "enqueue_step", "grant_step"),
            (
                (r.step, r.sender, r.klass, r.bits, r.enqueue_step, "" if r.grant_step is None else r.grant_step)
                for r in sim.channel.log
            ),
        ),
        "behavior.csv": _csv_text(BEHAVIOR_COLUMNS, sim.behavior_rows),
        "timeline.csv": _csv_text(TIMELINE_COLUMNS, sim.timeline_rows),
        "trajectory.csv": _csv_text(TRAJECTORY_COLUMNS, sim.trajectory_rows),
    }
    for name, snap in sorted(sim.snapshots.items()):
        files[f"scenes/{name}"] = json.dumps(snap, sort_keys=True) + "\n"
    return files


def write_outputs(sim: Simulation, metrics: RunMetrics, out_dir: str | os.PathLike) -> None:
    write_files_atomic(run_files(sim, metrics), out_dir)


def run(config: SimConfig, world: GridWorld | None = None) -> RunMetrics:
    return Simulation(config, world).run()


# ---------------------------------------------------------------------------
# Comparisons


def _ratio(a: float, b: float) -> float | None:
    return None if b == 0 else a / b


@dataclass
class Comparison:
    raw: RunMetrics
    semantic: RunMetrics

    @property
    def bits_ratio(self) -> float | None:
        return _ratio(self.raw.total_bits, self.semantic.total_bits)

    @property
    def steps_ratio(self) -> float | None:
        return _ratio(self.raw.completion_steps, self.semantic.completion_steps)

    @property
    def distance_ratio(self) -> float | None:
        return _ratio(self.raw.total_distance, self.semantic.total_distance)

    def to_dict(self) -> dict:
        return {
            "schema": "semcomm.comparison",
            "version": TRACE_SCHEMA_VERSION,
            "raw": self.raw.to_dict(),
            "semantic": self.semantic.to_dict(),
            "bits_ratio": self.bits_ratio,
            "steps_ratio": self.steps_ratio,
            "distance_ratio": self.distance_ratio,
        }


def compare_modes(config: SimConfig) -> Comparison:
    """Run both modes on the same world and seed, everything else unchanged."""
    out = {}
    for mode in ("raw", "semantic"):
        sub = config.out_dir and str(Path(config.out_dir) / mode)
        out[mode] = run(replace(config, mode=mode, out_dir=sub))
    return Comparison(out["raw"], out["semantic"])


def sweep(
    base: SimConfig, robots: Sequence[int] = (4, 6), seeds: Sequence[int] = range(10)
) -> list[RunMetrics]:
    results = []
    for n in robots:
        for seed in seeds:
            for mode in ("raw", "semantic"):
                sub = base.out_dir and str(Path(base.out_dir) / f"{mode}_n{n}_s{seed}")
                results.append(run(replace(base, mode=mode, robots=n, seed=seed, out_dir=sub)))
    return results


def summarize(results: Sequence[RunMetrics]) -> list[dict]:
    """Median metrics per (robots, mode)."""
    groups: dict[tuple[int, str], list[RunMetrics]] = {}
    for m in results:
        groups.setdefault((m.robots, m.mode), []).append(m)
    rows = []
    for (n, mode), ms in sorted(groups.items()):
        lats = [x for m in ms for x in m.latencies]
        rows.append(
            {
                "robots": n,
                "mode": mode,
                "runs": len(ms),
                "finished": sum(m.finished for m in ms),
                "median_bits": statistics.median(m.total_bits for m in ms),
                "median_steps": statistics.median(m.completion_steps for m in ms),
                "median_distance": statistics.median(m.total_distance for m in ms),
                "median_latency": statistics.median(lats) if lats else None,
            }
        )
    return rows


RUN_COLUMNS = (
    "mode",
    "robots",
    "seed",
    "b_max",
    "total_bits",
    "completion_steps",
    "finished",
    "total_distance",
    "median_latency",
    "redundant_pursuit_steps",
)


def emit_plots_data(results: Sequence[RunMetrics], out_dir: str | os.PathLike) -> dict[str, str]:
    """Tidy CSVs for the comparison plots: per-run metrics and per-target latencies."""
    runs = []
    lat_rows = []
    for m in results:
        lats = m.latencies
        runs.append(
            (
                m.mode,
                m.robots,
                m.seed,
                m.b_max,
                m.total_bits,
                m.completion_steps,
                int(m.finished),
                _fmt(m.total_distance),
                "" if not lats else statistics.median(lats),
                m.redundant_pursuit_steps,
            )
        )
        for t in m.targets:
            lat_rows.append(
                (
                    m.mode,
                    m.robots,
                    m.seed,
                    t.id,
                    "" if t.discovery_step is None else t.discovery_step,
                    "" if t.delivery_step is None else t.delivery_step,
                    "" if t.latency is None else t.latency,
                )
            )
    files = {
        "runs.csv": _csv_text(RUN_COLUMNS, runs),
        "latency.csv": _csv_text(
            ("mode", "robots", "seed", "target", "discovery_step", "delivery_step", "latency"), lat_rows
        ),
    }
    write_files_atomic(files, out_dir)
    return files
