"""Decentralised task allocation, path planning and transport execution."""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codec import SemanticMessage
from .scene import EntityRecord, SharedScene
from .world import (
    GridWorld,
    MotionAction,
    PickupConflictError,
    PickupRangeError,
    RobotState,
    Status,
    apply_claim,
    apply_delivery,
    apply_pickup,
    ground_neighbors,
)

log = logging.getLogger(__name__)

Cell = tuple[int, int]


@dataclass(frozen=True)
class ClaimMessage:
    entity_id: int
    claimer_id: int
    timestamp: int

    def __post_init__(self):
        if self.claimer_id < 1:
            raise ValueError("claimer ids start at 1")


@dataclass(frozen=True)
class AllocationWeights:
    alpha: float = 1.0
    beta: float = 1e6

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("need alpha > 0 and beta >= 0")


def compute_cost(robot: RobotState, entity: EntityRecord, w: AllocationWeights) -> float:
    return w.alpha * math.dist(entity.position, robot.position) + (w.beta if robot.busy else 0.0)


@dataclass(frozen=True)
class TeammateView:
    position: tuple[float, ...]
    busy: bool
    step: int


def teammate_views(
    scene: SharedScene, self_id: int, now: int | None = None, max_age: int | None = None
) -> dict[int, TeammateView]:
    """Teammates' last reported positions, and whether they hold a live claim."""
    busy = {
        r.claimer
        for r in scene.entities.values()
        if r.claimer is not None and Status.CLAIMED <= r.status < Status.DELIVERED
    }
    out = {}
    for rid, (pose, step) in sorted(scene.teammates.items()):
        if rid == self_id:
            continue
        if now is not None and max_age is not None and now - step > max_age:
            continue
        out[rid] = TeammateView(tuple(pose[:3]), rid in busy, step)
    return out


def decide_claim(
    robot: RobotState,
    scene: SharedScene,
    w: AllocationWeights,
    teammates: Mapping[int, TeammateView] | None = None,
    step: int = 0,
    max_speed: float = 0.0,
) -> ClaimMessage | None:
    """Claim the cheapest unassigned entity if this robot is the local winner.

    Ties between entities go to the lower entity id, ties between robots to
    the lower robot id. A teammate pose reported ``a`` steps ago is taken to
    be up to ``a * max_speed`` metres further away, so stale reports only
    win when they would win regardless of how the teammate moved since.
    """
    open_ = [r for r in scene.entities.values() if r.status == Status.UNASSIGNED]
    if not open_:
        return None
    best = min(open_, key=lambda r: (compute_cost(robot, r, w), r.id))
    mine = compute_cost(robot, best, w)
    for rid, tm in (teammates or {}).items():
        drift = max(step - tm.step, 0) * max_speed
        other = w.alpha * (math.dist(best.position, tm.position) + drift) + (w.beta if tm.busy else 0.0)
        if (other, rid) < (mine, robot.id):
            return None
    return ClaimMessage(best.id, robot.id, step)


def claims_in(msg: SemanticMessage) -> list[ClaimMessage]:
    return [
        ClaimMessage(e.id, e.claimer, msg.header.timestamp)
        for e in msg.objects or ()
        if e.status == Status.CLAIMED and e.claimer
    ]


def resolve_claims(scene: SharedScene, claims: Iterable[ClaimMessage]) -> SharedScene:
    """Earliest claim wins; equal timestamps go to the lower claimer id."""
    for c in claims:
        rec = scene.entities.get(c.entity_id)
        if rec is None or rec.status > Status.CLAIMED:
            continue
        if rec.status < Status.CLAIMED or rec.claimer is None:
            scene.entities[c.entity_id] = replace(
                rec, status=Status.CLAIMED, claimer=c.claimer_id, claim_step=c.timestamp
            )
            continue
        current = (rec.claim_step if rec.claim_step is not None else c.timestamp, rec.claimer)
        if (c.timestamp, c.claimer_id) < current:
            scene.entities[c.entity_id] = replace(rec, claimer=c.claimer_id, claim_step=c.timestamp)
    return scene


# ---------------------------------------------------------------------------
# Planning


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def plan_path(blocked: np.ndarray, start: Cell, goal: Cell) -> list[Cell] | None:
    """A* over the 8-connected ground grid, one step per move.

    Among paths with the fewest steps the one with the fewest diagonal moves
    is returned, which is also the shortest in metres. The Chebyshev
    heuristic is exact on an empty grid, so it is admissible and consistent.
    Equal priorities expand the lexicographically lower cell first.
    Returns the cell sequence from ``start`` to ``goal`` inclusive, or None.
    """
    nx, ny = blocked.shape
    if not (0 <= start[0] < nx and 0 <= start[1] < ny):
        raise ValueError(f"start {start} outside the grid")
    if not (0 <= goal[0] < nx and 0 <= goal[1] < ny) or blocked[goal]:
        return None
    if start == goal:
        return [start]
    best: dict[Cell, tuple[int, int]] = {start: (0, 0)}
    parent: dict[Cell, Cell] = {}
    heap = [(chebyshev(start, goal), 0, start[0], start[1])]
    closed = set()
    while heap:
        _, diag, x, y = heapq.heappop(heap)
        cur = (x, y)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while path[-1] != start:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add(cur)
        steps, diags = best[cur]
        for n in ground_neighbors(blocked, x, y):
            if n in closed:
                continue
            cost = (steps + 1, diags + (1 if n[0] != x and n[1] != y else 0))
            if n not in best or cost < best[n]:
                best[n] = cost
                parent[n] = cur
                heapq.heappush(heap, (cost[0] + chebyshev(n, goal), cost[1], n[0], n[1]))
    return None


def bfs_distances(blocked: np.ndarray, start: Cell) -> dict[Cell, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        d = dist[(x, y)] + 1
        for n in ground_neighbors(blocked, x, y):
            if n not in dist:
                dist[n] = d
                queue.append(n)
    return dist


def frontier_cells(explored: np.ndarray, blocked: np.ndarray) -> np.ndarray:
    """Explored, unblocked cells with at least one unexplored 4-neighbour."""
    unexplored = ~explored
    touch = np.zeros_like(explored)
    touch[1:, :] |= unexplored[:-1, :]
    touch[:-1, :] |= unexplored[1:, :]
    touch[:, 1:] |= unexplored[:, :-1]
    touch[:, :-1] |= unexplored[:, 1:]
    return explored & ~blocked & touch


@dataclass(frozen=True)
class FrontierChoice:
    goal: Cell
    fallback: bool


def select_frontier(
    explored: np.ndarray,
    blocked: np.ndarray,
    start: Cell,
    rng: np.random.Generator,
    teammate_positions: Sequence[Sequence[float]] = (),
    teammate_goals: Sequence[Cell] = (),
    voxel_size: float = 1.0,
    goal_exclusion: int = 2,
) -> FrontierChoice:
    """Nearest reachable frontier by path length, leaving teammates' share alone.

    Frontiers within ``goal_exclusion`` cells of a teammate's goal are
    skipped, as are frontiers strictly closer to some teammate than to this
    robot. If that leaves nothing, all frontiers are eligible again. With no
    frontier at all a seeded random reachable cell is returned and flagged.
    """
    dist = bfs_distances(blocked, start)
    front = frontier_cells(explored, blocked)
    cands = [(d, c) for c, d in dist.items() if front[c] and c != start]
    if cands:
        mates = [(p[0] / voxel_size - 0.5, p[1] / voxel_size - 0.5) for p in teammate_positions]

        def excluded(c: Cell) -> bool:
            if any(chebyshev(c, g) <= goal_exclusion for g in teammate_goals):
                return True
            mine = math.dist(c, start)
            return any(math.dist(c, m) < mine for m in mates)

        kept = [dc for dc in cands if not excluded(dc[1])] or cands
        d, c = min(kept)
        return FrontierChoice(c, False)
    reachable = sorted(c for c in dist if c != start)
    if not reachable:
        return FrontierChoice(start, True)
    log.debug("no frontier left from %s; random fallback", start)
    return FrontierChoice(reachable[int(rng.integers(len(reachable)))], True)


# ---------------------------------------------------------------------------
# Execution


class Mode(str, Enum):
    EXPLORE = "explore"
    APPROACH = "approach"
    PICKUP = "pickup"
    TRANSPORT = "transport"
    DELIVER = "deliver"


@dataclass(frozen=True)
class RobotBehavior:
    mode: Mode = Mode.EXPLORE
    assigned_target: int | None = None
    current_path: tuple[Cell, ...] = ()
    frontier_goal: Cell | None = None
    replans: int = 0
    fallbacks: int = 0
    pickup_failures: int = 0

    def __post_init__(self):
        if (self.assigned_target is not None) != (self.mode != Mode.EXPLORE):
            raise ValueError(f"mode {self.mode} inconsistent with target {self.assigned_target}")


@dataclass(frozen=True)
class StatusEvent:
    entity_id: int
    status: Status


@dataclass
class StepContext:
    step: int
    blocked: np.ndarray  # planning grid, teammates excluded
    explored: np.ndarray
    rng: np.random.Generator
    weights: AllocationWeights = field(default_factory=AllocationWeights)
    teammates: Mapping[int, TeammateView] = field(default_factory=dict)
    teammate_goals: Sequence[Cell] = ()
    teammate_radius: int = 2
    obstacle_max_age: int = 1
    pickup_radius: float = 1.5
    delivery_radius: float = 1.5
    max_pickup_failures: int = 2
    max_speed: float = 0.0  # metres per step, bounds teammate drift since a report


@dataclass
class StepOutcome:
    action: MotionAction
    behavior: RobotBehavior
    events: list[StatusEvent]
    world: GridWorld
    robot: RobotState
    replanned: bool = False


def _cell(world: GridWorld, p: Sequence[float]) -> Cell:
    v = world.voxel_of(p)
    return v[0], v[1]


def _free_goal(blocked: np.ndarray, cell: Cell) -> Cell:
    """``cell`` itself if free, else its nearest free 8-neighbour."""
    if not blocked[cell]:
        return cell
    nx, ny = blocked.shape
    best = None
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            c = (cell[0] + dx, cell[1] + dy)
            if 0 <= c[0] < nx and 0 <= c[1] < ny and not blocked[c]:
                key = (abs(dx) + abs(dy), c)
                if best is None or key < best[0]:
                    best = (key, c)
    return cell if best is None else best[1]


def approach_cells(blocked: np.ndarray, world: GridWorld, estimate: Sequence[float]) -> list[Cell]:
    """Free cells around an entity estimate, closest first.

    The true target lies in the estimate's 3x3 neighbourhood, so trying
    these in order always ends within pickup range.
    """
    cx, cy = _cell(world, estimate)
    nx, ny = blocked.shape
    out = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            c = (cx + dx, cy + dy)
            if 0 <= c[0] < nx and 0 <= c[1] < ny and not blocked[c]:
                ctr = world.center((c[0], c[1], 0))
                out.append((math.dist(ctr[:2], tuple(estimate)[:2]), c))
    return [c for _, c in sorted(out)]


def _with_teammates(ctx: StepContext, here: Cell, world: GridWorld) -> np.ndarray:
    grid = ctx.blocked
    near = []
    for tm in ctx.teammates.values():
        if ctx.step - tm.step > ctx.obstacle_max_age:
            continue  # an old pose says little about where the teammate is now
        c = _cell(world, tm.position)
        if c != here and chebyshev(c, here) <= ctx.teammate_radius:
            near.append(c)
    if not near:
        return grid
    grid = grid.copy()
    for c in near:
        grid[c] = True
    return grid


def _move_toward(
    world: GridWorld, robot: RobotState, behavior: RobotBehavior, goal: Cell, ctx: StepContext
) -> tuple[MotionAction, RobotBehavior, bool]:
    here = _cell(world, robot.position)
    if here == goal:
        return MotionAction.wait(), replace(behavior, current_path=()), False
    path = list(behavior.current_path)
    if path and path[0] != here:
        path = path[1:] if len(path) > 1 and path[1] == here else []
    grid = _with_teammates(ctx, here, world)
    replanned = False
    needs_plan = (
        not path
        or path[-1] != goal
        or len(path) < 2
        or path[1] not in set(ground_neighbors(grid, *here))
        or any(grid[c] for c in path[1:])
    )
    if needs_plan:
        replanned = bool(path)
        path = plan_path(grid, here, goal)
        if path is None and grid is not ctx.blocked:
            path = plan_path(ctx.blocked, here, goal)
        if path is None:
            return MotionAction.wait(), replace(behavior, current_path=()), replanned
        behavior = replace(behavior, replans=behavior.replans + (1 if replanned else 0))
    nxt = path[1]
    action = MotionAction.move(nxt[0] - here[0], nxt[1] - here[1])
    return action, replace(behavior, current_path=tuple(path)), replanned


def _explore(
    world: GridWorld, robot: RobotState, behavior: RobotBehavior, ctx: StepContext
) -> tuple[MotionAction, RobotBehavior, bool]:
    here = _cell(world, robot.position)
    goal = behavior.frontier_goal
    front = frontier_cells(ctx.explored, ctx.blocked)
    stale = goal is None or goal == here or ctx.blocked[goal] or not (front[goal] or behavior.fallbacks)
    if goal is not None and behavior.fallbacks and goal != here and not ctx.blocked[goal] and front.any():
        stale = True
    if stale:
        choice = select_frontier(
            ctx.explored,
            ctx.blocked,
            here,
            ctx.rng,
            teammate_positions=[tm.position for tm in ctx.teammates.values()],
            teammate_goals=ctx.teammate_goals,
            voxel_size=world.voxel_size,
        )
        behavior = replace(
            behavior,
            frontier_goal=choice.goal,
            current_path=(),
            fallbacks=behavior.fallbacks + 1 if choice.fallback else 0,
        )
        goal = choice.goal
    action, behavior, replanned = _move_toward(world, robot, behavior, goal, ctx)
    if action.kind == "wait" and goal != here:
        behavior = replace(behavior, frontier_goal=None)
    return action, behavior, replanned


def _explore_mode() -> RobotBehavior:
    return RobotBehavior(Mode.EXPLORE)


def execute_step(
    robot: RobotState, behavior: RobotBehavior, scene: SharedScene, world: GridWorld, ctx: StepContext
) -> StepOutcome:
    """Advance one robot's transport state machine by one step.

    Status changes are returned as events for the caller to route through
    the robot's own scene and the comms layer.
    """
    events: list[StatusEvent] = []
    here = _cell(world, robot.position)

    if behavior.mode == Mode.DELIVER:
        behavior = _explore_mode()
    elif behavior.mode == Mode.PICKUP:
        behavior = replace(behavior, mode=Mode.TRANSPORT, current_path=())

    if behavior.mode == Mode.APPROACH:
        rec = scene.entities.get(behavior.assigned_target)  # type: ignore[arg-type]
        if rec is None or rec.status != Status.CLAIMED or rec.claimer != robot.id:
            log.debug("robot %d drops target %s", robot.id, behavior.assigned_target)
            behavior = _explore_mode()
            robot = replace(robot, busy=False)

    if behavior.mode == Mode.TRANSPORT:
        depot = world.center(world.depot)
        if math.dist(robot.position[:2], depot[:2]) <= ctx.delivery_radius:
            tid = robot.carrying
            world, robot = apply_delivery(world, robot, ctx.delivery_radius)
            events.append(StatusEvent(tid, Status.DELIVERED))  # type: ignore[arg-type]
            behavior = RobotBehavior(Mode.DELIVER, tid, (), None, behavior.replans)
            return StepOutcome(MotionAction.wait(), behavior, events, world, robot)
        goal = _free_goal(ctx.blocked, (world.depot[0], world.depot[1]))
        action, behavior, rp = _move_toward(world, robot, behavior, goal, ctx)
        return StepOutcome(action, behavior, events, world, robot, rp)

    if behavior.mode == Mode.EXPLORE:
        claim = decide_claim(robot, scene, ctx.weights, ctx.teammates, ctx.step, ctx.max_speed)
        if claim is not None:
            world = apply_claim(world, robot.id, claim.entity_id)
            events.append(StatusEvent(claim.entity_id, Status.CLAIMED))
            scene.apply_local_status(claim.entity_id, Status.CLAIMED, robot.id, ctx.step)
            behavior = RobotBehavior(Mode.APPROACH, claim.entity_id, (), None, behavior.replans)
            robot = replace(robot, busy=True)

    if behavior.mode == Mode.APPROACH:
        rec = scene.entities[behavior.assigned_target]  # type: ignore[index]
        give_up = StepOutcome(MotionAction.wait(), _explore_mode(), events, world, replace(robot, busy=False))
        if math.dist(robot.position, rec.position) <= ctx.pickup_radius:
            try:
                world, robot = apply_pickup(world, robot, rec.id, ctx.pickup_radius)
            except PickupConflictError:
                log.debug("robot %d: target %d already taken", robot.id, rec.id)
                return give_up
            except PickupRangeError:
                behavior = replace(behavior, pickup_failures=behavior.pickup_failures + 1)
            else:
                events.append(StatusEvent(rec.id, Status.CARRIED))
                behavior = RobotBehavior(Mode.PICKUP, rec.id, (), None, behavior.replans)
                return StepOutcome(MotionAction.wait(), behavior, events, world, robot)
        cands = approach_cells(ctx.blocked, world, rec.position)
        if not cands or behavior.pickup_failures >= ctx.max_pickup_failures * len(cands):
            log.debug("robot %d gives up on target %d", robot.id, rec.id)
            return give_up
        goal = cands[behavior.pickup_failures % len(cands)]
        if goal == here and math.dist(robot.position, rec.position) > ctx.pickup_radius:
            # standing on the chosen cell without reaching the estimate: try the next one
            behavior = replace(behavior, pickup_failures=behavior.pickup_failures + 1)
            goal = cands[behavior.pickup_failures % len(cands)]
        action, behavior, rp = _move_toward(world, robot, behavior, goal, ctx)
        if action.kind == "wait" and goal != here:
            behavior = replace(behavior, pickup_failures=behavior.pickup_failures + 1)
        return StepOutcome(action, behavior, events, world, robot, rp)

    action, behavior, rp = _explore(world, robot, behavior, ctx)
    return StepOutcome(action, behavior, events, world, robot, rp)
