import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from semcomm.codec import EntityRecordWire, Header, SemanticMessage
from semcomm.coordination import (
    AllocationWeights,
    ClaimMessage,
    Mode,
    RobotBehavior,
    StepContext,
    TeammateView,
    approach_cells,
    claims_in,
    compute_cost,
    decide_claim,
    execute_step,
    frontier_cells,
    plan_path,
    resolve_claims,
    select_frontier,
    teammate_views,
)
from semcomm.scene import EntityRecord, SharedScene
from semcomm.world import GridWorld, RobotState, Status, TargetTruth, ground_neighbors, step_motion

from oracles import bfs_length

FIXTURES = Path(__file__).parent / "fixtures"


def entity(eid, pos, status=Status.UNASSIGNED, claimer=None, claim_step=None):
    return EntityRecord(eid, "box", pos, 0.0, 0.9, status, claimer, claim_step)


def scene_with(*records):
    s = SharedScene(owner=1)
    for r in records:
        s.entities[r.id] = r
    return s


# -- cost and claims ----------------------------------------------------------------------


def test_cost_examples():
    e = entity(1, (3.0, 4.0, 0.0))
    w = AllocationWeights(alpha=1.0, beta=0.0)
    assert compute_cost(RobotState(1, (0.0, 0.0, 0.0)), e, w) == 5.0
    busy = RobotState(1, (0.0, 0.0, 0.0), busy=True)
    assert compute_cost(busy, e, AllocationWeights(1.0, 100.0)) == 105.0


@given(st.floats(0.01, 100), st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=4))
def test_scaling_alpha_keeps_the_winner(c, robots):
    e = entity(1, (10.5, 10.5, 0.5))
    winners = []
    for w in (AllocationWeights(1.0, 0.0), AllocationWeights(c, 0.0)):
        costs = [(round(compute_cost(RobotState(i + 1, (x + 0.5, y + 0.5, 0.5)), e, w) / w.alpha, 9), i) for i, (x, y) in enumerate(robots)]
        winners.append(min(costs)[1])
    assert winners[0] == winners[1]


def test_single_robot_claims():
    s = scene_with(entity(3, (5.0, 5.0, 0.5)))
    claim = decide_claim(RobotState(1, (1.0, 1.0, 0.5)), s, AllocationWeights())
    assert claim == ClaimMessage(3, 1, 0)


def test_only_nearer_robot_claims():
    s = scene_with(entity(3, (0.5, 0.5, 0.5)))
    near = RobotState(1, (2.5, 0.5, 0.5))
    far = RobotState(2, (5.5, 0.5, 0.5))
    views_for_near = {2: TeammateView(far.position, False, 0)}
    views_for_far = {1: TeammateView(near.position, False, 0)}
    assert decide_claim(near, s, AllocationWeights(), views_for_near) is not None
    assert decide_claim(far, s, AllocationWeights(), views_for_far) is None


def test_cost_tie_goes_to_lower_robot_id():
    s = scene_with(entity(3, (5.0, 5.0, 0.5)))
    r1, r3 = RobotState(1, (2.0, 5.0, 0.5)), RobotState(3, (8.0, 5.0, 0.5))
    assert decide_claim(r1, s, AllocationWeights(), {3: TeammateView(r3.position, False, 0)}) is not None
    assert decide_claim(r3, s, AllocationWeights(), {1: TeammateView(r1.position, False, 0)}) is None


def test_stale_teammate_pose_is_discounted():
    s = scene_with(entity(3, (5.0, 5.0, 0.5)))
    me = RobotState(2, (8.0, 5.0, 0.5))
    old = {1: TeammateView((3.0, 5.0, 0.5), False, 0)}
    assert decide_claim(me, s, AllocationWeights(), old, step=0, max_speed=math.sqrt(2)) is None
    assert decide_claim(me, s, AllocationWeights(), old, step=5, max_speed=math.sqrt(2)) is not None


def test_busy_teammate_does_not_block():
    s = scene_with(entity(3, (5.0, 5.0, 0.5)))
    me = RobotState(2, (9.0, 5.0, 0.5))
    assert decide_claim(me, s, AllocationWeights(), {1: TeammateView((5.0, 5.0, 0.5), True, 0)}) is not None


def test_no_open_entities_means_no_claim():
    s = scene_with(entity(3, (5.0, 5.0, 0.5), Status.CARRIED, claimer=2))
    assert decide_claim(RobotState(1, (1.0, 1.0, 0.5)), s, AllocationWeights()) is None


def test_resolve_claims_tie_and_lattice():
    s = scene_with(entity(1, (1.0, 1.0, 0.5)), entity(2, (9.0, 9.0, 0.5), Status.CARRIED, claimer=3))
    resolve_claims(s, [ClaimMessage(1, 4, 7), ClaimMessage(1, 2, 7), ClaimMessage(2, 1, 0)])
    assert s.entities[1].status == Status.CLAIMED and s.entities[1].claimer == 2
    assert s.entities[2].status == Status.CARRIED and s.entities[2].claimer == 3
    # an earlier claim overrides a later one
    resolve_claims(s, [ClaimMessage(1, 5, 6)])
    assert s.entities[1].claimer == 5


def test_losing_claimer_reverts_to_explore():
    w = GridWorld((10, 10, 1), 1.0, np.zeros((10, 10, 1), dtype=bool), (0, 0, 0), (TargetTruth(1, "box", (8.5, 8.5, 0.5), 0.0),))
    s = scene_with(entity(1, (8.5, 8.5, 0.5), Status.CLAIMED, claimer=2, claim_step=3))
    beh = RobotBehavior(Mode.APPROACH, 1)
    ctx = StepContext(4, np.zeros((10, 10), dtype=bool), np.ones((10, 10), dtype=bool), np.random.default_rng(0))
    out = execute_step(RobotState(4, (1.5, 1.5, 0.5), busy=True), beh, s, w, ctx)
    assert out.behavior.mode == Mode.EXPLORE and not out.robot.busy


def test_claims_travel_in_entity_records():
    msg = SemanticMessage(
        Header(2, 9),
        objects=(
            EntityRecordWire(1, "box", (1.0, 1.0, 0.5), 0.0, 1.0, Status.CLAIMED, claimer=2),
            EntityRecordWire(2, "box", (3.0, 1.0, 0.5), 0.0, 1.0, Status.UNASSIGNED),
        ),
    )
    assert claims_in(msg) == [ClaimMessage(1, 2, 9)]
    with pytest.raises(ValueError):
        ClaimMessage(1, 0, 0)


def test_teammate_views_age_filter():
    s = SharedScene(owner=1)
    s.teammates = {1: ((0.5, 0.5, 0.5, 0.0), 9), 2: ((3.5, 3.5, 0.5, 0.0), 2), 3: ((5.5, 5.5, 0.5, 0.0), 8)}
    s.entities[4] = entity(4, (6.0, 6.0, 0.5), Status.CLAIMED, claimer=3)
    views = teammate_views(s, 1, now=10, max_age=5)
    assert set(views) == {3} and views[3].busy


# -- planning ---------------------------------------------------------------------------------


def test_straight_path_on_empty_grid():
    path = plan_path(np.zeros((10, 10), dtype=bool), (0, 0), (5, 0))
    assert path == [(i, 0) for i in range(6)]


def test_path_through_single_gap():
    blocked = np.zeros((10, 10), dtype=bool)
    blocked[5, :] = True
    blocked[5, 7] = False
    path = plan_path(blocked, (2, 2), (8, 2))
    assert (5, 7) in path
    assert len(path) - 1 == bfs_length(blocked, (2, 2), (8, 2))
    for a, b in zip(path, path[1:]):
        assert b in set(ground_neighbors(blocked, *a))


def test_goal_inside_edge_region_is_unreachable():
    blocked = np.zeros((10, 10), dtype=bool)
    blocked[4:7, 4:7] = True
    assert plan_path(blocked, (0, 0), (5, 5)) is None
    with pytest.raises(ValueError):
        plan_path(blocked, (-1, 0), (2, 2))


def test_equal_length_paths_prefer_fewer_diagonals():
    path = plan_path(np.zeros((10, 10), dtype=bool), (0, 0), (4, 1))
    diagonals = sum(1 for a, b in zip(path, path[1:]) if a[0] != b[0] and a[1] != b[1])
    assert len(path) - 1 == 4 and diagonals == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.45))
def test_astar_length_matches_bfs(seed, density):
    rng = np.random.default_rng(seed)
    blocked = rng.random((12, 12)) < density
    start = tuple(int(v) for v in rng.integers(0, 12, 2))
    goal = tuple(int(v) for v in rng.integers(0, 12, 2))
    blocked[start] = False
    path = plan_path(blocked, start, goal)
    want = bfs_length(blocked, start, goal)
    if want is None:
        assert path is None
    else:
        assert path is not None and len(path) - 1 == want
        assert not any(blocked[c] for c in path)


# -- frontiers -----------------------------------------------------------------------------------


def test_doorway_frontier():
    # explored left room, wall at x=5 with a door at y=4, unexplored right room
    blocked = np.zeros((10, 10), dtype=bool)
    blocked[5, :] = True
    blocked[5, 4] = False
    explored = np.zeros((10, 10), dtype=bool)
    explored[:6, :] = True
    front = frontier_cells(explored, blocked)
    assert {tuple(c) for c in np.argwhere(front)} == {(5, 4)}
    choice = select_frontier(explored, blocked, (1, 1), np.random.default_rng(0))
    assert choice == (choice.__class__((5, 4), False))


def test_fully_explored_falls_back_to_seeded_random_cell():
    blocked = np.zeros((6, 6), dtype=bool)
    explored = np.ones((6, 6), dtype=bool)
    a = select_frontier(explored, blocked, (0, 0), np.random.default_rng(4))
    b = select_frontier(explored, blocked, (0, 0), np.random.default_rng(4))
    assert a == b and a.fallback and a.goal != (0, 0)


def test_two_robots_pick_distinct_frontiers():
    blocked = np.zeros((12, 12), dtype=bool)
    explored = np.zeros((12, 12), dtype=bool)
    explored[:, 3:9] = True  # frontiers along y=3 and y=8
    a = select_frontier(explored, blocked, (6, 5), np.random.default_rng(0))
    b = select_frontier(explored, blocked, (6, 6), np.random.default_rng(0), teammate_goals=[a.goal])
    assert a.goal != b.goal
    assert max(abs(a.goal[0] - b.goal[0]), abs(a.goal[1] - b.goal[1])) > 2


def test_approach_cells_sorted_by_distance():
    w = GridWorld((10, 10, 1), 1.0, np.zeros((10, 10, 1), dtype=bool), (0, 0, 0), ())
    cells = approach_cells(np.zeros((10, 10), dtype=bool), w, (4.5, 0.5, 0.5))
    assert cells[0] == (4, 0) and len(cells) == 6


# -- execution ------------------------------------------------------------------------------------


def test_hand_traced_single_robot_episode():
    case = json.loads((FIXTURES / "single_robot_trace.json").read_text())
    dims = tuple(case["world"]["dims"])
    target = tuple(case["world"]["target"])
    w = GridWorld(dims, 1.0, np.zeros(dims, dtype=bool), tuple(case["world"]["depot"]), (TargetTruth(1, "box", target, 0.0),))
    robot = RobotState(1, w.center((*case["world"]["robot"], 0)))
    scene = scene_with(entity(1, target))
    beh = RobotBehavior()
    blocked = np.zeros(dims[:2], dtype=bool)
    explored = np.ones(dims[:2], dtype=bool)
    rng = np.random.default_rng(0)
    for row in case["steps"]:
        out = execute_step(robot, beh, scene, w, StepContext(row["step"], blocked, explored, rng))
        for ev in out.events:
            scene.apply_local_status(ev.entity_id, ev.status, robot.id, row["step"])
        assert out.behavior.mode.value == row["mode"], row
        assert [e.status.name for e in out.events] == row["events"], row
        if row["action"] is None:
            assert out.action.kind == "wait" or row["mode"] == "explore"
        else:
            assert out.action.delta[:2] == tuple(row["action"]), row
        w, beh = out.world, out.behavior
        robot = step_motion(w, out.robot, out.action)
        if row["cell_after"] is not None:
            assert w.voxel_of(robot.position)[:2] == tuple(row["cell_after"]), row
    assert w.target(1).status == Status.DELIVERED
    assert robot.carrying is None and not robot.busy


def test_replan_when_path_newly_blocked():
    w = GridWorld((10, 10, 1), 1.0, np.zeros((10, 10, 1), dtype=bool), (0, 0, 0), (TargetTruth(1, "box", (8.5, 0.5, 0.5), 0.0),))
    scene = scene_with(entity(1, (8.5, 0.5, 0.5), Status.CLAIMED, claimer=1, claim_step=0))
    beh = RobotBehavior(Mode.APPROACH, 1, current_path=tuple((x, 0) for x in range(1, 9)))
    blocked = np.zeros((10, 10), dtype=bool)
    blocked[4, 0:3] = True  # fused edge lands on the stored path
    ctx = StepContext(1, blocked, np.ones((10, 10), dtype=bool), np.random.default_rng(0))
    out = execute_step(RobotState(1, (1.5, 0.5, 0.5), busy=True), beh, scene, w, ctx)
    assert out.replanned and out.behavior.replans == 1
    assert not any(blocked[c] for c in out.behavior.current_path)


def test_carrying_robot_next_to_depot_delivers():
    t = TargetTruth(1, "box", (1.5, 0.5, 0.5), 0.0, Status.CARRIED, holder=1)
    w = GridWorld((10, 10, 1), 1.0, np.zeros((10, 10, 1), dtype=bool), (0, 0, 0), (t,))
    scene = scene_with(entity(1, (1.5, 0.5, 0.5), Status.CARRIED, claimer=1))
    robot = RobotState(1, (1.5, 0.5, 0.5), busy=True, carrying=1)
    ctx = StepContext(0, np.zeros((10, 10), dtype=bool), np.ones((10, 10), dtype=bool), np.random.default_rng(0))
    out = execute_step(robot, RobotBehavior(Mode.TRANSPORT, 1), scene, w, ctx)
    assert [(e.entity_id, e.status) for e in out.events] == [(1, Status.DELIVERED)]
    assert out.behavior.mode == Mode.DELIVER


def test_behavior_invariant():
    with pytest.raises(ValueError):
        RobotBehavior(Mode.APPROACH, None)
    with pytest.raises(ValueError):
        RobotBehavior(Mode.EXPLORE, 3)
