import json
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from semcomm.world import (
    GridWorld,
    MotionAction,
    PickupConflictError,
    PickupRangeError,
    RobotState,
    ScenarioParams,
    ScenarioParseError,
    ScenarioValidationError,
    Sensor,
    Status,
    TargetTruth,
    apply_claim,
    apply_delivery,
    apply_pickup,
    generate_scenario,
    load_scenario,
    save_scenario,
    scenario_to_dict,
    step_motion,
)


def empty_world(dims=(12, 12, 2), targets=(), depot=(0, 0, 0)):
    return GridWorld(dims, 1.0, np.zeros(dims, dtype=bool), depot, targets)


def bfs_reachable(blocked, start):
    seen = {start}
    q = deque([start])
    nx, ny = blocked.shape
    while q:
        x, y = q.popleft()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                n = (x + dx, y + dy)
                if n in seen or not (0 <= n[0] < nx and 0 <= n[1] < ny) or blocked[n]:
                    continue
                if dx and dy and (blocked[x + dx, y] or blocked[x, y + dy]):
                    continue
                seen.add(n)
                q.append(n)
    return seen


# -- generation ---------------------------------------------------------------


def test_generated_world_connectivity():
    w = generate_scenario(7, ScenarioParams(density=0.15, n_targets=6))
    assert len(w.targets) == 6
    reach = bfs_reachable(w.ground_blocked, w.depot[:2])
    for t in w.targets:
        assert w.voxel_of(t.position)[:2] in reach
    for s in w.spawns:
        assert s[:2] in reach


def test_generation_is_deterministic():
    a = generate_scenario(7)
    b = generate_scenario(7)
    assert a == b
    assert a.occupancy.tobytes() == b.occupancy.tobytes()
    assert generate_scenario(8) != a


def test_zero_density_has_no_obstacles():
    w = generate_scenario(3, ScenarioParams(density=0.0))
    assert not w.occupancy.any()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_worlds_satisfy_invariants(seed):
    w = generate_scenario(seed)
    assert not w.occupancy[w.depot]
    assert len({t.id for t in w.targets}) == len(w.targets)
    for t in w.targets:
        assert w.contains(t.position)
        assert not w.occupancy[w.voxel_of(t.position)]


def test_bad_density_rejected():
    with pytest.raises(ValueError):
        ScenarioParams(density=1.0)


# -- scenario files -----------------------------------------------------------


def test_scenario_round_trip(tmp_path):
    w = generate_scenario(11)
    path = tmp_path / "scenario.json"
    save_scenario(w, path)
    assert load_scenario(path) == w
    doc = json.loads(path.read_text())
    assert doc["version"] == 1
    assert [t["id"] for t in doc["targets"]] == [t.id for t in w.targets]


def test_depot_on_obstacle_names_depot(tmp_path):
    doc = scenario_to_dict(generate_scenario(2))
    occ = np.zeros((32, 32, 4), dtype=bool)
    occ[doc["depot"][0], doc["depot"][1], doc["depot"][2]] = True
    bad = dict(doc)
    # rebuild the RLE with the depot voxel occupied
    from semcomm.world import _rle_row

    bad["occupancy"] = [[_rle_row(occ[:, y, z]) for y in range(32)] for z in range(4)]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ScenarioValidationError) as err:
        load_scenario(path)
    assert err.value.field == "depot"


def test_truncated_file_is_parse_error(tmp_path):
    path = tmp_path / "trunc.json"
    text = json.dumps(scenario_to_dict(generate_scenario(4)))
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ScenarioParseError):
        load_scenario(path)


# -- sensing --------------------------------------------------------------------


def march_oracle(world, voxel, radius, resolution=math.radians(1.0), step=0.1):
    """Plain-Python ray march, one ray at a time."""
    occupied, free = set(), set()
    nx, ny, nz = world.dims
    n = int(round(2 * math.pi / resolution))
    for z in range(nz):
        for i in range(n):
            a = -math.pi + (i + 0.5) * 2 * math.pi / n
            k = 0
            while True:
                t = k * step
                if t > radius + 1e-9:
                    break
                ox = math.floor(0.5 + t * math.cos(a))
                oy = math.floor(0.5 + t * math.sin(a))
                k += 1
                if ox * ox + oy * oy > radius * radius + 1e-9:
                    continue
                v = (voxel[0] + ox, voxel[1] + oy, z)
                if not (0 <= v[0] < nx and 0 <= v[1] < ny):
                    break
                if world.occupancy[v]:
                    occupied.add(v)
                    break
                free.add(v)
    return occupied, free - occupied


def test_empty_world_sees_only_free_space():
    w = empty_world((20, 20, 1))
    robot = RobotState(1, w.center((10, 10, 0)))
    obs = Sensor(radius=5).sense(w, robot)
    assert obs.visible_occupied == frozenset()
    expect = {(x, y, 0) for x in range(20) for y in range(20) if (x - 10) ** 2 + (y - 10) ** 2 <= 25}
    assert obs.visible_free == expect


def test_wall_matches_ray_march_oracle():
    occ = np.zeros((20, 20, 2), dtype=bool)
    occ[12, 4:16, :] = True  # wall two cells to the right of the robot's column
    w = GridWorld((20, 20, 2), 1.0, occ, (0, 0, 0), ())
    robot = RobotState(1, w.center((10, 10, 0)))
    obs = Sensor(radius=6).sense(w, robot)
    occupied, free = march_oracle(w, (10, 10, 0), 6)
    assert obs.visible_occupied == occupied
    assert obs.visible_free == free
    assert (12, 10, 0) in obs.visible_occupied
    assert not any(v[0] > 12 and 4 <= v[1] < 16 for v in obs.visible_free | obs.visible_occupied if abs(v[1] - 10) <= 2)


def test_target_behind_obstacle_is_hidden():
    occ = np.zeros((16, 16, 1), dtype=bool)
    occ[8, 5:12, 0] = True
    hidden = TargetTruth(1, "box", (10.5, 8.5, 0.5), 0.0)
    seen = TargetTruth(2, "crate", (6.5, 8.5, 0.5), 0.0)
    w = GridWorld((16, 16, 1), 1.0, occ, (0, 0, 0), (hidden, seen))
    obs = Sensor(radius=8).sense(w, RobotState(1, (4.5, 8.5, 0.5)), rng=np.random.default_rng(0))
    assert [s.id for s in obs.visible_targets] == [2]
    s = obs.visible_targets[0]
    assert all(abs(a - b) <= 0.5 for a, b in zip(s.position, seen.position))
    assert 0.0 <= s.confidence <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 500), st.integers(0, 31), st.integers(0, 31))
def test_sensing_is_sound(seed, x, y):
    w = generate_scenario(seed % 40)
    if w.occupancy[x, y, 0]:
        return
    obs = Sensor().sense(w, RobotState(1, w.center((x, y, 0))))
    assert not (obs.visible_occupied & obs.visible_free)
    assert all(w.occupancy[v] for v in obs.visible_occupied)
    assert not any(w.occupancy[v] for v in obs.visible_free)
    for v in obs.visible_occupied | obs.visible_free:
        assert math.hypot(v[0] - x, v[1] - y) <= 8 + 1e-9


def test_noise_stream_is_deterministic():
    w = generate_scenario(5)
    r = RobotState(1, w.center(w.spawns[0]))
    a = Sensor().sense(w, r, rng=np.random.default_rng(9))
    b = Sensor().sense(w, r, rng=np.random.default_rng(9))
    assert a == b


# -- motion -----------------------------------------------------------------------


def test_move_into_free_voxel_adds_distance():
    w = empty_world()
    r = RobotState(1, w.center((3, 3, 0)))
    r2 = step_motion(w, r, MotionAction.move(1, 1))
    assert r2.position == w.center((4, 4, 0))
    assert r2.distance_traveled == pytest.approx(math.sqrt(2))


def test_blocked_move_is_noop():
    occ = np.zeros((6, 6, 1), dtype=bool)
    occ[3, 2, 0] = True
    w = GridWorld((6, 6, 1), 1.0, occ, (0, 0, 0), ())
    r = RobotState(1, w.center((2, 2, 0)))
    assert step_motion(w, r, MotionAction.move(1, 0)).position == r.position
    # diagonal past a blocked corner is also refused
    assert step_motion(w, r, MotionAction.move(1, 1)).position == r.position
    # leaving the grid is refused
    edge = RobotState(1, w.center((0, 0, 0)))
    assert step_motion(w, edge, MotionAction.move(-1, 0)).position == edge.position


def test_wait_changes_nothing():
    w = empty_world()
    r = RobotState(1, w.center((3, 3, 0)), heading=0.3, distance_traveled=2.0)
    assert step_motion(w, r, MotionAction.wait()) == r


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.lists(st.tuples(st.integers(-1, 1), st.integers(-1, 1)), max_size=40))
def test_random_walks_never_enter_obstacles(seed, moves):
    w = generate_scenario(seed)
    r = RobotState(1, w.center(w.spawns[0]))
    for dx, dy in moves:
        action = MotionAction.move(dx, dy) if (dx or dy) else MotionAction.wait()
        before = r.distance_traveled
        r = step_motion(w, r, action)
        assert not w.occupancy[w.voxel_of(r.position)]
        assert r.distance_traveled >= before


# -- task physics -------------------------------------------------------------------


def test_pickup_and_delivery():
    t = TargetTruth(1, "box", (5.5, 5.5, 0.5), 0.0)
    w = empty_world(targets=(t,))
    w = apply_claim(w, 1, 1)
    assert w.target(1).status == Status.CLAIMED
    r = RobotState(1, (5.5, 5.5, 0.5), busy=True)
    w, r = apply_pickup(w, r, 1)
    assert w.target(1).status == Status.CARRIED and r.carrying == 1
    r = RobotState(1, w.center(w.depot), busy=True, carrying=1)
    w, r = apply_delivery(w, r)
    assert w.target(1).status == Status.DELIVERED
    assert r.carrying is None and not r.busy


def test_pickup_out_of_range():
    t = TargetTruth(1, "box", (10.5, 10.5, 0.5), 0.0)
    w = empty_world(targets=(t,))
    with pytest.raises(PickupRangeError):
        apply_pickup(w, RobotState(1, (0.5, 0.5, 0.5)), 1, radius=1.0)


def test_pickup_of_carried_target_conflicts():
    t = TargetTruth(1, "box", (5.5, 5.5, 0.5), 0.0, Status.CARRIED, holder=2)
    w = empty_world(targets=(t,))
    with pytest.raises(PickupConflictError):
        apply_pickup(w, RobotState(1, (5.5, 5.5, 0.5)), 1)
