import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays

from semcomm.perception import (
    MASK_SIZE,
    EdgeConfig,
    EdgeMask,
    TargetEstimator,
    anchors_from_points,
    detect_objects,
    edge_distance,
    empty_mask,
    extract_edges,
    mask_from_columns,
    occupancy_boundary,
    reproject,
)
from semcomm.world import Observation, RobotState, Sensor, Status, TargetSighting, generate_scenario


def obs_of(occupied=(), free=(), targets=()):
    return Observation(1, 0, frozenset(occupied), frozenset(free), (), tuple(targets))


# -- mask geometry ------------------------------------------------------------


def test_default_geometry():
    cfg = EdgeConfig()
    assert cfg.radius_voxels == 8
    assert cfg.cells_per_voxel == 15  # 256 // 17
    assert cfg.center_cell == 121  # 128 - 15 // 2
    assert cfg.origin_cell((10, 4)) == (10 * 15 - 121, 4 * 15 - 121)


def test_face_lines_oracle():
    # one occupied voxel east of the robot with free space on its west face only
    cfg = EdgeConfig()
    o = obs_of(occupied={(12, 10, 0)}, free={(11, 10, 0)})
    assert occupancy_boundary(o) == {(12, 10): frozenset({(-1, 0)})}
    m = extract_edges(o, RobotState(1, (10.5, 10.5, 0.5)), cfg)
    expect = np.zeros((MASK_SIZE, MASK_SIZE), dtype=bool)
    u = 121 + 2 * 15
    expect[u, 121 : 121 + 15] = True
    assert np.array_equal(m.bits, expect)
    assert m.origin_cell == cfg.origin_cell((10, 10))


def test_block_extractor_fills_voxel():
    cfg = EdgeConfig(extractor="occupancy_block")
    o = obs_of(occupied={(9, 10, 1)}, free={(9, 11, 1)})
    m = extract_edges(o, RobotState(1, (10.5, 10.5, 0.5)), cfg)
    assert m.bits.sum() == 15 * 15
    assert m.bits[121 - 15 : 121, 121 : 121 + 15].all()


def test_unknown_extractor_rejected():
    with pytest.raises(ValueError):
        extract_edges(obs_of(), RobotState(1, (0.5, 0.5, 0.5)), EdgeConfig(extractor="canny"))


def test_occupied_without_free_neighbour_has_no_edge():
    assert occupancy_boundary(obs_of(occupied={(3, 3, 0), (4, 3, 0)})) == {}


def test_columns_outside_mask_are_dropped():
    cfg = EdgeConfig()
    m = mask_from_columns({(40, 40)}, (10, 10), cfg)
    assert not m.bits.any()


def test_real_sensing_mask_is_nonempty():
    w = generate_scenario(3)
    robot = RobotState(1, w.center(w.spawns[0]))
    obs = Sensor().sense(w, robot)
    m = extract_edges(obs, robot)
    assert m.bits.shape == (256, 256)
    assert m.bits.any() == bool(occupancy_boundary(obs))


# -- reprojection and distance ------------------------------------------------------


def test_reproject_is_translation():
    cfg = EdgeConfig()
    m = mask_from_columns({(12, 10): {(-1, 0)}}, (10, 10), cfg)
    moved = reproject(m, cfg.origin_cell((11, 10)))
    direct = mask_from_columns({(12, 10): {(-1, 0)}}, (11, 10), cfg)
    assert moved == direct
    assert reproject(moved, m.origin_cell) == m


def test_empty_mask_is_zero():
    m = empty_mask((0, 0))
    assert not m.bits.any() and m.origin_cell == (0, 0)


masks = arrays(np.bool_, (16, 16))


@given(masks, masks, masks)
def test_edge_distance_is_a_metric(a, b, c):
    assert edge_distance(a, a) == 0.0
    assert edge_distance(a, b) == edge_distance(b, a)
    assert 0.0 <= edge_distance(a, b) <= 1.0
    assert edge_distance(a, c) <= edge_distance(a, b) + edge_distance(b, c) + 1e-12


def test_edge_distance_value():
    a = np.zeros((256, 256), dtype=bool)
    b = a.copy()
    b[0, :10] = True
    assert edge_distance(a, b) == pytest.approx(10 / 65536)
    with pytest.raises(ValueError):
        edge_distance(a, np.zeros((4, 4), dtype=bool))


def test_edge_mask_is_unhashable():
    with pytest.raises(TypeError):
        hash(empty_mask((0, 0)))
    assert empty_mask((0, 0)) != empty_mask((1, 0))
    assert isinstance(empty_mask((0, 0)), EdgeMask)


# -- anchors ------------------------------------------------------------------------


def binning_oracle(points, voxel, min_count, cap):
    bins = defaultdict(list)
    for p in points:
        bins[tuple(math.floor(c / voxel) for c in p)].append(p)
    out = []
    for pts in bins.values():
        if len(pts) < min_count:
            continue
        centroid = tuple(sum(p[i] for p in pts) / len(pts) for i in range(3))
        out.append((centroid, min(1.0, len(pts) / cap)))
    return sorted(out)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 6, allow_nan=False)] * 3), max_size=60))
def test_anchors_match_brute_force_binning(points):
    got = anchors_from_points(np.array(points, dtype=float).reshape(-1, 3), 1.0)
    want = binning_oracle(points, 1.0, 2, 8)
    assert len(got) == len(want)
    for a, (pos, conf) in zip(got, want):
        assert a.position == pytest.approx(pos)
        assert a.confidence == pytest.approx(conf)


def test_anchor_cap_keeps_most_confident():
    rng = np.random.default_rng(0)
    pts = np.concatenate([np.full((9, 3), 0.5), rng.uniform(1, 20, (2000, 3)).round(0) + 0.25])
    got = anchors_from_points(pts, 1.0, m_max=3)
    assert len(got) == 3
    assert any(a.position == (0.5, 0.5, 0.5) and a.confidence == 1.0 for a in got)


def test_anchor_voxel_must_be_positive():
    from semcomm.perception import extract_anchors

    with pytest.raises(ValueError):
        extract_anchors(obs_of(), 0.0)


# -- objects --------------------------------------------------------------------------


def test_detect_objects_sorted_with_beliefs():
    s = [TargetSighting(5, "box", (1.0, 1.0, 0.5), 0.0, 1.2), TargetSighting(2, "crate", (3.0, 1.0, 0.5), 0.0, 0.7)]
    out = detect_objects(obs_of(targets=s), {5: Status.CLAIMED})
    assert [e.id for e in out] == [2, 5]
    assert out[1].status == Status.CLAIMED and out[1].confidence == 1.0
    assert out[0].status == Status.UNASSIGNED


def test_estimator_running_mean():
    est = TargetEstimator()
    sightings = [(1.0, 0.0), (2.0, 0.2), (3.0, -0.2)]
    from semcomm.perception import EntityObservation

    for i, (x, yaw) in enumerate(sightings):
        (e,) = est.update([EntityObservation(7, "box", (x, 0.0, 0.0), yaw, 0.9)])
    assert e.position == pytest.approx((2.0, 0.0, 0.0))
    assert e.orientation == pytest.approx(0.0, abs=1e-12)
