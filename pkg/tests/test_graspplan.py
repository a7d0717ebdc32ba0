import numpy as np
import pytest

from src.pegtransfer.geometry import distance_to_polyline, triangle_vertices
from src.pegtransfer.graspplan import (
    ArmId,
    default_arms,
    eligible_sides,
    enumerate_grasps,
    plan_grasp,
    plan_place,
    snap_roll,
)


@pytest.fixture
def arms(config):
    return default_arms(config)


def test_arm_homes(arms):
    assert arms["left"].home_position == (-50.0, 65.0)
    assert arms["right"].home_position == (250.0, 65.0)


def test_unknown_arm():
    with pytest.raises(ValueError):
        ArmId("middle", (0.0, 0.0))


def test_six_candidates_on_edges():
    center = (70.0, 65.0)
    candidates = enumerate_grasps(center, 25.0, 18.0)
    vertices = triangle_vertices(center, 25.0, 18.0)
    assert [c.order for c in candidates] == list(range(6))
    assert [c.side_index for c in candidates] == [0, 0, 1, 1, 2, 2]
    for candidate in candidates:
        assert distance_to_polyline(candidate.point, vertices) == pytest.approx(0.0, abs=1e-9)
        # a 1/3 de la arista: inradio 3·√3 y desplazamiento 3 mm
        assert candidate.dist_to_peg == pytest.approx(6.0)


@pytest.mark.parametrize("angle,expected", [(10.0, 0.0), (80.0, 90.0), (135.0, 0.0), (170.0, 0.0), (95.0, 90.0)])
def test_snap_roll(angle, expected):
    assert snap_roll(angle) == expected


def test_right_arm_only_uses_near_sides(arms):
    assert eligible_sides((130.0, 65.0), 0.0, 18.0, arms["right"].home_position) == [1, 2]
    assert eligible_sides((70.0, 65.0), 0.0, 18.0, arms["left"].home_position) == [0, 1]


def test_grasp_is_farthest_eligible_candidate(arms):
    center, theta, peg = (71.0, 65.5), 40.0, (70.0, 65.0)
    chosen = plan_grasp(center, theta, arms["right"], peg)
    sides = eligible_sides(center, theta, 18.0, arms["right"].home_position)
    eligible = [c for c in enumerate_grasps(center, theta, 18.0, peg) if c.side_index in sides]
    assert chosen.side_index in sides
    assert chosen.dist_to_peg == pytest.approx(max(c.dist_to_peg for c in eligible))


def test_centered_block_tie_breaks_to_first_candidate(arms):
    chosen = plan_grasp((130.0, 65.0), 0.0, arms["right"], (130.0, 65.0))
    assert chosen.side_index == 1
    assert chosen.order == 2


def test_plan_place_single_arm(arms):
    pose = plan_place((130.0, 25.0), arms["right"], bilateral=False)
    assert pose.point == (130.0, 25.0)
    assert pose.yaw == 0.0


def test_plan_place_bilateral_offsets(arms):
    assert plan_place((130.0, 25.0), arms["left"], bilateral=True).yaw == -15.0
    assert plan_place((170.0, 25.0), arms["right"], bilateral=True).yaw == 15.0
    assert plan_place((170.0, 25.0), arms["right"], True, (-10.0, 10.0)).yaw == 10.0


def test_zero_error_grasp_is_captured(arms, config):
    center, theta = (30.5, 24.2), 73.0
    grasp = plan_grasp(center, theta, arms["left"], (30.0, 25.0))
    vertices = triangle_vertices(center, theta, config.block_edge)
    assert distance_to_polyline(np.asarray(grasp.point), vertices) < 3.0


def _rigid(point, angle, shift):
    c, s = np.cos(np.radians(angle)), np.sin(np.radians(angle))
    x, y = point
    return (c * x - s * y + shift[0], s * x + c * y + shift[1])


@pytest.mark.parametrize("seed", range(5))
def test_grasp_is_equivariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    center = tuple(rng.uniform(20.0, 180.0, 2))
    theta = float(rng.uniform(0.0, 120.0))
    peg = tuple(np.asarray(center) + rng.uniform(-1.5, 1.5, 2))
    home = (250.0, 65.0)
    angle, shift = float(rng.uniform(-180.0, 180.0)), tuple(rng.uniform(-50.0, 50.0, 2))

    original = plan_grasp(center, theta, ArmId("right", home), peg)
    moved = plan_grasp(_rigid(center, angle, shift), theta + angle,
                       ArmId("right", _rigid(home, angle, shift)), _rigid(peg, angle, shift))
    np.testing.assert_allclose(moved.point, _rigid(original.point, angle, shift), atol=1e-9)
    assert (moved.side_index, moved.order) == (original.side_index, original.order)
    assert moved.dist_to_peg == pytest.approx(original.dist_to_peg)


@pytest.mark.parametrize("scale", [0.5, 2.0, 3.7])
def test_grasp_is_invariant_under_uniform_scaling(scale):
    center, theta, peg, home = (71.0, 64.0), 37.0, (70.2, 65.1), (-50.0, 65.0)
    original = plan_grasp(center, theta, ArmId("left", home), peg, edge=18.0)
    scaled = plan_grasp(tuple(scale * np.asarray(center)), theta,
                        ArmId("left", tuple(scale * np.asarray(home))),
                        tuple(scale * np.asarray(peg)), edge=18.0 * scale)
    np.testing.assert_allclose(scaled.point, scale * np.asarray(original.point), atol=1e-9)
    assert (scaled.side_index, scaled.order) == (original.side_index, original.order)
    assert scaled.dist_to_peg == pytest.approx(scale * original.dist_to_peg)
