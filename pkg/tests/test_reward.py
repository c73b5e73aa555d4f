import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdsteer.reward import (RewardConfig, collision_penalty, goal_reward, oscillation_penalty,
                               safedist_penalty, total_reward)

GOAL = (10.0, 0.0)


def test_goal_reached():
    assert goal_reward((9.0, 0.0), (9.95, 0.0), GOAL)[0] == 20.0


def test_waypoint_reached_and_consumed():
    r, left = goal_reward((2.0, 0.0), (3.05, 0.0), GOAL, ((3.0, 0.0), (6.0, 0.0)))
    assert r == 10.0
    assert left == ((6.0, 0.0),)
    # the consumed waypoint pays only once
    r2, _ = goal_reward((3.05, 0.0), (3.05, 0.0), GOAL, left)
    assert r2 == 0.0


def test_progress_shaping():
    r, _ = goal_reward((5.0, 0.0), (5.1, 0.0), GOAL)
    assert r == 2.5 * (5.0 - 4.9)
    assert r == pytest.approx(0.25, abs=1e-12)
    # dyadic distances make the arithmetic exact
    assert goal_reward((5.0, 0.0), (5.25, 0.0), GOAL)[0] == 0.625


@pytest.mark.parametrize("d,expected", [(0.2, -20.0), (0.3, 0.0), (1.5, 0.0)])
def test_collision(d, expected):
    assert collision_penalty(d) == expected


@pytest.mark.parametrize("w,expected", [(0.35, -0.1 * 0.35), (0.3, 0.0), (-0.4, -0.1 * 0.4)])
def test_oscillation(w, expected):
    assert oscillation_penalty(w) == expected


def test_oscillation_values():
    assert oscillation_penalty(0.35) == pytest.approx(-0.035, abs=1e-15)
    assert oscillation_penalty(-0.4) == pytest.approx(-0.04, abs=1e-15)
    assert oscillation_penalty(0.4, RewardConfig(enable_oscillation_penalty=False)) == 0.0


@pytest.mark.parametrize("r_min,expected", [(0.6, -0.1 * abs(1.0 - 0.6)), (1.0, 0.0), (2.0, 0.0)])
def test_safedist(r_min, expected):
    assert safedist_penalty(r_min) == expected


def test_safedist_values_and_flags():
    assert safedist_penalty(0.6) == pytest.approx(-0.04, abs=1e-15)
    assert safedist_penalty(2.0, RewardConfig(ungated_safedist=True)) == pytest.approx(-0.1)
    assert safedist_penalty(0.2, RewardConfig(enable_safedist_penalty=False)) == 0.0


def test_total_collision_near_goal():
    b, _ = total_reward((5.0, 0.0), (5.1, 0.0), GOAL, (), 0.25, 0.0, 5.0)
    assert b.r_c == -20.0
    assert b.total == pytest.approx(-19.75, abs=1e-12)
    assert b.total == b.r_g + b.r_c + b.r_osc + b.r_safedist


def test_total_goal_step():
    b, _ = total_reward((9.8, 0.0), (9.95, 0.0), GOAL, (), 5.0, 0.0, 5.0)
    assert b.total == 20.0


def test_total_idle():
    b, _ = total_reward((0.0, 0.0), (0.0, 0.0), GOAL, (), 5.0, 0.0, 5.0)
    assert b.total == 0.0


@given(st.floats(-0.4, 0.4), st.floats(0.0, 10.0), st.floats(0.1, 2.0))
def test_priority_bound(w, r_min, r_smax):
    cfg = RewardConfig(safe_radius=r_smax)
    small = abs(oscillation_penalty(w, cfg)) + abs(safedist_penalty(r_min, cfg))
    assert small < min(cfg.r_wp, abs(cfg.r_collision))


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=30))
def test_shaping_telescopes(path):
    goal = (100.0, 100.0)
    total = sum(goal_reward(a, b, goal)[0] for a, b in zip(path, path[1:]))
    expected = 2.5 * (math.dist(path[0], goal) - math.dist(path[-1], goal))
    assert total == pytest.approx(expected, abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(goal_threshold=0.0)
