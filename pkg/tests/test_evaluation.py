from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdsteer.env import COLLISION, GOAL, STALL
from crowdsteer.evaluation import (PLANNER_ERROR, DWAPlanner, EpisodeResult, MetricTable, PolicyPlanner,
                                   ScriptedPlanner, compute_metrics, count_oscillations, eval_env_config,
                                   read_trace, run_battery, run_episode, run_scenario, trace_metrics, write_trace)
from crowdsteer.policy import NetConfig, PolicyNet
from crowdsteer.world import Geometry, RobotState, Segment, WorldState

DATA = Path(__file__).parent / "data"


def straight_world(geometry=Geometry(), goal=(5.0, 0.0)):
    return WorldState(geometry, (RobotState((0.0, 0.0), 0.0, goal),))


def result(outcome=GOAL, length=1.0, omegas=(0.0,)):
    n = len(omegas) + 1
    trace = np.zeros((n, 11))
    trace[:, 1] = np.linspace(0.0, length, n)
    trace[1:, 5] = omegas
    return EpisodeResult("s", 0, 0, "p", outcome, trace, 0.1)


def test_straight_run_to_goal():
    r, = run_episode(straight_world(), ScriptedPlanner((1.0, 0.0)), eval_env_config(200, False), seed=0)
    assert r.outcome == GOAL
    assert r.length == pytest.approx(5.0, abs=0.1)
    assert r.average_velocity == pytest.approx(1.0)


def test_wall_collision_on_first_step():
    wall = Geometry([Segment(0.38, -2.0, 0.38, 2.0)])
    r, = run_episode(straight_world(wall), ScriptedPlanner((1.0, 0.0)), eval_env_config(200, False), seed=0)
    assert r.outcome == COLLISION and len(r.trace) == 2
    assert r.trace[-1, 10] < 0.3


def test_planner_error_is_reported():
    r, = run_episode(straight_world(), ScriptedPlanner((np.nan, 0.0)), eval_env_config(200, False), seed=0)
    assert r.outcome == PLANNER_ERROR and "non-finite" in r.diagnostic


def test_stall_is_detected():
    r, = run_episode(straight_world(), ScriptedPlanner((0.0, 0.3)), eval_env_config(400, False), seed=0)
    assert r.outcome == STALL
    assert len(r.trace) == 101


@pytest.mark.parametrize("omegas,expected", [([0.2] * 10, 0), ([0.3, -0.3] * 5, 9), ([0.05, -0.05] * 5, 0),
                                             ([0.3, 0.05, -0.3], 0), ([0.2, -0.2, 0.0, 0.2], 1)])
def test_oscillation_count(omegas, expected):
    assert count_oscillations(omegas) == expected


@given(st.lists(st.floats(-0.4, 0.4), min_size=1, max_size=50))
def test_oscillation_count_bounded(omegas):
    assert 0 <= count_oscillations(omegas) <= len(omegas) - 1


def test_success_rate_example():
    t = compute_metrics([result()] * 9 + [result(COLLISION)])
    assert t.rows[0].success_rate == 0.9 and t.rows[0].collisions == 1


def test_average_length_example():
    t = compute_metrics([result(length=4.0), result(length=6.0)])
    assert t.rows[0].avg_length == 5.0


def test_all_failed_cell_uses_until_failure_values():
    t = compute_metrics([result(COLLISION, 2.0), result(COLLISION, 4.0)])
    assert t.rows[0].success_rate == 0.0 and t.rows[0].avg_length == 3.0


def test_stall_length_stops_at_window_start():
    trace = np.zeros((151, 11))
    trace[:51, 1] = np.linspace(0, 5, 51)
    trace[51:, 1] = 5.0
    assert trace_metrics(trace, 0.1, STALL)[:2] == (pytest.approx(5.0), pytest.approx(5.0))


def test_golden_metric_table(tmp_path):
    res = run_battery(["didactic", "narrow-static", "ablation-static"], DWAPlanner, [0, 1, 2])
    live = compute_metrics(res)
    assert live.rows == MetricTable.read_csv(DATA / "golden_dwa_metrics.csv").rows
    live.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == (DATA / "golden_dwa_metrics.csv").read_text()


def test_trace_round_trip_recomputes_metrics(tmp_path):
    live = run_scenario("narrow-static", DWAPlanner(), [3])
    for r in live:
        write_trace(tmp_path / "t.csv", r)
        back = read_trace(tmp_path / "t.csv")
        assert np.array_equal(back.trace, r.trace)
        assert (back.length, back.duration, back.average_velocity, back.oscillations, back.outcome) == \
            (r.length, r.duration, r.average_velocity, r.oscillations, r.outcome)
    assert compute_metrics([read_trace(tmp_path / "t.csv")]).rows == compute_metrics(live).rows


def test_policy_episode_is_deterministic():
    net = PolicyNet(NetConfig(modality="lidar-only"), seed=5)
    a = run_scenario("didactic", PolicyPlanner(net), [11])
    b = run_scenario("didactic", PolicyPlanner(net), [11])
    assert all(np.array_equal(x.trace, y.trace) and x.outcome == y.outcome for x, y in zip(a, b))


def test_battery_order_and_velocity_bound():
    res = run_battery(["didactic", "circle"], DWAPlanner, [0, 1])
    assert [(r.scenario, r.seed) for r in res] == [("didactic", 0), ("didactic", 1)] + \
        [("circle", s) for s in (0, 1) for _ in range(4)]
    assert all(r.average_velocity <= 1.0 for r in res)


def test_parallel_battery_matches_serial():
    serial = run_battery(["didactic"], DWAPlanner, [0, 1])
    parallel = run_battery(["didactic"], DWAPlanner, [0, 1], workers=2)
    assert all(np.array_equal(a.trace, b.trace) for a, b in zip(serial, parallel))
