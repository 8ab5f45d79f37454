import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajattack.core import (
    Agent,
    AgentState,
    LaneSegment,
    Scenario,
    ScenarioError,
    Trajectory,
    atomic_write_text,
    derive_kinematics,
    dumps_scenario,
    load_csv_scenario,
    load_scenario,
    max_abs_acceleration,
    polyline_length,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    wrap_angle,
)

from conftest import straight_scenario


def test_history_and_future_slices_use_trailing_window():
    sc = straight_scenario(v=2.0, context=3)
    pts = sc.adversary.trajectory.points
    np.testing.assert_array_equal(sc.history(), pts[3:7])
    np.testing.assert_array_equal(sc.future(), pts[7:19])
    np.testing.assert_array_equal(sc.preceding_state(), pts[2])


def test_no_preceding_state_without_context():
    assert straight_scenario(context=0).preceding_state() is None


def test_scenario_round_trip(tmp_path):
    sc = straight_scenario()
    path = tmp_path / "s.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert dumps_scenario(back) == path.read_text()
    assert back.id == sc.id and back.history_len == 4 and back.future_len == 12
    np.testing.assert_array_equal(back.history("lead"), sc.history("lead"))


def test_canonical_field_names():
    doc = scenario_to_dict(straight_scenario())
    assert {"dt", "history_len", "future_len", "adversary_id", "agents", "lanes"} <= set(doc)
    assert set(doc["agents"][0]) == {"id", "class", "states"}
    assert set(doc["lanes"][0]) == {"centerline", "width"}


def test_short_agent_rejected():
    doc = scenario_to_dict(straight_scenario())
    doc["agents"][1]["states"] = doc["agents"][1]["states"][:5]
    with pytest.raises(ScenarioError, match="lead"):
        scenario_from_dict(doc)


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(adversary_id="ghost"), "adversary"),
    (lambda d: d["agents"][0].update({"class": "pedestrian"}), "vehicle"),
    (lambda d: d.update(dt=0.0), "dt"),
    (lambda d: d["agents"][1].update(id="adv"), "duplicate"),
    (lambda d: d.update(history_len=20), "needs"),
    (lambda d: d.pop("agents"), "invalid"),
])
def test_invalid_documents(mutate, match):
    doc = scenario_to_dict(straight_scenario())
    mutate(doc)
    with pytest.raises(ScenarioError, match=match):
        scenario_from_dict(doc)


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_csv_import_matches_json(tmp_path):
    sc = straight_scenario(v=3.0)
    rows = ["agent_id,t_index,x,y"]
    for a in reversed(sc.agents):  # row order must not matter
        rows += [f"{a.id},{k},{x!r},{y!r}" for k, (x, y) in enumerate(a.trajectory.points.tolist())]
    (tmp_path / "t.csv").write_text("\n".join(rows) + "\n")
    meta = {k: v for k, v in scenario_to_dict(sc).items() if k != "agents"}
    (tmp_path / "t.json").write_text(json.dumps(meta))
    back = load_csv_scenario(tmp_path / "t.csv", tmp_path / "t.json")
    np.testing.assert_array_equal(back.history(), sc.history())
    np.testing.assert_array_equal(back.future("lead"), sc.future("lead"))


def test_csv_gap_rejected(tmp_path):
    (tmp_path / "t.csv").write_text("agent_id,t_index,x,y\na,0,0,0\na,2,1,0\n")
    (tmp_path / "t.json").write_text(json.dumps({"dt": 0.5, "history_len": 1, "future_len": 1,
                                                 "adversary_id": "a"}))
    with pytest.raises(ScenarioError, match="gaps"):
        load_csv_scenario(tmp_path / "t.csv", tmp_path / "t.json")


def test_trajectory_states_round_trip():
    states = [AgentState(0.0, 0.0, 3), AgentState(1.0, 0.5, 4), AgentState(2.0, 1.0, 5)]
    traj = Trajectory.from_states(states, dt=0.1)
    assert traj.t0 == 3 and traj.states == states
    with pytest.raises(ValueError):
        Trajectory.from_states([AgentState(0, 0, 0), AgentState(1, 0, 2)])


def test_trajectory_is_read_only():
    traj = Trajectory(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        traj.points[0, 0] = 1.0


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.0, 0.0], [np.nan, 1.0]]))


def test_lane_validation():
    with pytest.raises(ValueError):
        LaneSegment(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), 3.0)
    with pytest.raises(ValueError):
        LaneSegment(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.0)


def test_kinematics_constant_speed():
    k = derive_kinematics(Trajectory(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]), 0.5))
    np.testing.assert_allclose(k.speed, 2.0)
    np.testing.assert_allclose(k.heading, 0.0)
    np.testing.assert_allclose(k.acceleration, 0.0)


def test_kinematics_accelerating_oracle():
    # speeds 1, 2, 4 m/s at dt = 1: central difference in the middle, one-sided at the ends
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 3.0], [0.0, 7.0]])
    k = derive_kinematics(pts, 1.0)
    np.testing.assert_allclose(k.speed, [1.0, 2.0, 4.0])
    np.testing.assert_allclose(k.heading, math.pi / 2)
    np.testing.assert_allclose(k.acceleration, [1.0, 1.5, 2.0])
    assert max_abs_acceleration(pts, 1.0) == 2.0


def test_kinematics_two_points_and_stationary_heading():
    k = derive_kinematics(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.5)
    assert k.acceleration.size == 0
    k = derive_kinematics(np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]]), 1.0)
    assert k.heading[1] == k.heading[0]
    k = derive_kinematics(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), 1.0)
    assert k.heading[0] == 0.0
    with pytest.raises(ValueError):
        derive_kinematics(np.zeros((1, 2)), 1.0)
    with pytest.raises(ValueError):
        derive_kinematics(np.zeros((3, 2)))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range_and_equivalence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi


def test_polyline_length():
    assert polyline_length([[0, 0], [3, 4], [3, 5]]) == 6.0


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_agent_lengths_must_match():
    a = Agent("adv", "car", Trajectory(np.zeros((20, 2))))
    b = Agent("b", "car", Trajectory(np.zeros((19, 2))))
    with pytest.raises(ScenarioError):
        Scenario((a, b), "adv", 4, 12)
