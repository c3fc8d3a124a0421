import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import tasqp.controller as ctl
from tasqp.bridge import HumanPose, Say, TouchEvent
from tasqp.controller import (
    DT, Controller, Fsm, FsmState, ObservationLost, RobotState, ScenarioError, TaskConverged,
    TickLog, TimeElapsed, TouchTrigger, Transition, UnknownRobot, WorldState, load_scenario,
    parse_scenario, read_log, update_observed,
)
from tasqp.model import load_model, random_configuration
from tasqp.qpsolve import QpSolution
from tests.conftest import chain_doc


def _scalar_scenario(tmp_path, target=0.2, kp=100.0, states=None, feedback="open_loop"):
    desc = tmp_path / "scalar.json"
    desc.write_text(json.dumps(chain_doc([("revolute", [0, 0, 1], [0, 0, 0])], name="scalar")))
    doc = {
        "name": "scalar",
        "robots": [{"name": "r", "description": str(desc), "role": "controlled"}],
        "controller": {"dt": DT, "feedback": feedback, "reg": 0.0, "damping_weight": 0.0},
        "tasks": {"post": {"type": "posture", "robot": "r", "target": {"j0": target}, "gains": {"kp": kp}}},
        "states": states or [{"name": "Hold", "tasks": ["post"]}],
        "terminal_states": [],
    }
    return parse_scenario(doc)


def _controller(sc, q=None):
    world = WorldState([RobotState(r["name"], sc.model(r["name"]), r.get("role", "controlled")) for r in sc.robots])
    if q is not None:
        world.controlled[0].set(q)
    return Controller(sc, world).start(), world


def _pepper_scenario(states, tasks=None, **extra):
    doc = json.loads(ctl.scenario_path("posture_demo").read_text())
    doc["tasks"] = tasks or {"post": {"type": "posture", "robot": "pepper", "target": "initial"}}
    doc["states"] = states
    doc["initial_state"] = states[0]["name"]
    doc["terminal_states"] = []
    doc.update(extra)
    return parse_scenario(doc)


# --- tick


def test_at_target_commands_current_q():
    sc = _pepper_scenario([{"name": "Hold", "tasks": ["post"]}])
    c, w = _controller(sc)
    rs = w.controlled[0]
    out = c.tick()
    off = rs.model.nq - rs.model.njoints
    for i, j in enumerate(rs.model.joint_names):
        assert abs(out.joint_positions[j] - rs.q[off + i]) <= 1e-9
    assert out.base_velocity == [0.0, 0.0, 0.0]
    assert out.diagnostics["solver_status"] == "optimal"


def test_scalar_pd_matches_recurrence(tmp_path):
    sc = _scalar_scenario(tmp_path)
    c, w = _controller(sc, q=np.array([0.3]))
    kp = 100.0
    kd = 2 * math.sqrt(kp)
    M = np.array([[1 - kp * DT * DT, DT - kd * DT * DT], [-kp * DT, 1 - kd * DT]])
    x = np.array([0.1, 0.0])
    for _ in range(500):
        out = c.tick()
        c.observe()
        x = M @ x
        assert abs(out.joint_positions["j0"] - 0.2 - x[0]) <= 1e-9


def test_infeasible_solve_holds(monkeypatch):
    sc = _pepper_scenario([{"name": "Hold", "tasks": ["post"]}])
    r = np.random.default_rng(3)
    c, w = _controller(sc)
    rs = w.controlled[0]
    q = rs.q.copy()
    q[rs.model.joint_slice()] = random_configuration(rs.model, r)[rs.model.joint_slice()]
    rs.set(q, np.full(rs.model.nv, 0.1))
    monkeypatch.setattr(ctl, "solve", lambda p, tol=1e-8: QpSolution(np.zeros(p.n), "infeasible", float("inf"), []))
    out = c.tick()
    assert out.diagnostics["solver_status"] == "infeasible"
    off = rs.model.nq - rs.model.njoints
    for i, j in enumerate(rs.model.joint_names):
        if not j.endswith("Gripper"):
            assert out.joint_positions[j] == rs.q[off + i]
    assert out.base_velocity == [0.0, 0.0, 0.0]


def test_forced_hold_after_desync():
    sc = _pepper_scenario([{"name": "Hold", "tasks": ["post"]}])
    c, w = _controller(sc)
    c.force_hold = True
    out = c.tick()
    assert out.diagnostics["solver_status"] == "hold"
    assert c.tick().diagnostics["solver_status"] == "optimal"


# --- FSM


def _fsm(transitions, extra=()):
    states = [FsmState("A", transitions=transitions)] + [FsmState(n) for n in ("B", "C", "D", *extra)]
    return Fsm(states, "A", dt=DT)


def test_touch_enters_next_state_same_tick():
    f = _fsm([Transition(TouchTrigger("LHandTouch"), "B")])
    assert f.fsm_step([], {}) is None
    assert f.fsm_step([TouchEvent(7, "LHandTouch", True)], {}) == "B"
    assert f.current == "B"


def test_touch_ignores_other_sensor_and_release():
    f = _fsm([Transition(TouchTrigger("LHandTouch"), "B")])
    assert f.fsm_step([TouchEvent(1, "RHandTouch", True), TouchEvent(1, "LHandTouch", False)], {}) is None


def test_task_converged_fires():
    f = _fsm([Transition(TaskConverged("reach", 0.01, 0.01), "B")])
    assert f.fsm_step([], {"tasks": {"reach": (0.011, 0.0)}}) is None
    assert f.fsm_step([], {"tasks": {"reach": (0.009, 0.005)}}) == "B"


def test_observation_lost():
    f = _fsm([Transition(ObservationLost("human", 3), "B")])
    assert f.fsm_step([], {}, {"human": 2}) is None
    assert f.fsm_step([], {}, {"human": 3}) == "B"


def test_trigger_validation():
    with pytest.raises(ValueError):
        TaskConverged("t", 0.0, 0.1)
    with pytest.raises(ValueError):
        ObservationLost("h", 0)


def test_fsm_structure_validation():
    with pytest.raises(ScenarioError):
        Fsm([FsmState("A"), FsmState("A")], "A")
    with pytest.raises(ScenarioError):
        Fsm([FsmState("A", transitions=[Transition(TimeElapsed(1.0), "Z")])], "A")


def test_declaration_order_wins_every_permutation():
    triggers = [
        (TouchTrigger("LHandTouch"), "B"),
        (TaskConverged("reach", 0.1, 0.1), "C"),
        (TimeElapsed(0.0), "D"),
        (ObservationLost("human", 1), "E"),
    ]
    diag = {"tasks": {"reach": (0.0, 0.0)}}
    for perm in itertools.permutations(triggers):
        f = _fsm([Transition(t, n) for t, n in perm], extra=("E",))
        got = f.fsm_step([TouchEvent(1, "LHandTouch", True)], diag, {"human": None})
        assert got == perm[0][1]  # oracle: the first declared trigger
        assert f.ticks_in_state == 0


@settings(max_examples=60, deadline=None)
@given(seconds=st.floats(0.001, 5.0))
def test_time_elapsed_never_early(seconds):
    f = _fsm([Transition(TimeElapsed(seconds), "B")])
    ticks = 0
    while f.fsm_step([], {}) is None:
        ticks += 1
    ticks += 1
    assert ticks >= math.ceil(seconds / DT - 1e-9)
    assert ticks <= math.ceil(seconds / DT) + 1


def test_entry_actions_once_per_entry():
    states = [
        {"name": "A", "tasks": ["post"], "on_entry": [{"say": "a"}, {"led": [0, 1, 0]}], "transitions": [{"trigger": {"type": "time_elapsed", "seconds": 0.024}, "next": "B"}]},
        {"name": "B", "tasks": ["post"], "on_entry": [{"say": "b"}], "transitions": [{"trigger": {"type": "time_elapsed", "seconds": 0.012}, "next": "A"}]},
    ]
    c, _ = _controller(_pepper_scenario(states))
    for _ in range(30):
        c.tick()
        c.observe()
    said = [cmd.payload.text for _, cmd in c.device_log if isinstance(cmd.payload, Say)]
    assert said.count("a") == c.fsm.entries["A"]
    assert said.count("b") == c.fsm.entries["B"]
    assert c.fsm.entries["A"] >= 5


def test_gripper_delta_and_set():
    states = [
        {"name": "A", "tasks": ["post"], "on_entry": [{"gripper": "LGripper", "delta": 0.3}, {"gripper": "RGripper", "set": 1.0}]},
    ]
    sc = _pepper_scenario(states, grippers={"pepper": {"RGripper": "initial", "LGripper": "initial"}})
    c, w = _controller(sc)
    out = c.tick()
    assert out.joint_positions["LGripper"] == pytest.approx(0.3)
    assert out.joint_positions["RGripper"] == pytest.approx(1.0)


def test_undefined_task_rejected():
    with pytest.raises(ScenarioError):
        _pepper_scenario([{"name": "A", "tasks": ["nope"]}])


def test_all_bundled_scenarios_parse():
    for name in ("posture_demo", "ee_reach", "navigate_to_human", "medication_handover"):
        sc = load_scenario(name)
        assert sc.terminal_states and sc.config.dt == DT


# --- observed robots


def _observed_world(pepper, human):
    return WorldState([RobotState("pepper", pepper), RobotState("human", human, role="observed")])


def _pose_msg(tick, q):
    return HumanPose(tick, "human", {"position": tuple(q[:3]), "quaternion": tuple(q[3:7])}, {})


def test_fresh_message_resets_staleness(pepper, human, rng):
    w = _observed_world(pepper, human)
    assert w.robot("human").staleness is None
    q = random_configuration(human, rng)
    update_observed(w, _pose_msg(1, q))
    assert w.robot("human").staleness == 0
    assert np.allclose(w.robot("human").q[:7], q[:7])
    for _ in range(5):
        w.age_observations()
    assert w.robot("human").staleness == 5


def test_unknown_or_controlled_robot(pepper, human):
    w = _observed_world(pepper, human)
    with pytest.raises(UnknownRobot):
        update_observed(w, HumanPose(1, "ghost", {"position": (0, 0, 0), "quaternion": (1, 0, 0, 0)}, {}))
    with pytest.raises(UnknownRobot):
        update_observed(w, HumanPose(1, "pepper", {"position": (0, 0, 0), "quaternion": (1, 0, 0, 0)}, {}))


def test_latency_matches_ground_truth(pepper, human):
    """With a static robot, the observed pose is the true pose from L ticks earlier."""
    from tasqp.simrobot import FeedModel, PoseFeed

    feed = PoseFeed(FeedModel(period=1, latency=5, dropout=0.0, sigma_pos=0.0, sigma_rot=0.0), human, "human", seed=0)
    w = _observed_world(pepper, human)
    truth = []
    r = np.random.default_rng(5)
    from tasqp.simrobot import planar_transform

    robot_pose = planar_transform(0.4, -0.3, 0.7)
    for tick in range(40):
        q = random_configuration(human, r)
        truth.append(q)
        msg = feed.step(tick, robot_pose, q)
        if msg is not None:
            update_observed(w, msg)
            got = w.robot("human").q
            ref = truth[tick - 5]
            assert np.allclose(got[:3], ref[:3], atol=1e-12)
            assert np.allclose(abs(got[3:7] @ ref[3:7]), 1.0, atol=1e-12)
            assert np.allclose(got[7:], ref[7:], atol=1e-12)
        else:
            assert tick < 5


def test_consume_ages_and_applies(pepper, human, rng):
    sc = load_scenario("navigate_to_human")
    world = WorldState([RobotState("pepper", pepper), RobotState("human", human, role="observed")])
    c = Controller(sc, world)
    q = random_configuration(human, rng)
    ev = c.consume([_pose_msg(1, q), TouchEvent(1, "LHandTouch", True)])
    assert [e.sensor for e in ev] == ["LHandTouch"]
    assert world.robot("human").staleness == 0
    c.consume([])
    assert world.robot("human").staleness == 1


# --- log


def test_log_blank_inactive_and_roundtrip(tmp_path):
    states = [
        {"name": "A", "tasks": ["post"], "transitions": [{"trigger": {"type": "time_elapsed", "seconds": 0.024}, "next": "B"}]},
        {"name": "B", "tasks": ["post", "com"]},
    ]
    tasks = {"post": {"type": "posture", "robot": "pepper", "target": "initial"}, "com": {"type": "com_relative", "robot": "pepper", "target": "initial"}}
    sc = _pepper_scenario(states, tasks)
    c, w = _controller(sc)
    log = TickLog(sc, w, DT)
    for _ in range(4):
        out = c.tick()
        log.record(out)
        c.observe()
    log.write(tmp_path / "x.csv")
    header, cols = read_log(tmp_path / "x.csv")
    assert header[:4] == ["tick", "time_s", "state", "solver_status"]
    assert list(cols["tick"]) == [1, 2, 3, 4]
    assert list(cols["time_s"]) == [0.012, 0.024, 0.036, 0.048]
    assert cols["state"] == ["A", "B", "B", "B"]
    assert np.isnan(cols["task_err.com.0"][0]) and np.isnan(cols["task_err.com.0"][1])
    assert np.isfinite(cols["task_err.com.0"][2])
    assert header[-4:] == ["base_cmd.vx", "base_cmd.vy", "base_cmd.wz", "d_min"]
