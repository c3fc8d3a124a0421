"""Per-tick control pipeline and FSM engine.

One tick: evaluate the active state's tasks and constraints, assemble and
solve the QP for the stacked accelerations of the controlled robots,
integrate once (velocity, the base command) and twice (joint position
commands), then evaluate transitions and queue entry actions of a newly
entered state.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import DT
from .bridge import DeviceCommand, HumanPose, Led, Say, Tablet, TouchEvent
from .constraints import (
    CollisionPair,
    ContactSpec,
    DamperParams,
    base_bound_rows,
    collision_rows,
    contact_rows,
    joint_limit_rows,
    min_distance,
)
from .model import (
    Kinematics,
    configuration_from,
    configuration_step,
    integrate,
    load_description,
    compile as compile_model,
)
from .qpsolve import ConstraintRows, CostTerm, QpSolution, assemble, solve
from .spatial import FrameTransform, quat_to_matrix
from .tasks import (
    FD_STEP,
    BehindCamera,
    CoMRelativeBodyTask,
    CoMTask,
    EndEffectorTask,
    IbvsTask,
    PbvsTask,
    PostureTask,
    StaleObservation,
    gains_from,
)


REF_DRIFT = 0.25  # rad, largest tolerated gap between command reference and encoders


class UnknownRobot(KeyError):
    pass


class ScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------
# world


class RobotState:
    """Configuration, velocity and bookkeeping for one robot in the world.

    ``staleness`` counts ticks since the last observation of an observed robot
    (``None`` until the first one arrives); it stays 0 for controlled robots.
    """

    def __init__(self, name, model, role="controlled", q=None, v=None):
        if role not in ("controlled", "observed"):
            raise ValueError(f"unknown role {role!r}")
        self.name = name
        self.model = model
        self.role = role
        self.staleness = 0 if role == "controlled" else None
        self.snapshot = None
        self.set(q if q is not None else configuration_from(model), v)

    @property
    def observed(self):
        return self.role == "observed"

    def set(self, q, v=None, q_ref=None):
        """``q_ref`` is the configuration commands are integrated from (defaults to ``q``)."""
        self.q = np.array(q, dtype=float)
        self.v = np.zeros(self.model.nv) if v is None else np.array(v, dtype=float)
        self.q_ref = self.q if q_ref is None else np.array(q_ref, dtype=float)
        self._kin = self._kin_p = self._kin_m = self._kin_r = None

    @property
    def kin_ref(self):
        """Kinematics at ``q_ref`` (the commanded configuration)."""
        if self.q_ref is self.q:
            return self.kin
        if self._kin_r is None:
            self._kin_r = Kinematics(self.model, self.q_ref)
        return self._kin_r

    @property
    def kin(self):
        if self._kin is None:
            self._kin = Kinematics(self.model, self.q)
        return self._kin

    @property
    def kin_plus(self):
        if self._kin_p is None:
            self._kin_p = Kinematics(self.model, configuration_step(self.model, self.q, self.v, FD_STEP))
        return self._kin_p

    @property
    def kin_minus(self):
        if self._kin_m is None:
            self._kin_m = Kinematics(self.model, configuration_step(self.model, self.q, self.v, -FD_STEP))
        return self._kin_m


class WorldState:
    """All robots of a scenario.  Controlled robots own decision-vector columns,
    in insertion order; observed robots own none."""

    def __init__(self, robots=()):
        self.robots = {}
        self.offsets = {}
        self.nx = 0
        for r in robots:
            self.add(r)

    def add(self, rs: RobotState):
        self.robots[rs.name] = rs
        if not rs.observed:
            self.offsets[rs.name] = self.nx
            self.nx += rs.model.nv
        return rs

    def robot(self, name) -> RobotState:
        try:
            return self.robots[name]
        except KeyError:
            raise UnknownRobot(name) from None

    @property
    def controlled(self):
        return [r for r in self.robots.values() if not r.observed]

    @property
    def observed(self):
        return [r for r in self.robots.values() if r.observed]

    def embed(self, name, J):
        J = np.asarray(J, dtype=float)
        rs = self.robot(name)
        out = np.zeros(J.shape[:-1] + (self.nx,))
        if rs.observed:
            return out
        o = self.offsets[name]
        out[..., o:o + rs.model.nv] = J
        return out

    def embed_rows(self, name, rows: ConstraintRows):
        return ConstraintRows(rows.kind, self.embed(name, rows.A), rows.rhs, rows.label if len(self.offsets) == 1 else f"{name}/{rows.label}", rows.row_names, rows.flags)

    def split(self, x):
        return {n: x[o:o + self.robots[n].model.nv] for n, o in self.offsets.items()}

    def age_observations(self):
        for r in self.observed:
            if r.staleness is not None:
                r.staleness += 1


def update_observed(world: WorldState, msg: HumanPose):
    """Replace an observed robot's base pose and joints from a pose-feed message."""
    rs = world.robot(msg.robot)
    if not rs.observed:
        raise UnknownRobot(f"{msg.robot!r} is not an observed robot")
    m = rs.model
    q = rs.q.copy()
    pos = msg.base["position"]
    quat = msg.base["quaternion"]
    if m.base_kind == "floating":
        q[0:3] = pos
        q[3:7] = np.asarray(quat) / np.linalg.norm(quat)
    elif m.base_kind == "planar":
        R = quat_to_matrix(np.asarray(quat) / np.linalg.norm(quat))
        q[0:3] = [pos[0], pos[1], math.atan2(R[1, 0], R[0, 0])]
    off = m.nq - m.njoints
    for name, val in msg.joints.items():
        if name not in m.joint_index:
            raise UnknownRobot(f"{m.name}: unknown joint {name!r} in pose message")
        q[off + m.joint_index[name]] = val
    rs.set(q)
    rs.staleness = 0
    return world


def state_from_snapshot(model, snap):
    """Configuration of a controlled robot from a sensor snapshot."""
    q = configuration_from(model)
    if model.base_kind == "planar":
        q[0:3] = [snap.base_odom["x"], snap.base_odom["y"], snap.base_odom["yaw"]]
    off = model.nq - model.njoints
    for name, val in snap.encoders.items():
        q[off + model.joint_index[name]] = val
    return q


# --------------------------------------------------------------------------
# FSM


@dataclass(frozen=True)
class TaskConverged:
    task: str
    eps_err: float
    eps_rate: float

    def __post_init__(self):
        if not (self.eps_err > 0 and self.eps_rate > 0):
            raise ValueError("convergence thresholds must be positive")

    def fires(self, ctx):
        d = ctx["tasks"].get(self.task)
        return d is not None and d[0] < self.eps_err and d[1] < self.eps_rate


@dataclass(frozen=True)
class TimeElapsed:
    seconds: float

    def fires(self, ctx):
        return ctx["ticks_in_state"] >= math.ceil(self.seconds / ctx["dt"] - 1e-9)


@dataclass(frozen=True)
class TouchTrigger:
    sensor: str
    pressed: bool = True

    def fires(self, ctx):
        return any(isinstance(e, TouchEvent) and e.sensor == self.sensor and e.pressed == self.pressed for e in ctx["events"])


@dataclass(frozen=True)
class ObservationLost:
    robot: str
    budget: int

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("observation budget must be at least one tick")

    def fires(self, ctx):
        s = ctx["staleness"].get(self.robot)
        return s is None or s >= self.budget


@dataclass(frozen=True)
class Transition:
    trigger: object
    next: str


@dataclass
class FsmState:
    name: str
    tasks: list = field(default_factory=list)
    constraints: tuple = ("joint_limits", "base_bounds", "contacts", "collisions")
    on_entry: list = field(default_factory=list)
    transitions: list = field(default_factory=list)


class Fsm:
    def __init__(self, states, initial, terminal=(), dt=DT):
        names = [s.name for s in states]
        if len(set(names)) != len(names):
            raise ScenarioError("FSM state names must be unique")
        self.states = {s.name: s for s in states}
        for s in states:
            for t in s.transitions:
                if t.next not in self.states:
                    raise ScenarioError(f"state {s.name!r}: transition to unknown state {t.next!r}")
        if initial not in self.states:
            raise ScenarioError(f"unknown initial state {initial!r}")
        self.initial = initial
        self.terminal = set(terminal)
        self.dt = dt
        self.current = initial
        self.ticks_in_state = 0
        self.entries = {initial: 1}

    @property
    def state(self) -> FsmState:
        return self.states[self.current]

    @property
    def done(self):
        return self.current in self.terminal

    def fsm_step(self, events, diagnostics, staleness=None):
        """Fire the first matching transition of the current state, if any.

        ``diagnostics["tasks"]`` maps task name to ``(|e|, |e_dot|)``.
        Returns the new state name or ``None``.
        """
        self.ticks_in_state += 1
        ctx = {
            "events": events,
            "tasks": diagnostics.get("tasks", {}),
            "ticks_in_state": self.ticks_in_state,
            "dt": self.dt,
            "staleness": staleness or {},
        }
        for tr in self.state.transitions:
            if tr.trigger.fires(ctx):
                self.current = tr.next
                self.ticks_in_state = 0
                self.entries[tr.next] = self.entries.get(tr.next, 0) + 1
                return tr.next
        return None


def trigger_from(spec):
    kind = spec.get("type")
    if kind == "task_converged":
        return TaskConverged(spec["task"], spec.get("eps_err", 0.01), spec.get("eps_rate", 0.01))
    if kind == "time_elapsed":
        return TimeElapsed(spec["seconds"])
    if kind == "touch":
        return TouchTrigger(spec["sensor"], spec.get("pressed", True))
    if kind == "observation_lost":
        return ObservationLost(spec["robot"], spec["budget"])
    raise ScenarioError(f"unknown trigger type {kind!r}")


# --------------------------------------------------------------------------
# scenario


@dataclass
class ControllerConfig:
    dt: float = DT
    feedback: str = "closed_loop"  # or open_loop
    reg: float = 1e-6
    damping_weight: float = 1e-3
    damping_kd: float = 5.0
    qp_tol: float = 1e-8


@dataclass
class Scenario:
    name: str
    robots: list
    tasks: dict
    states: list
    initial_state: str
    terminal_states: list
    config: ControllerConfig
    damper: DamperParams
    contacts: list
    collision_pairs: list
    grippers: dict
    simulation: dict
    tick_budget: int = 5000
    source: Path | None = None

    @property
    def controlled_robot(self):
        return next(r for r in self.robots if r["role"] == "controlled")

    def model(self, robot_name):
        spec = next(r for r in self.robots if r["name"] == robot_name)
        return compile_model(load_description(self.resolve(spec["description"])))

    def resolve(self, ref):
        """Asset names pass through; relative paths are resolved next to the scenario."""
        p = Path(ref)
        if self.source is not None and p.suffix and not p.is_absolute():
            cand = self.source.parent / p
            if cand.exists():
                return cand
        return ref


def scenario_path(name):
    return Path(str(resources.files("tasqp") / "scenarios" / f"{name}.json"))


def load_scenario(name_or_path) -> Scenario:
    p = Path(name_or_path)
    if not p.exists() and not p.suffix:
        p = scenario_path(str(name_or_path))
    return parse_scenario(json.loads(p.read_text()), source=p)


def parse_scenario(doc, source=None) -> Scenario:
    try:
        cfg = ControllerConfig(**doc.get("controller", {}))
        if cfg.feedback not in ("closed_loop", "open_loop"):
            raise ScenarioError(f"unknown feedback mode {cfg.feedback!r}")
        states = []
        for sd in doc["states"]:
            states.append(
                FsmState(
                    sd["name"],
                    list(sd.get("tasks", [])),
                    tuple(sd.get("constraints", FsmState.constraints)),
                    list(sd.get("on_entry", [])),
                    [Transition(trigger_from(t["trigger"]), t["next"]) for t in sd.get("transitions", [])],
                )
            )
        tasks = dict(doc.get("tasks", {}))
        for s in states:
            for t in s.tasks:
                if t not in tasks:
                    raise ScenarioError(f"state {s.name!r} uses undefined task {t!r}")
        return Scenario(
            name=doc["name"],
            robots=list(doc["robots"]),
            tasks=tasks,
            states=states,
            initial_state=doc.get("initial_state", states[0].name),
            terminal_states=list(doc.get("terminal_states", [])),
            config=cfg,
            damper=DamperParams(**doc.get("damper", {})),
            contacts=[ContactSpec(c["robot"], c["surface"], c.get("mode", "planar")) for c in doc.get("contacts", [])],
            collision_pairs=[CollisionPair.parse(p) for p in doc.get("collision_pairs", [])],
            grippers=dict(doc.get("grippers", {})),
            simulation=dict(doc.get("simulation", {})),
            tick_budget=int(doc.get("tick_budget", 5000)),
            source=Path(source) if source is not None else None,
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing field {exc}") from None


def _transform(spec):
    return FrameTransform.from_rpy(spec.get("rpy", [0.0, 0.0, 0.0]), spec.get("translation", [0.0, 0.0, 0.0]))


def build_task(name, spec, world: WorldState):
    """Instantiate a task; ``"initial"`` targets are read from the current world."""
    kind = spec["type"]
    robot = spec.get("robot") or world.controlled[0].name
    rs = world.robot(robot)
    m = rs.model
    gains = gains_from(spec.get("gains"), kind)
    if kind == "posture":
        joints = spec.get("joints") or list(m.joint_names)
        off = m.nq - m.njoints
        current = {j: rs.q[off + m.joint_index[j]] for j in joints}
        tgt = spec.get("target", "initial")
        if isinstance(tgt, dict):
            current.update(tgt)
        return PostureTask(name, robot, m, [current[j] for j in joints], joints, gains)
    if kind == "com":
        tgt = spec.get("target", "initial")
        return CoMTask(name, robot, rs.kin.com() if tgt == "initial" else tgt, gains)
    if kind == "com_relative":
        tgt = spec.get("target", "initial")
        if tgt == "initial":
            c = rs.kin.com()
            tgt = rs.kin.R[0].T @ (c - rs.kin.p[0])
        return CoMRelativeBodyTask(name, robot, m, tgt, gains)
    if kind == "end_effector":
        return EndEffectorTask(name, robot, spec["frame"], _transform(spec["target"]), gains, model=m)
    if kind == "pbvs":
        a = spec["anchor"]
        return PbvsTask(name, robot, spec["frame"], a["robot"], a["frame"], _transform(spec.get("offset", {})), gains, spec.get("staleness_budget", 250), model=m)
    if kind == "ibvs":
        pt = spec["point"]
        point = (pt["robot"], pt["frame"]) if isinstance(pt, dict) else pt
        return IbvsTask(name, robot, spec["camera"], point, gains, spec.get("staleness_budget", 250), model=m)
    raise ScenarioError(f"unknown task type {kind!r}")


def task_dim(spec, model):
    return {
        "posture": len(spec.get("joints") or model.joint_names),
        "com": 3,
        "com_relative": 3,
        "end_effector": 6,
        "pbvs": 6,
        "ibvs": 2,
    }[spec["type"]]


# --------------------------------------------------------------------------
# tick


@dataclass
class TickOutput:
    tick: int
    state: str
    joint_positions: dict
    base_velocity: list
    device_commands: list
    diagnostics: dict
    q: np.ndarray | None = None
    v: np.ndarray | None = None


class Controller:
    """FSM controller over a :class:`WorldState`.

    Call :meth:`start` once the first sensor snapshot has been folded into the
    world (tasks with ``"initial"`` targets read it), then :meth:`tick` once per
    control period.
    """

    def __init__(self, scenario: Scenario, world: WorldState):
        self.scenario = scenario
        self.world = world
        self.cfg = scenario.config
        self.dt = self.cfg.dt
        self.fsm = Fsm(scenario.states, scenario.initial_state, scenario.terminal_states, self.dt)
        self.tasks = {}
        self.gripper_targets = {}
        self.tick_count = 0
        self._pending_entry = True
        self.device_log = []
        self.force_hold = False

    # --- setup

    def start(self):
        for name, spec in self.scenario.tasks.items():
            self.tasks[name] = build_task(name, spec, self.world)
        for robot, grips in self.scenario.grippers.items():
            rs = self.world.robot(robot)
            off = rs.model.nq - rs.model.njoints
            for j, val in grips.items():
                cur = rs.q[off + rs.model.joint_index[j]]
                self.gripper_targets[(robot, j)] = float(cur if val == "initial" else val)
        return self

    # --- pieces of the pipeline

    def _entry_actions(self, state: FsmState):
        cmds = []
        rs0 = self.world.controlled[0]
        for act in state.on_entry:
            if "gripper" in act:
                robot = act.get("robot", rs0.name)
                key = (robot, act["gripper"])
                m = self.world.robot(robot).model
                j = m.joint_index[act["gripper"]]
                base = self.gripper_targets.get(key, 0.0)
                val = base + act["delta"] if "delta" in act else act["set"]
                self.gripper_targets[key] = float(np.clip(val, m.pos_min[j], m.pos_max[j]))
                continue
            if "say" in act:
                kind, payload = "speaker", Say(act["say"])
            elif "tablet" in act:
                kind, payload = "tablet", Tablet(act["tablet"])
            elif "led" in act:
                kind, payload = "led", Led(*map(float, act["led"]))
            else:
                raise ScenarioError(f"unknown entry action {act!r}")
            device = act.get("device")
            if device is None:
                devs = rs0.model.devices_of_kind(kind)
                if not devs:
                    raise ScenarioError(f"{rs0.model.name} has no {kind} device")
                device = devs[0].name
            cmds.append(DeviceCommand(device, payload))
        return cmds

    def _damping_terms(self):
        if self.cfg.damping_weight <= 0:
            return []
        out = []
        for rs in self.world.controlled:
            J = np.eye(rs.model.nv)
            out.append(CostTerm(self.world.embed(rs.name, J), -self.cfg.damping_kd * rs.v, self.cfg.damping_weight, f"{rs.name}/damping"))
        return out

    def _rows(self, state: FsmState):
        rows = []
        w, dt = self.world, self.dt
        cons = set(state.constraints)
        for rs in w.controlled:
            m = rs.model
            if "joint_limits" in cons and m.njoints:
                rows.append(w.embed_rows(rs.name, joint_limit_rows(m, rs.q_ref, rs.v, dt)))
            if "base_bounds" in cons and m.base_kind == "planar":
                rows.append(w.embed_rows(rs.name, base_bound_rows(m, rs.v, dt)))
            pins = [(j, g) for (r, g), _ in self.gripper_targets.items() if r == rs.name for j in [m.joint_index[g]]]
            if pins:
                A = np.zeros((len(pins), m.nv))
                rhs = np.zeros(len(pins))
                for k, (j, _) in enumerate(pins):
                    A[k, m.base_dof + j] = 1.0
                    rhs[k] = -rs.v[m.base_dof + j] / dt
                rows.append(w.embed_rows(rs.name, ConstraintRows("eq", A, rhs, "grippers", [g for _, g in pins])))
        if "contacts" in cons:
            for c in self.scenario.contacts:
                rs = w.robot(c.robot)
                bias = None
                if np.any(rs.v):
                    Jp = rs.kin_plus.frame_jacobian(c.surface)
                    Jm = rs.kin_minus.frame_jacobian(c.surface)
                    bias = (Jp - Jm) @ rs.v / (2.0 * FD_STEP)
                else:
                    bias = np.zeros(6)
                rows.append(w.embed_rows(rs.name, contact_rows(rs.model, rs.q, rs.v, c, kin=rs.kin, bias=bias)))
        if "collisions" in cons and self.scenario.collision_pairs:
            # damp both the commanded configuration and the (lagging) measured one
            rows.append(collision_rows(w, self.scenario.collision_pairs, self.scenario.damper, dt, at_ref=True))
            rows.append(collision_rows(w, self.scenario.collision_pairs, self.scenario.damper, dt))
        return rows

    # --- the tick

    def tick(self, events=()) -> TickOutput:
        t0 = time.perf_counter()
        self.tick_count += 1
        w, dt = self.world, self.dt
        state = self.fsm.state
        device_cmds = []
        if self._pending_entry:
            device_cmds += self._entry_actions(state)
            self._pending_entry = False

        terms, task_diag, task_err, skipped = [], {}, {}, {}
        for tname in state.tasks:
            task = self.tasks[tname]
            try:
                st = task.evaluate(w)
            except (StaleObservation, BehindCamera) as exc:
                skipped[tname] = str(exc)
                continue
            terms.append(task.cost(w, st))
            task_err[tname] = st.error
            task_diag[tname] = (float(np.linalg.norm(st.error)), float(np.linalg.norm(st.error_rate)))
        terms += self._damping_terms()
        rows = self._rows(state)
        t1 = time.perf_counter()
        prob = assemble(terms, rows, self.cfg.reg, w.nx)
        if self.force_hold:
            sol = QpSolution(np.zeros(w.nx), "hold", float("nan"), [])
            self.force_hold = False
        else:
            sol = solve(prob, tol=self.cfg.qp_tol)
        t2 = time.perf_counter()

        q_des, v_des = {}, {}
        if sol.ok:
            acc = w.split(sol.x)
            for rs in w.controlled:
                q_des[rs.name], v_des[rs.name] = integrate(rs.model, rs.q_ref, rs.v, acc[rs.name], dt)
        else:
            # hold: stay at the measured configuration, stop the base
            for rs in w.controlled:
                q_des[rs.name], v_des[rs.name] = rs.q.copy(), np.zeros(rs.model.nv)

        diagnostics = {
            "solver_status": sol.status,
            "kkt_residual": sol.kkt_residual,
            "active_set": sol.active_set,
            "tasks": task_diag,
            "task_errors": task_err,
            "skipped": skipped,
            "d_min": min_distance(w, self.scenario.collision_pairs) if self.scenario.collision_pairs else None,
        }
        ran_state = state.name
        staleness = {r.name: r.staleness for r in w.observed}
        new = self.fsm.fsm_step(list(events), diagnostics, staleness)
        if new is not None:
            device_cmds += self._entry_actions(self.fsm.state)

        rs0 = w.controlled[0]
        m0 = rs0.model
        off = m0.nq - m0.njoints
        qd = q_des[rs0.name]
        joints = {j.name: float(qd[off + i]) for i, j in enumerate(m0.joints)}
        for (robot, g), val in self.gripper_targets.items():
            if robot == rs0.name:
                joints[g] = val
                qd[off + m0.joint_index[g]] = val
        base = [float(x) for x in v_des[rs0.name][:3]] if m0.base_kind == "planar" else [0.0, 0.0, 0.0]
        diagnostics["timing"] = {"tasks": t1 - t0, "qp": t2 - t1, "total": time.perf_counter() - t0}
        diagnostics["ran_state"] = ran_state
        self.device_log += [(self.tick_count, c) for c in device_cmds]
        self._q_des, self._v_des = q_des, v_des
        return TickOutput(self.tick_count, self.fsm.current, joints, base, device_cmds, diagnostics, rs0.q.copy(), v_des[rs0.name].copy())

    def observe(self, snapshots=None):
        """Fold the tick's result back into the world.

        Closed loop: q from encoders and odometry, v from the last commanded
        velocity; joint commands keep integrating from the last command
        (``q_ref``) so actuator lag does not shrink every step, unless the
        encoders have drifted more than ``REF_DRIFT`` away from it.  Open loop:
        everything from the last command.
        """
        for rs in self.world.controlled:
            v = self._v_des[rs.name]
            q_cmd = self._q_des[rs.name]
            if self.cfg.feedback == "closed_loop" and snapshots and rs.name in snapshots:
                q = state_from_snapshot(rs.model, snapshots[rs.name])
                q_ref = q_cmd.copy()
                q_ref[: rs.model.nq - rs.model.njoints] = q[: rs.model.nq - rs.model.njoints]
                if np.max(np.abs(q_ref - q), initial=0.0) > REF_DRIFT:
                    q_ref = q
                rs.set(q, v, q_ref)
                rs.snapshot = snapshots[rs.name]
            else:
                rs.set(q_cmd, v)

    def consume(self, messages):
        """Apply inbox messages at tick start; returns the FSM events."""
        self.world.age_observations()
        events = []
        for msg in messages:
            if isinstance(msg, HumanPose):
                update_observed(self.world, msg)
            elif isinstance(msg, TouchEvent):
                events.append(msg)
        return events


# --------------------------------------------------------------------------
# CSV log


class TickLog:
    """One CSV row per tick: ``tick, time_s, state, solver_status, q.*, v.*,
    task_err.<task>.<i>, base_cmd.{vx,vy,wz}, d_min``."""

    def __init__(self, scenario: Scenario, world: WorldState, dt=DT):
        rs = world.controlled[0]
        self.model = rs.model
        self.dt = dt
        qn = list(rs.model.dof_names) if rs.model.base_kind != "floating" else [f"q{i}" for i in range(rs.model.nq)]
        self.q_cols = [f"q.{n}" for n in qn]
        self.v_cols = [f"v.{n}" for n in rs.model.dof_names]
        self.task_cols = []
        self.task_dims = {}
        for name, spec in scenario.tasks.items():
            m = world.robot(spec.get("robot") or rs.name).model
            k = task_dim(spec, m)
            self.task_dims[name] = k
            self.task_cols += [f"task_err.{name}.{i}" for i in range(k)]
        self.header = ["tick", "time_s", "state", "solver_status"] + self.q_cols + self.v_cols + self.task_cols + ["base_cmd.vx", "base_cmd.vy", "base_cmd.wz", "d_min"]
        self.rows = []

    def record(self, out: TickOutput):
        errs = out.diagnostics["task_errors"]
        row = [str(out.tick), f"{out.tick * self.dt:.3f}", out.state, out.diagnostics["solver_status"]]
        row += [repr(float(x)) for x in out.q]
        row += [repr(float(x)) for x in out.v]
        for name, k in self.task_dims.items():
            e = errs.get(name)
            row += [""] * k if e is None else [repr(float(x)) for x in e]
        row += [repr(float(x)) for x in out.base_velocity]
        d = out.diagnostics["d_min"]
        row.append("" if d is None else repr(float(d)))
        self.rows.append(row)

    def text(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.header)
        wr.writerows(self.rows)
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.text())


def read_log(path):
    """Return ``(header, columns)`` with numeric columns as float arrays (NaN for blanks)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for i, h in enumerate(header):
        vals = [r[i] for r in body]
        if h in ("state", "solver_status"):
            cols[h] = vals
        else:
            cols[h] = np.array([float(x) if x != "" else np.nan for x in vals])
    return header, cols
