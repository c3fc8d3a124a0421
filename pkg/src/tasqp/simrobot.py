"""Simulated robot server: a fixed-period device loop with first-order
actuators, a velocity-commanded mobile base, scripted touch sensors and a
degraded human-pose perception feed.

``SimRobot`` is the plant; ``SimSession`` speaks the bridge protocol for one
client (used directly by the in-process loopback transport); ``SimServer``
puts a session behind a TCP socket in lockstep or realtime mode.
"""

from __future__ import annotations

import json
import math
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DT
from .bridge import (
    Ack,
    BaseCommand,
    BridgeError,
    DeviceCommand,
    FrameReader,
    HumanPose,
    JointCommand,
    MotorsOff,
    MotorsOn,
    SensorSnapshot,
    SessionState,
    TouchEvent,
    decode,
    encode,
)
from .model import compile as compile_model, configuration_from, load_description
from .spatial import FrameTransform, matrix_to_quat, quat_to_matrix, rot_z, wrap_angle

GRAVITY = 9.81


class BindError(OSError):
    pass


@dataclass(frozen=True)
class ActuatorModel:
    tau: float = 0.06  # s
    current_gain: float = 1.0  # A per rad of tracking error

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("actuator time constant must be positive")

    def step(self, q_act, q_cmd, dt):
        return q_act + (q_cmd - q_act) * (1.0 - math.exp(-dt / self.tau))

    def current(self, q_act, q_cmd):
        return self.current_gain * np.abs(q_cmd - q_act)


@dataclass(frozen=True)
class FeedModel:
    period: int = 8  # ticks
    latency: int = 5  # ticks
    dropout: float = 0.3
    sigma_pos: float = 0.02  # m
    sigma_rot: float = 0.02  # rad

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("feed period must be at least one tick")
        if self.latency < 0:
            raise ValueError("feed latency must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout probability must lie in [0, 1]")
        if self.sigma_pos < 0 or self.sigma_rot < 0:
            raise ValueError("noise levels must be non-negative")

    @classmethod
    def parse(cls, text):
        """From ``period=8,latency=5,dropout=0.3``."""
        kw = {}
        for part in filter(None, text.split(",")):
            k, _, v = part.partition("=")
            k = k.strip()
            kw[k] = int(v) if k in ("period", "latency") else float(v)
        return cls(**kw)


@dataclass(frozen=True)
class TouchScriptEvent:
    tick: int
    sensor: str
    pressed: bool = True


def touch_script(events, model=None):
    """Validate a touch script (list of dicts or events)."""
    out = [e if isinstance(e, TouchScriptEvent) else TouchScriptEvent(int(e["tick"]), e["sensor"], bool(e.get("pressed", True))) for e in events]
    for a, b in zip(out, out[1:]):
        if b.tick < a.tick:
            raise ValueError("touch script ticks must be non-decreasing")
    if model is not None:
        names = {d.name for d in model.devices if d.kind in ("touch", "bumper")}
        for e in out:
            if e.sensor not in names:
                raise ValueError(f"{model.name} has no touch sensor {e.sensor!r}")
    return out


def load_touch_script(path, model=None):
    return touch_script(json.loads(Path(path).read_text()), model)


def planar_transform(x, y, yaw):
    return FrameTransform(rot_z(yaw), np.array([x, y, 0.0]))


class PoseFeed:
    """Human-pose perception: every ``period`` ticks, with probability
    ``1 - dropout``, report the pose seen ``latency`` ticks ago.

    Perception is robot-relative, so a delayed detection is re-anchored on the
    robot's current pose: ``T_r(now) T_r(then)^-1 T_h(then)``.  Noise perturbs
    the reported position in the ground plane and the heading.
    """

    def __init__(self, model: FeedModel, human_model, robot_name="human", seed=0):
        self.model = model
        self.human = human_model
        self.robot_name = robot_name
        self.rng = np.random.default_rng(seed)
        self.history = deque(maxlen=model.latency + 1)

    def step(self, tick, robot_pose, human_q):
        """``robot_pose`` is a FrameTransform, ``human_q`` the ground-truth configuration."""
        self.history.append((robot_pose, np.array(human_q, dtype=float)))
        m = self.model
        if tick % m.period:
            return None
        if self.rng.random() < m.dropout:
            return None
        if len(self.history) <= m.latency:
            return None
        r_then, hq = self.history[0]
        T_h = FrameTransform.from_quaternion(hq[3:7], hq[0:3])
        T = robot_pose @ r_then.inverse() @ T_h
        pos = T.translation.copy()
        R = T.rotation
        if m.sigma_pos > 0:
            pos[0:2] += self.rng.normal(0.0, m.sigma_pos, 2)
        if m.sigma_rot > 0:
            R = rot_z(self.rng.normal(0.0, m.sigma_rot)) @ R
        off = self.human.nq - self.human.njoints
        joints = {j.name: float(hq[off + i]) for i, j in enumerate(self.human.joints)}
        quat = matrix_to_quat(R)
        return HumanPose(tick, self.robot_name, {"position": pos.tolist(), "quaternion": quat.tolist()}, joints)


def pose_feed_step(feed: PoseFeed, tick, robot_pose, human_q):
    return feed.step(tick, robot_pose, human_q)


@dataclass
class SimConfig:
    robot: str = "pepper_lite"
    human: str | None = "human_lite"
    human_name: str = "human"
    base: tuple = (0.0, 0.0, 0.0)
    joints: dict = field(default_factory=dict)
    human_pose: dict = field(default_factory=lambda: {"position": [2.0, 0.0, 0.5], "yaw": math.pi})
    touch_script: list = field(default_factory=list)
    feed: FeedModel = field(default_factory=FeedModel)
    actuator: ActuatorModel = field(default_factory=ActuatorModel)
    seed: int = 0
    dt: float = DT

    @classmethod
    def from_dict(cls, d, seed=None, resolve=lambda x: x):
        d = dict(d)
        cfg = cls(
            robot=resolve(d.get("robot", "pepper_lite")),
            human=resolve(d["human"]) if d.get("human") else None,
            human_name=d.get("human_name", "human"),
            base=tuple(d.get("base", (0.0, 0.0, 0.0))),
            joints=dict(d.get("joints", {})),
            human_pose=dict(d.get("human_pose", {"position": [2.0, 0.0, 0.5], "yaw": math.pi})),
            touch_script=list(d.get("touch_script", [])),
            feed=FeedModel(**d.get("feed", {})),
            actuator=ActuatorModel(**d.get("actuator", {})),
            seed=int(d.get("seed", 0) if seed is None else seed),
            dt=float(d.get("dt", DT)),
        )
        return cfg


class SimRobot:
    """Plant state plus journals.  ``tick`` counts executed cycles."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.dt = cfg.dt
        self.model = compile_model(load_description(cfg.robot))
        m = self.model
        if m.base_kind not in ("planar", "fixed"):
            raise ValueError("the simulated robot needs a planar or fixed base")
        q0 = configuration_from(m, list(cfg.base) if m.base_kind == "planar" else None, cfg.joints)
        off = m.nq - m.njoints
        self.q_act = q0[off:].copy()
        self.q_cmd = self.q_act.copy()
        self.base = np.array(q0[:3] if m.base_kind == "planar" else [0.0, 0.0, 0.0])
        self.base_vel = np.zeros(3)
        self.base_acc = np.zeros(3)
        self.base_cmd = np.zeros(3)
        self.tick = 0
        self.session = SessionState(connected=False)
        self.touch_sensors = [d.name for d in m.devices if d.kind in ("touch", "bumper")]
        self.touch = {n: False for n in self.touch_sensors}
        self.script = touch_script(cfg.touch_script, m)
        self._script_i = 0
        self.human_model = None
        self.human_q = None
        self.feed = None
        if cfg.human:
            self.human_model = compile_model(load_description(cfg.human))
            hp = cfg.human_pose
            base = {"position": hp.get("position", [0, 0, 0])}
            if "quaternion" in hp:
                base["quaternion"] = hp["quaternion"]
            else:
                base["rpy"] = [0.0, 0.0, hp.get("yaw", 0.0)]
            self.human_q = configuration_from(self.human_model, base, hp.get("joints", {}))
            self.feed = PoseFeed(cfg.feed, self.human_model, cfg.human_name, cfg.seed)
        self.device_journal = []  # "tick,device,payload"
        self.actuator_journal = []  # (tick, what, status)
        self.lifecycle_journal = []  # (tick, event, motors, reflexes)

    # --- lifecycle

    def set_motors(self, on: bool, reason=""):
        self.session.motors = "on" if on else "off"
        self.session.safety_reflexes = "disabled" if on else "enabled"
        self.session.check()
        self.lifecycle_journal.append((self.tick, reason or ("motors_on" if on else "motors_off"), self.session.motors, self.session.safety_reflexes))
        if not on:
            self.base_cmd[:] = 0.0

    @property
    def motors_on(self):
        return self.session.motors == "on"

    # --- sensing

    def robot_pose(self):
        return planar_transform(*self.base)

    def snapshot(self) -> SensorSnapshot:
        m = self.model
        names = m.joint_names
        yaw = self.base[2]
        quat = matrix_to_quat(rot_z(yaw))
        Rt = rot_z(yaw).T
        linacc = Rt @ np.array([self.base_acc[0], self.base_acc[1], 0.0]) + np.array([0.0, 0.0, GRAVITY])
        cur = self.cfg.actuator.current(self.q_act, self.q_cmd)
        return SensorSnapshot(
            self.tick,
            {n: float(self.q_act[i]) for i, n in enumerate(names)},
            {"orientation": quat.tolist(), "angvel": [0.0, 0.0, float(self.base_vel[2])], "linacc": linacc.tolist()},
            {},
            {n: float(cur[i]) for i, n in enumerate(names)},
            dict(self.touch),
            {"x": float(self.base[0]), "y": float(self.base[1]), "yaw": float(self.base[2])},
        )

    # --- one device cycle

    def apply(self, msg, tick):
        """Take one inbox message into the plant's command state."""
        m = self.model
        if isinstance(msg, DeviceCommand):
            payload = json.dumps(msg.payload.to_dict(), separators=(",", ":"), ensure_ascii=False)
            self.device_journal.append(f"{tick},{msg.device},{payload}")
            return
        if isinstance(msg, JointCommand):
            unknown = [n for n in msg.positions if n not in m.joint_index]
            if unknown:
                self.actuator_journal.append((tick, "joint_command", f"malformed:{','.join(unknown)}"))
                return
            if not self.motors_on:
                self.actuator_journal.append((tick, "joint_command", "ignored"))
                return
            for n, val in msg.positions.items():
                j = m.joint_index[n]
                self.q_cmd[j] = min(max(val, m.pos_min[j]), m.pos_max[j])
            self.actuator_journal.append((tick, "joint_command", "applied"))
            return
        if isinstance(msg, BaseCommand):
            if not self.motors_on or m.base_kind != "planar":
                self.actuator_journal.append((tick, "base_command", "ignored"))
                return
            self.base_cmd[:] = [msg.vx, msg.vy, msg.wz]
            self.actuator_journal.append((tick, "base_command", "applied"))
            return
        self.actuator_journal.append((tick, type(msg).__name__, "skipped"))

    def cycle(self, inbox=()):
        """Advance one period; returns the outbox (snapshot first)."""
        self.tick += 1
        k = self.tick
        for msg in inbox:
            self.apply(msg, k)
        m = self.model
        dt = self.dt
        if self.motors_on:
            self.q_act = self.cfg.actuator.step(self.q_act, self.q_cmd, dt)
        if m.base_kind == "planar":
            target = self.base_cmd if self.motors_on else np.zeros(3)
            target = np.clip(target, -m.base_v_max, m.base_v_max)
            dv = np.clip(target - self.base_vel, -m.base_a_max * dt, m.base_a_max * dt)
            self.base_acc = dv / dt
            self.base_vel = self.base_vel + dv
            self.base = self.base + self.base_vel * dt
            self.base[2] = wrap_angle(self.base[2])
        out = []
        events = []
        while self._script_i < len(self.script) and self.script[self._script_i].tick <= k:
            e = self.script[self._script_i]
            self._script_i += 1
            if e.tick < k:
                continue  # scheduled before the server started
            self.touch[e.sensor] = e.pressed
            events.append(TouchEvent(k, e.sensor, e.pressed))
        out.append(self.snapshot())
        out += events
        if self.feed is not None:
            hp = self.feed.step(k, self.robot_pose(), self.human_q)
            if hp is not None:
                out.append(hp)
        return out


def dcm_cycle(sim: SimRobot, inbox=()):
    """One device cycle: ``(state', outbox)``."""
    out = sim.cycle(inbox)
    return sim, out


class SimSession:
    """Server side of one bridge session.

    ``feed(bytes)`` consumes frames and returns the reply frames.  In
    lockstep mode each ``JointCommand`` advances the plant by one cycle; in
    realtime mode a timer calls :meth:`timer_cycle` and a ``JointCommand``
    only gets the freshest data back.
    """

    def __init__(self, sim: SimRobot, mode="lockstep"):
        if mode not in ("lockstep", "realtime"):
            raise ValueError(f"unknown mode {mode!r}")
        self.sim = sim
        self.mode = mode
        self.reader = FrameReader()
        self.inbox = []
        self.pending = []  # realtime: messages produced since the last reply
        self.last_sent_tick = -1
        self.lock = threading.Lock()
        self.malformed = []
        sim.session.connected = True

    def feed(self, data):
        with self.lock:
            try:
                frames = self.reader.feed(data)
            except BridgeError as exc:
                self.malformed.append((self.sim.tick, str(exc)))
                self.reader = FrameReader()
                return []
            out = []
            for fr in frames:
                try:
                    msg = decode(fr)
                except BridgeError as exc:
                    self.malformed.append((self.sim.tick, str(exc)))
                    self.sim.actuator_journal.append((self.sim.tick, "frame", "malformed"))
                    continue
                out += [encode(r) for r in self.handle(msg)]
            return out

    def handle(self, msg):
        sim = self.sim
        if isinstance(msg, MotorsOn):
            if sim.motors_on:
                return [Ack("motors_on", False, "already on")]
            sim.set_motors(True)
            return [Ack("motors_on", True, "safety_reflexes:disabled"), self._mark(sim.snapshot())]
        if isinstance(msg, MotorsOff):
            if sim.motors_on:
                sim.set_motors(False)
            return [Ack("motors_off", True, "safety_reflexes:enabled")]
        if isinstance(msg, (DeviceCommand, BaseCommand)):
            self.inbox.append(msg)
            return []
        if isinstance(msg, JointCommand):
            self.inbox.append(msg)
            if self.mode == "lockstep":
                inbox, self.inbox = self.inbox, []
                out = sim.cycle(inbox)
                self._mark(out[0])
            else:
                out, self.pending = self.pending, []
            return out + [Ack("joint_command", True, "")]
        return [Ack(msg.TYPE, False, "unexpected message")]

    def _mark(self, snap):
        self.last_sent_tick = snap.tick
        return snap

    def timer_cycle(self):
        with self.lock:
            inbox, self.inbox = self.inbox, []
            out = self.sim.cycle(inbox)
            # only the newest snapshot is worth sending
            self.pending = [m for m in self.pending if not isinstance(m, SensorSnapshot)] + out

    def disconnect(self):
        with self.lock:
            if self.sim.motors_on:
                self.sim.set_motors(False, "disconnect")
            self.sim.session.connected = False


class SimServer:
    """TCP front end.  Serves one session at a time, sessions in sequence."""

    def __init__(self, sim: SimRobot, host="127.0.0.1", port=None, mode="lockstep"):
        from .bridge import default_port

        self.sim = sim
        self.mode = mode
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, default_port() if port is None else port))
        except OSError as exc:
            self.sock.close()
            raise BindError(f"cannot bind {host}:{port}: {exc}") from None
        self.sock.listen(1)
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self._stop = threading.Event()
        self.session = None
        self.sessions = 0
        self._threads = []

    def _timer(self):
        period = self.sim.dt
        t0 = time.monotonic()
        n = 0
        while not self._stop.is_set():
            n += 1
            deadline = t0 + n * period
            delay = deadline - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
                if self._stop.is_set():
                    break
            sess = self.session
            if sess is not None:
                sess.timer_cycle()
            else:
                self.sim.cycle(())

    def serve_forever(self):
        if self.mode == "realtime":
            t = threading.Thread(target=self._timer, daemon=True)
            t.start()
            self._threads.append(t)
        while not self._stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            self._serve(conn)
        self.sock.close()

    def _serve(self, conn):
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(0.1)
        self.session = SimSession(self.sim, self.mode)
        self.sessions += 1
        try:
            while not self._stop.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                replies = self.session.feed(data)
                if replies:
                    try:
                        conn.sendall(b"".join(replies))
                    except OSError:
                        break
        finally:
            self.session.disconnect()
            self.session = None
            conn.close()

    def start(self):
        """Serve in a background thread (tests, in-process demos)."""
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def shutdown(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)


def run_server(sim: SimRobot, port=None, mode="lockstep", host="127.0.0.1"):
    server = SimServer(sim, host, port, mode)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return server
