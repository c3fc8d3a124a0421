"""Wire protocol between the controller and the robot server.

Every message is one line of compact JSON terminated by ``\\n``: ``"type"``
first, then the fields in declaration order.  ``decode`` accepts exactly the
byte strings ``encode`` produces (it re-encodes and compares), so any other
input is rejected with :class:`FrameError` or :class:`SchemaError`.

Lockstep exchange for control tick k: the client sends queued
``DeviceCommand``s, ``BaseCommand{k}`` and ``JointCommand{k}``; the server
runs one cycle and answers ``SensorSnapshot{k}``, any ``TouchEvent`` and
``HumanPose`` of that cycle, then ``Ack{of: "joint_command"}``.
"""

from __future__ import annotations

import json
import math
import os
import socket
import time
from collections import deque
from dataclasses import dataclass, field, fields

DEFAULT_PORT = 9559
MAX_FRAME = 1 << 20


def default_port():
    return int(os.environ.get("TASQP_PORT", DEFAULT_PORT))


class BridgeError(RuntimeError):
    pass


class FrameError(BridgeError):
    pass


class SchemaError(BridgeError, ValueError):
    pass


class Nack(BridgeError):
    pass


class Timeout(BridgeError):
    pass


class Desync(BridgeError):
    pass


class ConnectionLost(BridgeError):
    pass


class ConnectError(BridgeError):
    pass


# --------------------------------------------------------------------------
# field validators: each returns the normalized value or raises SchemaError


def _num(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(f"{where}: expected a number")
    x = float(x)
    if not math.isfinite(x):
        raise SchemaError(f"{where}: non-finite number")
    return x


def _tick(x, where):
    if isinstance(x, bool) or not isinstance(x, int) or x < 0:
        raise SchemaError(f"{where}: expected a non-negative integer")
    return x


def _str(x, where):
    if not isinstance(x, str):
        raise SchemaError(f"{where}: expected a string")
    return x


def _bool(x, where):
    if not isinstance(x, bool):
        raise SchemaError(f"{where}: expected a boolean")
    return x


def _vec(n):
    def check(x, where):
        if not isinstance(x, (list, tuple)) or len(x) != n:
            raise SchemaError(f"{where}: expected {n} numbers")
        return tuple(_num(v, where) for v in x)

    return check


def _map(value_check):
    def check(x, where):
        if not isinstance(x, dict):
            raise SchemaError(f"{where}: expected an object")
        return {_str(k, where): value_check(v, f"{where}.{k}") for k, v in x.items()}

    return check


def _record(spec):
    """Fixed-key object; keys in ``spec`` order."""

    def check(x, where):
        if not isinstance(x, dict):
            raise SchemaError(f"{where}: expected an object")
        if set(x) != set(spec):
            raise SchemaError(f"{where}: expected keys {sorted(spec)}, got {sorted(x)}")
        return {k: spec[k](x[k], f"{where}.{k}") for k in spec}

    return check


def _unit(x, where):
    x = _num(x, where)
    if not 0.0 <= x <= 1.0:
        raise SchemaError(f"{where}: must lie in [0, 1]")
    return x


# --------------------------------------------------------------------------
# messages


class Message:
    TYPE = ""
    SCHEMA: dict = {}

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, self.SCHEMA[f.name](getattr(self, f.name), f"{self.TYPE}.{f.name}"))

    def to_dict(self):
        out = {"type": self.TYPE}
        for f in fields(self):
            out[f.name] = _plain(getattr(self, f.name))
        return out


def _plain(x):
    if isinstance(x, Message):
        return x.to_dict()
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


@dataclass(frozen=True)
class Say(Message):
    text: str
    TYPE = "say"
    SCHEMA = {"text": _str}


@dataclass(frozen=True)
class Tablet(Message):
    image_id: str
    TYPE = "tablet"
    SCHEMA = {"image_id": _str}


@dataclass(frozen=True)
class Led(Message):
    r: float
    g: float
    b: float
    TYPE = "led"
    SCHEMA = {"r": _unit, "g": _unit, "b": _unit}


PAYLOADS = {c.TYPE: c for c in (Say, Tablet, Led)}


def _payload(x, where):
    if isinstance(x, Message) and x.TYPE in PAYLOADS:
        return x
    if isinstance(x, dict):
        return _from_dict(x, PAYLOADS, where)
    raise SchemaError(f"{where}: expected a device payload")


@dataclass(frozen=True)
class MotorsOn(Message):
    TYPE = "motors_on"


@dataclass(frozen=True)
class MotorsOff(Message):
    TYPE = "motors_off"


@dataclass(frozen=True)
class JointCommand(Message):
    tick: int
    positions: dict
    TYPE = "joint_command"
    SCHEMA = {"tick": _tick, "positions": _map(_num)}


@dataclass(frozen=True)
class BaseCommand(Message):
    tick: int
    vx: float
    vy: float
    wz: float
    TYPE = "base_command"
    SCHEMA = {"tick": _tick, "vx": _num, "vy": _num, "wz": _num}


@dataclass(frozen=True)
class DeviceCommand(Message):
    device: str
    payload: Message
    TYPE = "device_command"
    SCHEMA = {"device": _str, "payload": _payload}


_IMU = _record({"orientation": _vec(4), "angvel": _vec(3), "linacc": _vec(3)})
_ODOM = _record({"x": _num, "y": _num, "yaw": _num})
_POSE = _record({"position": _vec(3), "quaternion": _vec(4)})


@dataclass(frozen=True)
class SensorSnapshot(Message):
    tick: int
    encoders: dict
    imu: dict
    force: dict
    current: dict
    touch: dict
    base_odom: dict
    TYPE = "sensor_snapshot"
    SCHEMA = {
        "tick": _tick,
        "encoders": _map(_num),
        "imu": _IMU,
        "force": _map(_num),
        "current": _map(_num),
        "touch": _map(_bool),
        "base_odom": _ODOM,
    }


@dataclass(frozen=True)
class TouchEvent(Message):
    tick: int
    sensor: str
    pressed: bool
    TYPE = "touch_event"
    SCHEMA = {"tick": _tick, "sensor": _str, "pressed": _bool}


@dataclass(frozen=True)
class HumanPose(Message):
    tick: int
    robot: str
    base: dict
    joints: dict
    TYPE = "human_pose"
    SCHEMA = {"tick": _tick, "robot": _str, "base": _POSE, "joints": _map(_num)}


@dataclass(frozen=True)
class Ack(Message):
    of: str
    ok: bool
    detail: str = ""
    TYPE = "ack"
    SCHEMA = {"of": _str, "ok": _bool, "detail": _str}


MESSAGES = {c.TYPE: c for c in (MotorsOn, MotorsOff, JointCommand, BaseCommand, DeviceCommand, SensorSnapshot, TouchEvent, HumanPose, Ack)}


def _from_dict(d, registry, where="message"):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    kind = d.get("type")
    cls = registry.get(kind) if isinstance(kind, str) else None
    if cls is None:
        raise SchemaError(f"{where}: unknown type {kind!r}")
    names = [f.name for f in fields(cls)]
    extra = set(d) - set(names) - {"type"}
    if extra:
        raise SchemaError(f"{kind}: unknown fields {sorted(extra)}")
    missing = [n for n in names if n not in d]
    if missing:
        raise SchemaError(f"{kind}: missing fields {missing}")
    return cls(**{n: d[n] for n in names})


def encode(msg: Message) -> bytes:
    if not isinstance(msg, Message) or msg.TYPE not in MESSAGES:
        raise SchemaError(f"cannot encode {type(msg).__name__}")
    text = json.dumps(msg.to_dict(), separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    try:
        return text.encode("utf-8") + b"\n"
    except UnicodeEncodeError:
        raise SchemaError("text is not encodable as UTF-8") from None


def decode(data: bytes) -> Message:
    data = bytes(data)
    nl = data.find(b"\n")
    if nl < 0:
        if len(data) > MAX_FRAME:
            raise FrameError("no line terminator within 1 MiB")
        raise FrameError("incomplete frame")
    if nl != len(data) - 1:
        raise FrameError("more than one frame")
    try:
        doc = json.loads(data[:-1].decode("utf-8"), parse_constant=_reject_constant)
        msg = _from_dict(doc, MESSAGES)
    except SchemaError:
        raise
    except (ValueError, RecursionError, TypeError) as exc:
        raise SchemaError(f"malformed frame: {exc}") from None
    if encode(msg) != data:
        raise SchemaError("frame is not in canonical form")
    return msg


def _reject_constant(name):
    raise SchemaError(f"non-finite constant {name}")


class FrameReader:
    """Splits a byte stream into frames; a partial line may not exceed 1 MiB."""

    def __init__(self):
        self.buf = bytearray()

    def feed(self, data):
        self.buf += data
        out = []
        while True:
            nl = self.buf.find(b"\n")
            if nl < 0:
                break
            out.append(bytes(self.buf[: nl + 1]))
            del self.buf[: nl + 1]
        if len(self.buf) > MAX_FRAME:
            raise FrameError("no line terminator within 1 MiB")
        return out


# --------------------------------------------------------------------------
# session


@dataclass
class SessionState:
    connected: bool = False
    motors: str = "off"
    safety_reflexes: str = "enabled"
    last_acked_tick: int | None = None

    def check(self):
        if (self.motors == "on") != (self.safety_reflexes == "disabled"):
            raise AssertionError(f"reflex coupling broken: motors {self.motors}, reflexes {self.safety_reflexes}")
        return self


class SocketConnection:
    def __init__(self, sock):
        self.sock = sock
        self.reader = FrameReader()
        self.frames = deque()

    @classmethod
    def connect(cls, host, port, timeout=5.0):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectError(f"cannot reach {host}:{port}: {exc}") from None
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from None

    def recv(self, timeout):
        deadline = time.monotonic() + timeout
        while not self.frames:
            left = deadline - time.monotonic()
            if left <= 0:
                raise Timeout("no reply within the time budget")
            self.sock.settimeout(left)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise Timeout("no reply within the time budget") from None
            except OSError as exc:
                raise ConnectionLost(str(exc)) from None
            if not chunk:
                raise ConnectionLost("server closed the connection")
            self.frames.extend(self.reader.feed(chunk))
        return self.frames.popleft()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class LoopbackConnection:
    """In-process transport to a server session object exposing
    ``feed(bytes) -> list[bytes]`` and ``disconnect()``; frames still go
    through the codec."""

    def __init__(self, server):
        self.server = server
        self.frames = deque()
        self.closed = False

    def send(self, data):
        if self.closed:
            raise ConnectionLost("loopback closed")
        self.frames.extend(self.server.feed(data))

    def recv(self, timeout):
        if not self.frames:
            raise Timeout("no reply queued")
        return self.frames.popleft()

    def close(self):
        if not self.closed:
            self.closed = True
            self.server.disconnect()


class BridgeClient:
    """Controller side of a session."""

    def __init__(self, conn, timeout=0.5):
        self.conn = conn
        self.timeout = timeout
        self.state = SessionState(connected=True)
        self.snapshot = None
        self.inbox = []

    def _recv(self):
        return decode(self.conn.recv(self.timeout))

    def _await_ack(self, of):
        while True:
            msg = self._recv()
            if isinstance(msg, Ack) and msg.of == of:
                return msg
            self._stash(msg)

    def _stash(self, msg):
        if isinstance(msg, SensorSnapshot):
            if self.snapshot is not None and msg.tick <= self.snapshot.tick:
                raise Desync(f"snapshot tick {msg.tick} after {self.snapshot.tick}")
            self.snapshot = msg
        else:
            self.inbox.append(msg)

    def motors_on(self):
        if self.state.motors == "on":
            raise Nack("already on")
        self.conn.send(encode(MotorsOn()))
        ack = self._await_ack("motors_on")
        if not ack.ok:
            raise Nack(ack.detail)
        if ack.detail != "safety_reflexes:disabled":
            raise BridgeError(f"unexpected motors-on detail {ack.detail!r}")
        self.state.motors, self.state.safety_reflexes = "on", "disabled"
        # the server follows the Ack with the current snapshot
        self._stash(self._recv())
        return self.state.check()

    def motors_off(self):
        self.conn.send(encode(MotorsOff()))
        ack = self._await_ack("motors_off")
        if not ack.ok:
            raise Nack(ack.detail)
        self.state.motors, self.state.safety_reflexes = "off", "enabled"
        return self.state.check()

    def exchange_tick(self, out) -> SensorSnapshot:
        """Send tick ``out.tick``'s commands and return the freshest snapshot."""
        if self.state.motors != "on":
            raise BridgeError("motors are off")
        k = out.tick
        frames = [encode(c) for c in out.device_commands]
        vx, vy, wz = out.base_velocity
        frames.append(encode(BaseCommand(k, vx, vy, wz)))
        frames.append(encode(JointCommand(k, dict(out.joint_positions))))
        self.conn.send(b"".join(frames))
        while True:
            msg = self._recv()
            if isinstance(msg, Ack) and msg.of == "joint_command":
                if not msg.ok:
                    raise Nack(msg.detail)
                break
            self._stash(msg)
        if self.snapshot is None or self.snapshot.tick < k - 2:
            raise Desync(f"tick {k}: freshest snapshot is {None if self.snapshot is None else self.snapshot.tick}")
        self.state.last_acked_tick = k
        return self.snapshot

    def drain(self):
        out, self.inbox = self.inbox, []
        return out

    def close(self):
        self.state.connected = False
        self.state.motors, self.state.safety_reflexes = "off", "enabled"
        self.conn.close()


def session_motors_on(client: BridgeClient) -> SessionState:
    return client.motors_on()


def exchange_tick(client: BridgeClient, out) -> SensorSnapshot:
    return client.exchange_tick(out)
