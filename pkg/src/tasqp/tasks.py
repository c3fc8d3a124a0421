"""Task catalogue.

Each task turns the current world snapshot into a weighted least-squares
block on the stacked accelerations: the desired task acceleration follows a
PD law on the task error, ``b = -kp e - kd e_dot - (dJ/dt) v``.

Tasks talk to the world through a small duck-typed surface:
``world.robot(name)`` returns an object with ``model``, ``q``, ``v``,
``kin`` / ``kin_plus`` / ``kin_minus`` (kinematics at q and at q (+) +-v h),
``observed`` and ``staleness``; ``world.embed(name, J)`` maps a robot-local
Jacobian to the decision-vector columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, UnknownFrame
from .qpsolve import CostTerm
from .spatial import FrameTransform, log_so3, right_jacobian_inv, skew

FD_STEP = 1e-6  # seconds, bias-acceleration differencing step

DEFAULT_KP = {"posture": 10.0, "end_effector": 50.0, "pbvs": 50.0, "ibvs": 25.0, "com": 25.0, "com_relative": 25.0}


class TaskError(RuntimeError):
    pass


class StaleObservation(TaskError):
    pass


class BehindCamera(TaskError):
    pass


class NoMobileBase(ValueError):
    pass


@dataclass
class TaskGains:
    kp: float
    kd: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if not self.kp > 0:
            raise ValueError("kp must be positive")
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        if self.kd is None:
            self.kd = 2.0 * np.sqrt(self.kp)
        if self.kd < 0:
            raise ValueError("kd must be non-negative")


@dataclass
class TaskState:
    error: np.ndarray
    error_rate: np.ndarray
    J: np.ndarray
    bias: np.ndarray


class Task:
    kind = "task"
    uses_bias = True

    def __init__(self, name, robot, gains=None):
        self.name = name
        self.robot = robot
        self.gains = gains if gains is not None else TaskGains(DEFAULT_KP[self.kind])

    def error_jacobian(self, world, kin):
        """Return ``(e, J)`` at the configuration behind ``kin``."""
        raise NotImplementedError

    def prepare(self, world):
        """Hook run once per tick before evaluation (resolve observed targets)."""

    def evaluate(self, world) -> TaskState:
        self.prepare(world)
        rs = world.robot(self.robot)
        e, J = self.error_jacobian(world, rs.kin)
        rate = J @ rs.v
        bias = np.zeros_like(e)
        if self.uses_bias and np.any(rs.v):
            _, Jp = self.error_jacobian(world, rs.kin_plus)
            _, Jm = self.error_jacobian(world, rs.kin_minus)
            bias = (Jp - Jm) @ rs.v / (2.0 * FD_STEP)
        return TaskState(e, rate, J, bias)

    def cost(self, world, state=None) -> CostTerm:
        st = state if state is not None else self.evaluate(world)
        g = self.gains
        b = -g.kp * st.error - g.kd * st.error_rate - st.bias
        return CostTerm(world.embed(self.robot, st.J), b, g.weight, self.name)

    def compute(self, world) -> CostTerm:
        return self.cost(world)


class PostureTask(Task):
    """Joint-space PD toward ``target`` (a vector over ``joints``)."""

    kind = "posture"
    uses_bias = False

    def __init__(self, name, robot, model, target, joints=None, gains=None):
        super().__init__(name, robot, gains)
        names = list(joints) if joints is not None else list(model.joint_names)
        self.joints = names
        idx = [model.joint_index[j] for j in names]
        target = np.asarray(target, dtype=float)
        if target.shape != (len(idx),):
            raise DimensionError(f"posture target has {target.shape} entries, expected {len(idx)}")
        lo, hi = model.pos_min[idx], model.pos_max[idx]
        if np.any(target < lo - 1e-12) or np.any(target > hi + 1e-12):
            raise ValueError(f"posture target of {name!r} outside joint limits")
        self.target = target
        off = model.nq - model.njoints
        self._qidx = off + np.array(idx, dtype=int)
        S = np.zeros((len(idx), model.nv))
        S[np.arange(len(idx)), model.base_dof + np.array(idx, dtype=int)] = 1.0
        self._S = S

    def error_jacobian(self, world, kin):
        return kin.q[self._qidx] - self.target, self._S


class CoMTask(Task):
    kind = "com"

    def __init__(self, name, robot, target, gains=None):
        super().__init__(name, robot, gains)
        self.target = np.asarray(target, dtype=float)

    def error_jacobian(self, world, kin):
        c, J = kin.com_jacobian()
        return c - self.target, J


class CoMRelativeBodyTask(Task):
    """CoM target expressed in the mobile-base frame.

    e = R_b' (c - p_b) - target.  Moving the base with the joints frozen leaves
    e unchanged, so the base columns of J vanish.
    """

    kind = "com_relative"

    def __init__(self, name, robot, model, target, gains=None):
        if model.base_kind != "planar":
            raise NoMobileBase(f"{model.name} has no planar mobile base")
        super().__init__(name, robot, gains)
        self.target = np.asarray(target, dtype=float)

    def error_jacobian(self, world, kin):
        c, Jc = kin.com_jacobian()
        Rb, pb = kin.R[0], kin.p[0]
        Jb = kin.point_jacobian(0, pb, angular=True)
        r = c - pb
        J = Rb.T @ (Jc - Jb[0:3] + skew(r) @ Jb[3:6])
        return Rb.T @ r - self.target, J


def pose_error(current: FrameTransform, target: FrameTransform):
    """Position error stacked over the rotation log of ``R_target' R``."""
    phi = log_so3(target.rotation.T @ current.rotation)
    return np.concatenate([current.translation - target.translation, phi]), phi


class EndEffectorTask(Task):
    kind = "end_effector"

    def __init__(self, name, robot, frame, target: FrameTransform, gains=None, model=None):
        if model is not None and not model.has_frame(frame):
            raise UnknownFrame(f"{model.name}: unknown frame {frame!r}")
        super().__init__(name, robot, gains)
        self.frame = frame
        self.target = target

    def error_jacobian(self, world, kin):
        pose = kin.frame_pose(self.frame)
        e, phi = pose_error(pose, self.target)
        J6 = kin.frame_jacobian(self.frame)
        J = np.empty_like(J6)
        J[0:3] = J6[0:3]
        J[3:6] = right_jacobian_inv(phi) @ pose.rotation.T @ J6[3:6]
        return e, J


class PbvsTask(EndEffectorTask):
    """End-effector servo toward ``anchor_pose @ offset`` on an observed robot.

    The target is re-resolved every tick from the latest observed anchor pose.
    """

    kind = "pbvs"

    def __init__(self, name, robot, frame, anchor_robot, anchor_frame, offset: FrameTransform, gains=None, staleness_budget=250, model=None):
        super().__init__(name, robot, frame, FrameTransform(), gains, model)
        self.anchor_robot = anchor_robot
        self.anchor_frame = anchor_frame
        self.offset = offset
        self.staleness_budget = staleness_budget

    def resolve_target(self, world):
        obs = world.robot(self.anchor_robot)
        if obs.staleness is None or obs.staleness > self.staleness_budget:
            raise StaleObservation(f"{self.name}: no recent observation of {self.anchor_robot!r}")
        return obs.kin.frame_pose(self.anchor_frame) @ self.offset

    def prepare(self, world):
        self.target = self.resolve_target(world)


def interaction_matrix(x, y, Z):
    """Point-feature interaction matrix (camera twist in the camera frame, linear first)."""
    return np.array(
        [
            [-1.0 / Z, 0.0, x / Z, x * y, -(1.0 + x * x), y],
            [0.0, -1.0 / Z, y / Z, 1.0 + y * y, -x * y, -x],
        ]
    )


class IbvsTask(Task):
    """Drive the normalized image point of a 3-D point to the image center.

    ``point`` is either a fixed world point or ``(robot, frame)`` of an
    observed robot, re-read every tick.
    """

    kind = "ibvs"
    z_min = 0.05

    def __init__(self, name, robot, camera_frame, point, gains=None, staleness_budget=250, model=None):
        if model is not None and not model.has_frame(camera_frame):
            raise UnknownFrame(f"{model.name}: unknown frame {camera_frame!r}")
        super().__init__(name, robot, gains)
        self.camera_frame = camera_frame
        self.point_source = point
        self.staleness_budget = staleness_budget
        self.point = None if isinstance(point, tuple) else np.asarray(point, dtype=float)

    def prepare(self, world):
        if isinstance(self.point_source, tuple):
            rname, frame = self.point_source
            obs = world.robot(rname)
            if obs.staleness is None or obs.staleness > self.staleness_budget:
                raise StaleObservation(f"{self.name}: no recent observation of {rname!r}")
            self.point = obs.kin.frame_pose(frame).translation

    def camera_point(self, kin):
        cam = kin.frame_pose(self.camera_frame)
        return cam, cam.rotation.T @ (self.point - cam.translation)

    def error_jacobian(self, world, kin):
        cam, P = self.camera_point(kin)
        X, Y, Z = P
        if Z <= self.z_min:
            raise BehindCamera(f"{self.name}: point at depth {Z:.3f} m")
        x, y = X / Z, Y / Z
        J6 = kin.frame_jacobian(self.camera_frame)
        Rt = cam.rotation.T
        Jcam = np.vstack([Rt @ J6[0:3], Rt @ J6[3:6]])
        return np.array([x, y]), interaction_matrix(x, y, Z) @ Jcam


def gains_from(spec, kind):
    spec = spec or {}
    return TaskGains(spec.get("kp", DEFAULT_KP[kind]), spec.get("kd"), spec.get("weight", 1.0))
