"""Robot descriptions, compiled kinematic models and state integration.

A description is a JSON document with top-level keys ``name``, ``base``,
``joints``, ``links``, ``surfaces`` and ``devices``.  ``compile`` turns it
into an immutable :class:`RobotModel`; :class:`Kinematics` caches the
forward kinematics of one configuration so several Jacobians can be read
off a single pass.

Generalized coordinates
-----------------------
fixed     q = joints                              v = joint rates
planar    q = (x, y, yaw, joints)                 v = (dx, dy, dyaw, joint rates)
floating  q = (p[3], quat[4] (w,x,y,z), joints)   v = (p_dot[3], omega_world[3], joint rates)

Planar base rates are world-frame rates of x, y and yaw.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .spatial import (
    FrameTransform,
    axis_angle,
    quat_exp,
    quat_mul,
    quat_to_matrix,
    rot_z,
    rpy_to_matrix,
    skew,
    wrap_angle,
)

BASE_KINDS = ("fixed", "planar", "floating")
JOINT_KINDS = ("revolute", "prismatic")
DEVICE_KINDS = ("speaker", "tablet", "led", "touch", "bumper", "camera")
BASE_DOF = {"fixed": 0, "planar": 3, "floating": 6}


class DescriptionError(ValueError):
    pass


class SchemaError(DescriptionError):
    pass


class GraphError(DescriptionError):
    pass


class LimitError(DescriptionError):
    pass


class DimensionError(ValueError):
    pass


class UnknownFrame(LookupError):
    pass


class ZeroMassError(ValueError):
    pass


@dataclass(frozen=True)
class JointLimits:
    pos_min: float
    pos_max: float
    vel_max: float
    acc_max: float


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    kind: str
    parent_link: str
    child_link: str
    origin: FrameTransform
    axis: np.ndarray
    limits: JointLimits


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class LinkSpec:
    name: str
    mass: float
    com: np.ndarray
    collision_spheres: tuple = ()


@dataclass(frozen=True, eq=False)
class SurfaceSpec:
    name: str
    link: str
    origin: FrameTransform


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    kind: str
    link: str


@dataclass(frozen=True, eq=False)
class BaseSpec:
    kind: str
    root_link: str
    v_max: np.ndarray | None = None
    a_max: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class RobotDescription:
    name: str
    base: BaseSpec
    joints: tuple
    links: tuple
    surfaces: tuple = ()
    devices: tuple = ()


# --------------------------------------------------------------------------
# parsing


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is not None and not _is_kind(val, kind):
        raise SchemaError(f"{where}.{key}: expected {kind}, got {type(val).__name__}")
    return val


def _is_kind(val, kind):
    if kind == "str":
        return isinstance(val, str) and val != ""
    if kind == "num":
        return isinstance(val, (int, float)) and not isinstance(val, bool) and np.isfinite(val)
    if kind == "list":
        return isinstance(val, list)
    if kind == "dict":
        return isinstance(val, dict)
    raise AssertionError(kind)


def _vec(val, n, where):
    if not isinstance(val, list) or len(val) != n or not all(_is_kind(x, "num") for x in val):
        raise SchemaError(f"{where}: expected a list of {n} numbers")
    return np.array(val, dtype=float)


def _pose(obj, where):
    if obj is None:
        return FrameTransform()
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    xyz = _vec(obj.get("xyz", [0.0, 0.0, 0.0]), 3, where + ".xyz")
    if "rpy" in obj and "quaternion" in obj:
        raise SchemaError(f"{where}: give either rpy or quaternion, not both")
    if "quaternion" in obj:
        q = _vec(obj["quaternion"], 4, where + ".quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise SchemaError(f"{where}.quaternion: not unit norm")
        return FrameTransform(quat_to_matrix(q), xyz)
    rpy = _vec(obj.get("rpy", [0.0, 0.0, 0.0]), 3, where + ".rpy")
    return FrameTransform(rpy_to_matrix(rpy), xyz)


def _unique(names, what):
    seen = set()
    for n in names:
        if n in seen:
            raise GraphError(f"duplicate {what} name {n!r}")
        seen.add(n)


def parse_description(text) -> RobotDescription:
    """Parse and validate a description document (JSON text or a dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not a JSON document: {exc}") from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise SchemaError("description must be an object")
    name = _require(doc, "name", "description", "str")

    b = _require(doc, "base", "description", "dict")
    kind = _require(b, "kind", "base", "str")
    if kind not in BASE_KINDS:
        raise SchemaError(f"base.kind: unknown kind {kind!r}")
    root = _require(b, "root_link", "base", "str")
    v_max = a_max = None
    if kind == "planar":
        lim = _require(b, "limits", "base", "dict")
        v_max = _vec(_require(lim, "v_max", "base.limits"), 3, "base.limits.v_max")
        a_max = _vec(_require(lim, "a_max", "base.limits"), 3, "base.limits.a_max")
        if np.any(v_max <= 0) or np.any(a_max <= 0):
            raise LimitError("base limits must be positive")
    base = BaseSpec(kind, root, v_max, a_max)

    links = []
    for i, ld in enumerate(_require(doc, "links", "description", "list")):
        where = f"links[{i}]"
        lname = _require(ld, "name", where, "str")
        mass = float(_require(ld, "mass", where, "num"))
        if mass < 0:
            raise LimitError(f"{where}: negative mass")
        com = _vec(ld.get("com", [0.0, 0.0, 0.0]), 3, where + ".com")
        spheres = []
        for j, sd in enumerate(ld.get("collision_spheres", [])):
            sw = f"{where}.collision_spheres[{j}]"
            c = _vec(_require(sd, "center", sw), 3, sw + ".center")
            r = float(_require(sd, "radius", sw, "num"))
            if r <= 0:
                raise LimitError(f"{sw}: radius must be positive")
            spheres.append(Sphere(c, r))
        links.append(LinkSpec(lname, mass, com, tuple(spheres)))
    _unique([l.name for l in links], "link")
    link_names = {l.name for l in links}

    joints = []
    for i, jd in enumerate(_require(doc, "joints", "description", "list")):
        where = f"joints[{i}]"
        jname = _require(jd, "name", where, "str")
        jkind = _require(jd, "kind", where, "str")
        if jkind not in JOINT_KINDS:
            raise SchemaError(f"{where}.kind: unknown joint kind {jkind!r}")
        parent = _require(jd, "parent_link", where, "str")
        child = _require(jd, "child_link", where, "str")
        origin = _pose(jd.get("origin"), where + ".origin")
        axis = _vec(_require(jd, "axis", where), 3, where + ".axis")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise SchemaError(f"{where}.axis: not a unit vector")
        lim = _require(jd, "limits", where, "dict")
        limits = JointLimits(*(float(_require(lim, k, where + ".limits", "num")) for k in ("pos_min", "pos_max", "vel_max", "acc_max")))
        if limits.pos_min > limits.pos_max:
            raise LimitError(f"{where}: pos_min > pos_max")
        if limits.vel_max <= 0 or limits.acc_max <= 0:
            raise LimitError(f"{where}: velocity and acceleration limits must be positive")
        joints.append(JointSpec(jname, jkind, parent, child, origin, axis, limits))
    _unique([j.name for j in joints], "joint")

    surfaces = []
    for i, sd in enumerate(doc.get("surfaces", [])):
        where = f"surfaces[{i}]"
        surfaces.append(SurfaceSpec(_require(sd, "name", where, "str"), _require(sd, "link", where, "str"), _pose(sd.get("origin"), where + ".origin")))
    _unique([s.name for s in surfaces], "surface")

    devices = []
    for i, dd in enumerate(doc.get("devices", [])):
        where = f"devices[{i}]"
        dkind = _require(dd, "kind", where, "str")
        if dkind not in DEVICE_KINDS:
            raise SchemaError(f"{where}.kind: unknown device kind {dkind!r}")
        devices.append(DeviceSpec(_require(dd, "name", where, "str"), dkind, _require(dd, "link", where, "str")))
    _unique([d.name for d in devices], "device")

    # graph checks
    if root not in link_names:
        raise GraphError(f"root link {root!r} is not a declared link")
    children = {}
    for j in joints:
        for end in (j.parent_link, j.child_link):
            if end not in link_names:
                raise GraphError(f"joint {j.name!r} references unknown link {end!r}")
        if j.child_link == root:
            raise GraphError(f"joint {j.name!r} makes the root link a child")
        if j.child_link in children:
            raise GraphError(f"link {j.child_link!r} has two parent joints")
        children[j.child_link] = j
    reached = {root}
    frontier = [root]
    while frontier:
        cur = frontier.pop()
        for j in joints:
            if j.parent_link == cur and j.child_link not in reached:
                reached.add(j.child_link)
                frontier.append(j.child_link)
    orphans = link_names - reached
    if orphans:
        raise GraphError(f"links not connected to the root (orphan or cycle): {sorted(orphans)}")
    for s in surfaces:
        if s.link not in link_names:
            raise GraphError(f"surface {s.name!r} references unknown link {s.link!r}")
    for d in devices:
        if d.link not in link_names:
            raise GraphError(f"device {d.name!r} references unknown link {d.link!r}")

    return RobotDescription(name, base, tuple(joints), tuple(links), tuple(surfaces), tuple(devices))


def asset_path(name: str) -> Path:
    return Path(str(resources.files("tasqp") / "assets" / f"{name}.json"))


def load_description(name_or_path) -> RobotDescription:
    """Load a bundled asset by name (``pepper_lite``) or a description file path."""
    p = Path(name_or_path)
    if not p.suffix and not p.exists():
        p = asset_path(str(name_or_path))
    return parse_description(p.read_text())


def load_model(name_or_path) -> "RobotModel":
    return compile(load_description(name_or_path))


# --------------------------------------------------------------------------
# compiled model


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Compiled tree.  Links are in DFS preorder from the root; ``joints[i]``
    is the parent joint of ``links[i + 1]``."""

    name: str
    base_kind: str
    base_dof: int
    nq: int
    nv: int
    links: tuple
    joints: tuple
    surfaces: dict
    devices: tuple
    dof_names: tuple
    link_index: dict
    joint_index: dict
    link_parent_joint: np.ndarray
    link_parent: np.ndarray
    ancestors: np.ndarray  # (nlinks, njoints) bool, joint lies on root->link path
    pos_min: np.ndarray
    pos_max: np.ndarray
    vel_max: np.ndarray
    acc_max: np.ndarray
    base_v_max: np.ndarray | None
    base_a_max: np.ndarray | None
    masses: np.ndarray
    coms: np.ndarray
    revolute: np.ndarray
    _origin_R: np.ndarray = field(repr=False)
    _origin_p: np.ndarray = field(repr=False)
    _axes: np.ndarray = field(repr=False)

    @property
    def njoints(self):
        return len(self.joints)

    @property
    def total_mass(self):
        return float(self.masses.sum())

    @property
    def joint_names(self):
        return tuple(j.name for j in self.joints)

    def has_frame(self, frame):
        return frame in self.link_index or frame in self.surfaces

    def frame_link(self, frame):
        if frame in self.link_index:
            return self.link_index[frame], None
        if frame in self.surfaces:
            s = self.surfaces[frame]
            return self.link_index[s.link], s.origin
        raise UnknownFrame(f"{self.name}: unknown frame {frame!r}")

    def joint_slice(self):
        """Slice of the actuated joints in both q and v (offset by the base)."""
        nb = self.nq - self.njoints
        return slice(nb, nb + self.njoints)

    def devices_of_kind(self, kind):
        return [d for d in self.devices if d.kind == kind]

    def kinematics(self, q):
        return Kinematics(self, q)


def compile(desc: RobotDescription) -> RobotModel:
    """Order the tree (DFS preorder, declaration order among siblings)."""
    by_parent = {}
    for j in desc.joints:
        by_parent.setdefault(j.parent_link, []).append(j)
    link_specs = {l.name: l for l in desc.links}

    order_links = [desc.base.root_link]
    order_joints = []
    parent_link_of = {desc.base.root_link: -1}

    def visit(link):
        for j in by_parent.get(link, []):
            order_joints.append(j)
            parent_link_of[j.child_link] = link
            order_links.append(j.child_link)
            visit(j.child_link)

    visit(desc.base.root_link)
    link_index = {n: i for i, n in enumerate(order_links)}
    joint_index = {j.name: i for i, j in enumerate(order_joints)}
    nl, nj = len(order_links), len(order_joints)

    link_parent = np.array([-1] + [link_index[j.parent_link] for j in order_joints], dtype=int)
    link_parent_joint = np.arange(-1, nj, dtype=int)
    ancestors = np.zeros((nl, nj), dtype=bool)
    for i in range(1, nl):
        ancestors[i] = ancestors[link_parent[i]]
        ancestors[i, i - 1] = True

    base_dof = BASE_DOF[desc.base.kind]
    nv = base_dof + nj
    nq = nv + (1 if desc.base.kind == "floating" else 0)
    if desc.base.kind == "planar":
        base_names = ("base_x", "base_y", "base_yaw")
    elif desc.base.kind == "floating":
        base_names = ("base_vx", "base_vy", "base_vz", "base_wx", "base_wy", "base_wz")
    else:
        base_names = ()

    lim = [j.limits for j in order_joints]
    links = tuple(link_specs[n] for n in order_links)
    return RobotModel(
        name=desc.name,
        base_kind=desc.base.kind,
        base_dof=base_dof,
        nq=nq,
        nv=nv,
        links=links,
        joints=tuple(order_joints),
        surfaces={s.name: s for s in desc.surfaces},
        devices=desc.devices,
        dof_names=base_names + tuple(j.name for j in order_joints),
        link_index=link_index,
        joint_index=joint_index,
        link_parent_joint=link_parent_joint,
        link_parent=link_parent,
        ancestors=ancestors,
        pos_min=np.array([l.pos_min for l in lim]),
        pos_max=np.array([l.pos_max for l in lim]),
        vel_max=np.array([l.vel_max for l in lim]),
        acc_max=np.array([l.acc_max for l in lim]),
        base_v_max=desc.base.v_max,
        base_a_max=desc.base.a_max,
        masses=np.array([l.mass for l in links]),
        coms=np.array([l.com for l in links]).reshape(nl, 3),
        revolute=np.array([j.kind == "revolute" for j in order_joints], dtype=bool),
        _origin_R=np.array([j.origin.rotation for j in order_joints]).reshape(nj, 3, 3),
        _origin_p=np.array([j.origin.translation for j in order_joints]).reshape(nj, 3),
        _axes=np.array([j.axis for j in order_joints]).reshape(nj, 3),
    )


# --------------------------------------------------------------------------
# kinematics


def _check_q(model, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (model.nq,):
        raise DimensionError(f"{model.name}: expected q of length {model.nq}, got {q.shape}")
    return q


def _check_v(model, v, what="v"):
    v = np.asarray(v, dtype=float)
    if v.shape != (model.nv,):
        raise DimensionError(f"{model.name}: expected {what} of length {model.nv}, got {v.shape}")
    return v


def base_transform(model, q):
    if model.base_kind == "planar":
        return rot_z(q[2]), np.array([q[0], q[1], 0.0])
    if model.base_kind == "floating":
        quat = q[3:7]
        return quat_to_matrix(quat / np.linalg.norm(quat)), np.array(q[0:3], dtype=float)
    return np.eye(3), np.zeros(3)


_TABLES = weakref.WeakKeyDictionary()


def _cross(a, b):
    """Row-wise cross product of (n, 3) arrays (np.cross is slow for small inputs)."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _joint_tables(model):
    """Per-joint skew(axis), skew(axis)^2 and the axis in the parent frame."""
    t = _TABLES.get(model)
    if t is None:
        K = np.array([skew(a) for a in model._axes]).reshape(-1, 3, 3)
        axes_par = np.einsum("nij,nj->ni", model._origin_R, model._axes) if model.njoints else np.zeros((0, 3))
        t = _TABLES[model] = (K, K @ K, axes_par)
    return t


class Kinematics:
    """Forward kinematics of one configuration plus Jacobian queries."""

    def __init__(self, model: RobotModel, q):
        q = _check_q(model, q)
        self.model = model
        self.q = q
        nl, nj = len(model.links), model.njoints
        R = np.empty((nl, 3, 3))
        p = np.empty((nl, 3))
        R[0], p[0] = base_transform(model, q)
        axes_w = np.empty((nj, 3))
        qj = q[model.joint_slice()]
        K, K2, axes_par = _joint_tables(model)
        # joint rotations for all joints at once (Rodrigues), prismatic -> identity
        ang = np.where(model.revolute, qj, 0.0)
        Rq = np.eye(3) + np.sin(ang)[:, None, None] * K + (1.0 - np.cos(ang))[:, None, None] * K2
        Rloc = model._origin_R @ Rq
        parents = model.link_parent
        for i in range(nj):
            par = parents[i + 1]
            Rp = R[par]
            R[i + 1] = Rp @ Rloc[i]
            pj = p[par] + Rp @ model._origin_p[i]
            a = Rp @ axes_par[i]
            axes_w[i] = a
            p[i + 1] = pj if model.revolute[i] else pj + a * qj[i]
        self.R = R
        self.p = p
        self.axes = axes_w
        # joint origins coincide with child link origins for revolute joints;
        # prismatic columns do not use the origin
        self.origins = p[1:]

    def link_pose(self, link):
        i = self.model.link_index[link]
        return FrameTransform(self.R[i], self.p[i])

    def frame_pose(self, frame) -> FrameTransform:
        i, off = self.model.frame_link(frame)
        if off is None:
            return FrameTransform(self.R[i], self.p[i])
        return FrameTransform(self.R[i] @ off.rotation, self.R[i] @ off.translation + self.p[i])

    def _base_columns(self, point, J):
        m = self.model
        r = point - self.p[0]
        if m.base_kind == "planar":
            J[0, 0] = 1.0
            J[1, 1] = 1.0
            J[0, 2] = -r[1]
            J[1, 2] = r[0]
            if J.shape[0] == 6:
                J[5, 2] = 1.0
        elif m.base_kind == "floating":
            J[0:3, 0:3] = np.eye(3)
            J[0:3, 3:6] = -skew(r)
            if J.shape[0] == 6:
                J[3:6, 3:6] = np.eye(3)

    def point_jacobian(self, link_idx, point, angular=False):
        """Jacobian of a world point rigidly attached to link ``link_idx``."""
        m = self.model
        J = np.zeros((6 if angular else 3, m.nv))
        self._base_columns(point, J)
        mask = m.ancestors[link_idx]
        if mask.any():
            idx = np.nonzero(mask)[0]
            a = self.axes[idx]
            rev = m.revolute[idx]
            lin = np.where(rev[:, None], _cross(a, point - self.origins[idx]), a)
            cols = m.base_dof + idx
            J[0:3, cols] = lin.T
            if angular:
                J[3:6, cols] = (a * rev[:, None]).T
        return J

    def frame_jacobian(self, frame):
        i, _ = self.model.frame_link(frame)
        return self.point_jacobian(i, self.frame_pose(frame).translation, angular=True)

    def link_coms(self):
        return np.einsum("lij,lj->li", self.R, self.model.coms) + self.p

    def com(self):
        m = self.model
        M = m.total_mass
        if M <= 0:
            raise ZeroMassError(f"{m.name}: total mass is zero")
        c = (m.masses @ self.link_coms()) / M
        return c

    def com_jacobian(self):
        """CoM position and its 3 x nv Jacobian, via subtree mass moments."""
        m = self.model
        M = m.total_mass
        if M <= 0:
            raise ZeroMassError(f"{m.name}: total mass is zero")
        mc = m.masses[:, None] * self.link_coms()
        sub_m = m.masses.copy()
        sub_mc = mc.copy()
        for i in range(len(m.links) - 1, 0, -1):
            par = m.link_parent[i]
            sub_m[par] += sub_m[i]
            sub_mc[par] += sub_mc[i]
        c = sub_mc[0] / M
        J = np.zeros((3, m.nv))
        self._base_columns(c, J)
        nj = m.njoints
        if nj:
            a = self.axes
            moment = sub_mc[1:] - sub_m[1:, None] * self.origins
            lin = np.where(m.revolute[:, None], _cross(a, moment), a * sub_m[1:, None])
            J[:, m.base_dof:] = lin.T / M
        return c, J


# --------------------------------------------------------------------------
# module-level API


def forward_kinematics(model, q):
    """Map every link name to its world :class:`FrameTransform`."""
    kin = Kinematics(model, q)
    return {l.name: FrameTransform(kin.R[i], kin.p[i]) for i, l in enumerate(model.links)}


def frame_jacobian(model, q, frame):
    """6 x nv world-frame Jacobian (linear velocity of the frame origin, then
    angular velocity)."""
    model.frame_link(frame)
    return Kinematics(model, q).frame_jacobian(frame)


def com(model, q):
    return Kinematics(model, q).com_jacobian()


def configuration_step(model, q, v, h):
    """q (+) v*h on the configuration manifold, without limit handling."""
    out = np.array(q, dtype=float)
    if model.base_kind == "floating":
        out[0:3] += v[0:3] * h
        quat = quat_mul(quat_exp(v[3:6] * h), out[3:7])
        out[3:7] = quat / np.linalg.norm(quat)
        out[7:] += v[6:] * h
    else:
        out += v * h
    return out


def jdot_qdot(model, q, v, frame, h=1e-6):
    """Bias acceleration (dJ/dt) v of ``frame`` by central differences."""
    q = _check_q(model, q)
    v = _check_v(model, v)
    model.frame_link(frame)
    if not np.any(v):
        return np.zeros(6)
    Jp = Kinematics(model, configuration_step(model, q, v, h)).frame_jacobian(frame)
    Jm = Kinematics(model, configuration_step(model, q, v, -h)).frame_jacobian(frame)
    return (Jp - Jm) @ v / (2.0 * h)


def integrate(model, q, v, a, dt):
    """Semi-implicit Euler with velocity and position clamping.

    Returns ``(q', v')`` with ``v' = clamp(v + a dt)`` and ``q' = q (+) v' dt``;
    joint positions are clamped to their range and the planar yaw is wrapped.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = _check_q(model, q)
    v = _check_v(model, v)
    a = _check_v(model, a, "a")
    v1 = v + a * dt
    nb = model.base_dof
    v1[nb:] = np.clip(v1[nb:], -model.vel_max, model.vel_max)
    if model.base_kind == "planar":
        v1[:3] = np.clip(v1[:3], -model.base_v_max, model.base_v_max)
    q1 = configuration_step(model, q, v1, dt)
    js = model.joint_slice()
    q1[js] = np.clip(q1[js], model.pos_min, model.pos_max)
    if model.base_kind == "planar":
        q1[2] = wrap_angle(q1[2])
    return q1, v1


def neutral_configuration(model):
    q = np.zeros(model.nq)
    if model.base_kind == "floating":
        q[3] = 1.0
    js = model.joint_slice()
    q[js] = np.clip(0.0, model.pos_min, model.pos_max)
    return q


def random_configuration(model, rng, base_range=1.0):
    q = neutral_configuration(model)
    if model.base_kind == "planar":
        q[0:2] = rng.uniform(-base_range, base_range, 2)
        q[2] = rng.uniform(-np.pi, np.pi)
    elif model.base_kind == "floating":
        q[0:3] = rng.uniform(-base_range, base_range, 3)
        quat = rng.normal(size=4)
        q[3:7] = quat / np.linalg.norm(quat)
    q[model.joint_slice()] = rng.uniform(model.pos_min, model.pos_max)
    return q


def configuration_from(model, base=None, joints=None):
    """Build q from a base pose and a joint-name map (missing joints: neutral).

    ``base`` is ``[x, y, yaw]`` (planar) or ``{"position": .., "rpy"|"quaternion": ..}``
    (floating).
    """
    q = neutral_configuration(model)
    if base is not None:
        if model.base_kind == "planar":
            q[0:3] = np.asarray(base, dtype=float)
        elif model.base_kind == "floating":
            q[0:3] = np.asarray(base.get("position", [0, 0, 0]), dtype=float)
            if "quaternion" in base:
                quat = np.asarray(base["quaternion"], dtype=float)
                q[3:7] = quat / np.linalg.norm(quat)
            else:
                q[3:7] = FrameTransform.from_rpy(base.get("rpy", [0, 0, 0])).quaternion
    nb = model.nq - model.njoints
    for name, val in (joints or {}).items():
        if name not in model.joint_index:
            raise KeyError(f"{model.name}: unknown joint {name!r}")
        q[nb + model.joint_index[name]] = float(val)
    return q
