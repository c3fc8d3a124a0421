"""Linear rows on the acceleration vector: joint limits, mobile-base bounds,
contacts and sphere-pair velocity dampers.

Limit and base rows are returned in robot-local columns; ``collision_rows``
works on a world snapshot and returns decision-vector columns directly.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .qpsolve import ConstraintRows
from .tasks import NoMobileBase


class PenetrationState(UserWarning):
    pass


@dataclass(frozen=True)
class DamperParams:
    di: float = 0.10  # interaction distance, m
    ds: float = 0.02  # safety distance, m
    xi: float = 0.5  # damping gain

    def __post_init__(self):
        if not (self.di > self.ds > 0):
            raise ValueError("damper distances must satisfy di > ds > 0")
        if not self.xi > 0:
            raise ValueError("damper gain must be positive")


@dataclass(frozen=True)
class ContactSpec:
    """Zero spatial acceleration of a robot surface.

    ``mode``: ``"planar"`` keeps z, roll and pitch (3 rows, wheeled base on a
    floor), ``"point"`` keeps the three linear rows, ``"frame"`` all six.
    """

    robot: str
    surface: str
    mode: str = "planar"

    @property
    def dims(self):
        return 6 if self.mode == "frame" else 3

    @property
    def rows(self):
        return {"planar": [2, 3, 4], "point": [0, 1, 2], "frame": [0, 1, 2, 3, 4, 5]}[self.mode]


def _braking_rows(names, v, vel_max, acc_max, dt, pos=None):
    """Shared per-DoF rows: one-step position bound (optional), velocity and
    acceleration bounds.  Each right-hand side is floored at -acc_max so that
    full braking stays feasible."""
    labels, rows, rhs = [], [], []
    n = len(names)
    for i, nm in enumerate(names):
        if pos is not None:
            q, lo, hi = pos[0][i], pos[1][i], pos[2][i]
            rows.append((i, 1.0))
            rhs.append(max((hi - q - v[i] * dt) / dt**2, -acc_max[i]))
            labels.append(f"{nm}:pos_max")
            rows.append((i, -1.0))
            rhs.append(max((q + v[i] * dt - lo) / dt**2, -acc_max[i]))
            labels.append(f"{nm}:pos_min")
        rows.append((i, 1.0))
        rhs.append(max((vel_max[i] - v[i]) / dt, -acc_max[i]))
        labels.append(f"{nm}:vel_max")
        rows.append((i, -1.0))
        rhs.append(max((vel_max[i] + v[i]) / dt, -acc_max[i]))
        labels.append(f"{nm}:vel_min")
        rows.append((i, 1.0))
        rhs.append(acc_max[i])
        labels.append(f"{nm}:acc_max")
        rows.append((i, -1.0))
        rhs.append(acc_max[i])
        labels.append(f"{nm}:acc_min")
    A = np.zeros((len(rows), n))
    for r, (i, s) in enumerate(rows):
        A[r, i] = s
    return A, np.array(rhs), labels


def joint_limit_rows(model, q, v, dt) -> ConstraintRows:
    """Per actuated joint, with ``q' = q + (v + a dt) dt``:
    ``q' <= pos_max``, ``q' >= pos_min``, ``|v + a dt| <= vel_max``, ``|a| <= acc_max``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    js = model.joint_slice()
    qj = np.asarray(q)[js]
    vj = np.asarray(v)[model.base_dof:]
    A, rhs, labels = _braking_rows(model.joint_names, vj, model.vel_max, model.acc_max, dt, (qj, model.pos_min, model.pos_max))
    full = np.zeros((A.shape[0], model.nv))
    full[:, model.base_dof:] = A
    return ConstraintRows("ineq", full, rhs, "joint_limits", labels)


def base_bound_rows(model, v, dt) -> ConstraintRows:
    """Mobile-base speed and acceleration bounds, per base DoF."""
    if model.base_kind != "planar":
        raise NoMobileBase(f"{model.name} has no planar mobile base")
    A, rhs, labels = _braking_rows(model.dof_names[:3], np.asarray(v)[:3], model.base_v_max, model.base_a_max, dt)
    full = np.zeros((A.shape[0], model.nv))
    full[:, :3] = A
    return ConstraintRows("ineq", full, rhs, "base_bounds", labels)


def contact_rows(model, q, v, contact: ContactSpec, kin=None, bias=None) -> ConstraintRows:
    """``J_c a = -(dJ_c/dt) v`` on the selected rows of the contact surface."""
    from .model import Kinematics, jdot_qdot

    model.frame_link(contact.surface)
    kin = kin if kin is not None else Kinematics(model, q)
    J = kin.frame_jacobian(contact.surface)[contact.rows]
    if bias is None:
        bias = jdot_qdot(model, q, v, contact.surface)
    rhs = -np.asarray(bias)[contact.rows]
    names = ["vx", "vy", "vz", "wx", "wy", "wz"]
    return ConstraintRows("eq", J, rhs, f"contact:{contact.robot}/{contact.surface}", [names[i] for i in contact.rows])


# --------------------------------------------------------------------------
# sphere pairs


@dataclass(frozen=True)
class CollisionPair:
    robot_a: str
    link_a: str
    robot_b: str
    link_b: str

    @classmethod
    def parse(cls, spec):
        """From ``["robot/link", "robot/link"]``."""
        a, b = spec
        ra, la = a.split("/", 1)
        rb, lb = b.split("/", 1)
        return cls(ra, la, rb, lb)


def self_collision_pairs(robot, model, exclude=()):
    """All link pairs with spheres, skipping parent/child links and ``exclude``."""
    ex = {frozenset(p) for p in exclude}
    links = [i for i, l in enumerate(model.links) if l.collision_spheres]
    out = []
    for i, j in itertools.combinations(links, 2):
        if model.link_parent[i] == j or model.link_parent[j] == i:
            continue
        a, b = model.links[i].name, model.links[j].name
        if frozenset((a, b)) in ex:
            continue
        out.append(CollisionPair(robot, a, robot, b))
    return out


def _sphere_centers(kin, link_idx):
    cache = kin.__dict__.setdefault("_spheres", {})
    out = cache.get(link_idx)
    if out is None:
        link = kin.model.links[link_idx]
        out = cache[link_idx] = [(kin.R[link_idx] @ s.center + kin.p[link_idx], s.radius) for s in link.collision_spheres]
    return out


def _kin(rs, at_ref):
    return rs.kin_ref if at_ref and hasattr(rs, "kin_ref") else rs.kin


def sphere_distances(world, pairs, at_ref=False):
    """Yield ``(pair, ia, pa, ra, ib, pb, rb, d)`` for every sphere pair of ``pairs``.

    ``at_ref`` evaluates robots at their commanded configuration ``q_ref``.
    """
    for pr in pairs:
        sa, sb = world.robot(pr.robot_a), world.robot(pr.robot_b)
        if sa.staleness is None or sb.staleness is None:
            continue  # an observed robot that has never been seen has no pose yet
        ka, kb = _kin(sa, at_ref), _kin(sb, at_ref)
        ia = ka.model.link_index[pr.link_a]
        ib = kb.model.link_index[pr.link_b]
        for pa, ra in _sphere_centers(ka, ia):
            for pb, rb in _sphere_centers(kb, ib):
                dx = pa - pb
                d = math.sqrt(dx @ dx) - ra - rb
                yield pr, ia, pa, ra, ib, pb, rb, d


def min_distance(world, pairs):
    best = np.inf
    for *_, d in sphere_distances(world, pairs):
        best = min(best, d)
    return best


def collision_rows(world, pairs, params: DamperParams, dt, at_ref=False) -> ConstraintRows:
    """Velocity-damper rows for sphere pairs closer than ``di``:

        n'(J1 - J2) a dt >= -xi (d - ds)/(di - ds) - d_dot,   d_dot = n'(J1 v1 - J2 v2)

    Observed robots contribute their (estimated) motion to ``d_dot`` only.
    """
    rows, rhs, labels, flags = [], [], [], []
    for pr, ia, pa, ra, ib, pb, rb, d in sphere_distances(world, pairs, at_ref):
        if d >= params.di:
            continue
        diff = pa - pb
        dist = np.linalg.norm(diff)
        nvec = diff / dist if dist > 1e-12 else np.array([0.0, 0.0, 1.0])
        sa = world.robot(pr.robot_a)
        sb = world.robot(pr.robot_b)
        Ja = _kin(sa, at_ref).point_jacobian(ia, pa)
        Jb = _kin(sb, at_ref).point_jacobian(ib, pb)
        ddot = nvec @ (Ja @ sa.v) - nvec @ (Jb @ sb.v)
        grad = np.zeros(world.nx)
        if not sa.observed:
            grad += world.embed(pr.robot_a, nvec @ Ja)
        if not sb.observed:
            grad -= world.embed(pr.robot_b, nvec @ Jb)
        if d < 0:
            flags.append(f"{pr.robot_a}/{pr.link_a}-{pr.robot_b}/{pr.link_b}")
            warnings.warn(PenetrationState(f"spheres interpenetrate by {-d:.4f} m: {flags[-1]}"), stacklevel=2)
        bound = -params.xi * (d - params.ds) / (params.di - params.ds) - ddot
        # -grad' a dt <= -bound
        rows.append(-grad * dt)
        rhs.append(-bound)
        labels.append(f"{pr.robot_a}/{pr.link_a}|{pr.robot_b}/{pr.link_b}#{len(labels)}")
    A = np.array(rows).reshape(len(rows), world.nx)
    return ConstraintRows("ineq", A, np.array(rhs), "collision", labels, flags)
