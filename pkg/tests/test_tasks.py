import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from tasqp.controller import RobotState, WorldState
from tasqp.model import Kinematics, ZeroMassError, configuration_step, integrate, random_configuration
from tasqp.qpsolve import assemble, solve
from tasqp.spatial import FrameTransform
from tasqp.tasks import (
    BehindCamera, CoMRelativeBodyTask, CoMTask, EndEffectorTask, IbvsTask, NoMobileBase,
    PbvsTask, PostureTask, StaleObservation, TaskGains, interaction_matrix,
)
from tests.conftest import chain_model


def _world(*robots):
    return WorldState(list(robots))


def _error_at(task, world, rs, q):
    """Task error with ``rs`` moved to ``q`` (restored afterwards)."""
    q0, v0 = rs.q, rs.v
    rs.set(q, v0)
    try:
        return task.error_jacobian(world, Kinematics(rs.model, q))[0]
    finally:
        rs.set(q0, v0)


def _fd_check(task, world, rs, v, atol=1e-5, h=1e-6):
    e_p = _error_at(task, world, rs, configuration_step(rs.model, rs.q, v, h))
    e_m = _error_at(task, world, rs, configuration_step(rs.model, rs.q, v, -h))
    _, J = task.error_jacobian(world, rs.kin)
    assert np.allclose(J @ v, (e_p - e_m) / (2 * h), atol=atol)


def _target_rpy(rng):
    return FrameTransform.from_rpy(rng.uniform(-np.pi, np.pi, 3), rng.normal(size=3))


# --- posture


def test_posture_at_target_is_zero(pepper, rng):
    q = random_configuration(pepper, rng)
    rs = RobotState("p", pepper, q=q)
    w = _world(rs)
    t = PostureTask("post", "p", pepper, q[pepper.joint_slice()])
    assert not np.any(t.compute(w).b)


def test_posture_pd_arithmetic():
    m = chain_model([("revolute", [0, 0, 1], [0, 0, 0])])
    rs = RobotState("r", m, q=np.array([1.0]))
    t = PostureTask("post", "r", m, [0.0], gains=TaskGains(1.0, 2.0))
    assert t.compute(_world(rs)).b[0] == pytest.approx(-1.0)


def _scalar_recurrence(kp, kd, dt, x0, steps):
    # x = (e, v): a = -kp e - kd v ; v' = v + a dt ; e' = e + v' dt
    M = np.array([[1 - kp * dt * dt, dt - kd * dt * dt], [-kp * dt, 1 - kd * dt]])
    out = [np.array(x0, dtype=float)]
    for _ in range(steps):
        out.append(M @ out[-1])
    return np.array(out)


def test_posture_closed_loop_matches_recurrence():
    m = chain_model([("revolute", [0, 0, 1], [0, 0, 0])])
    dt, kp = 0.012, 100.0
    t = PostureTask("post", "r", m, [0.2], gains=TaskGains(kp))
    rs = RobotState("r", m, q=np.array([0.3]))
    w = _world(rs)
    ref = _scalar_recurrence(kp, 2 * np.sqrt(kp), dt, [0.1, 0.0], 500)
    for k in range(500):
        x = solve(assemble([t.compute(w)], [], reg=0.0)).x
        rs.set(*integrate(m, rs.q, rs.v, x, dt))
        assert abs(rs.q[0] - 0.2 - ref[k + 1, 0]) <= 1e-9
        assert abs(rs.v[0] - ref[k + 1, 1]) <= 1e-9


def test_posture_target_dimension(pepper):
    from tasqp.model import DimensionError

    with pytest.raises(DimensionError):
        PostureTask("post", "p", pepper, [0.0])


@settings(max_examples=60, deadline=None)
@given(kp=st.floats(0.5, 100.0), e0=st.floats(-1.0, 1.0).filter(lambda e: abs(e) > 1e-3))
def test_critical_damping_never_alternates(kp, e0):
    for k in (kp, 4 * kp):
        e = _scalar_recurrence(k, 2 * np.sqrt(k), 0.012, [e0, 0.0], 2000)[:, 0]
        # once the error has crossed zero it never comes back: no oscillation
        signs = np.sign(e[np.abs(e) > 1e-12])
        assert np.count_nonzero(np.diff(signs)) <= 1


# --- CoM


def test_com_at_target(pepper, rng):
    q = random_configuration(pepper, rng)
    rs = RobotState("p", pepper, q=q)
    t = CoMTask("com", "p", rs.kin.com_jacobian()[0])
    assert not np.any(t.compute(_world(rs)).b)


def test_com_single_link_is_point_task():
    m = chain_model([], base="floating", masses=[2.0])
    q = np.array([0.1, 0.2, 0.3, 1.0, 0.0, 0.0, 0.0])
    rs = RobotState("r", m, q=q)
    t = CoMTask("com", "r", np.zeros(3))
    e, J = t.error_jacobian(_world(rs), rs.kin)
    assert np.allclose(e, q[:3] + m.coms[0])
    assert np.allclose(J, rs.kin.point_jacobian(0, rs.kin.com()))


def test_com_error_recomputed_from_fk(pepper, rng):
    from tasqp.model import forward_kinematics

    q = random_configuration(pepper, rng)
    rs = RobotState("p", pepper, q=q)
    tgt = rng.normal(size=3)
    e, _ = CoMTask("com", "p", tgt).error_jacobian(_world(rs), rs.kin)
    T = forward_kinematics(pepper, q)
    c = sum(l.mass * (T[l.name].rotation @ pepper.coms[i] + T[l.name].translation) for i, l in enumerate(pepper.links)) / pepper.total_mass
    assert np.allclose(e, c - tgt, atol=1e-14)


def test_com_zero_mass():
    m = chain_model([("revolute", [0, 0, 1], [0, 0, 0])], masses=[0.0, 0.0])
    rs = RobotState("r", m)
    with pytest.raises(ZeroMassError):
        CoMTask("com", "r", np.zeros(3)).compute(_world(rs))


# --- CoM relative to the base


def test_com_relative_identity_base(pepper, rng):
    q = random_configuration(pepper, rng)
    q[:3] = 0.0
    rs = RobotState("p", pepper, q=q)
    tgt = rng.normal(size=3)
    e, _ = CoMRelativeBodyTask("cr", "p", pepper, tgt).error_jacobian(_world(rs), rs.kin)
    assert np.allclose(e, rs.kin.com() - tgt, atol=1e-14)


def test_com_relative_needs_mobile_base(human):
    with pytest.raises(NoMobileBase):
        CoMRelativeBodyTask("cr", "h", human, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dx=st.floats(-5, 5), dy=st.floats(-5, 5), dyaw=st.floats(-np.pi, np.pi))
def test_com_relative_base_invariance(pepper, seed, dx, dy, dyaw):
    r = np.random.default_rng(seed)
    q = random_configuration(pepper, r)
    rs = RobotState("p", pepper, q=q)
    w = _world(rs)
    t = CoMRelativeBodyTask("cr", "p", pepper, np.zeros(3))
    e0 = _error_at(t, w, rs, q)
    q2 = q.copy()
    q2[:3] += [dx, dy, dyaw]
    assert np.allclose(_error_at(t, w, rs, q2), e0, atol=1e-12, rtol=0)
    _, J = t.error_jacobian(w, rs.kin)
    assert np.allclose(J[:, :3], 0.0, atol=1e-12)


def test_com_relative_jacobian_fd(pepper, rng):
    t = CoMRelativeBodyTask("cr", "p", pepper, np.zeros(3))
    for _ in range(10):
        rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
        _fd_check(t, _world(rs), rs, rng.normal(size=pepper.nv))


# --- end effector


def test_ee_at_target(pepper, rng):
    rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
    t = EndEffectorTask("ee", "p", "r_gripper", rs.kin.frame_pose("r_gripper"))
    e, _ = t.error_jacobian(_world(rs), rs.kin)
    assert np.allclose(e, 0.0, atol=1e-12)


def test_ee_translation_offset(pepper, rng):
    rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
    pose = rs.kin.frame_pose("r_gripper")
    d = np.array([0.1, -0.2, 0.05])
    t = EndEffectorTask("ee", "p", "r_gripper", FrameTransform(pose.rotation, pose.translation - d))
    e, _ = t.error_jacobian(_world(rs), rs.kin)
    assert np.allclose(e, np.concatenate([d, np.zeros(3)]), atol=1e-12)


def test_ee_orientation_matches_axis_angle(pepper, rng):
    for _ in range(20):
        rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
        tgt = _target_rpy(rng)
        e, _ = EndEffectorTask("ee", "p", "l_gripper", tgt).error_jacobian(_world(rs), rs.kin)
        cur = rs.kin.frame_pose("l_gripper").rotation
        ref = Rotation.from_matrix(tgt.rotation.T @ cur).as_rotvec()
        assert np.allclose(e[3:], ref, atol=1e-9)


def test_ee_unknown_frame(pepper):
    from tasqp.model import UnknownFrame

    with pytest.raises(UnknownFrame):
        EndEffectorTask("ee", "p", "nope", FrameTransform(), model=pepper)


@pytest.mark.parametrize("frame", ["r_gripper", "base_frame", "camera_optical"])
def test_ee_jacobian_fd(pepper, rng, frame):
    for _ in range(5):
        rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
        t = EndEffectorTask("ee", "p", frame, _target_rpy(rng))
        _fd_check(t, _world(rs), rs, rng.normal(size=pepper.nv))


# --- PBVS


def _pbvs_world(pepper, human, rng):
    rs = RobotState("pepper", pepper, q=random_configuration(pepper, rng))
    hs = RobotState("human", human, role="observed", q=random_configuration(human, rng))
    hs.staleness = 0
    return _world(rs, hs), rs, hs


def test_pbvs_zero_when_at_offset(pepper, human, rng):
    w, rs, hs = _pbvs_world(pepper, human, rng)
    off = hs.kin.frame_pose("torso_frame").inverse() @ rs.kin.frame_pose("base_frame")
    t = PbvsTask("pbvs", "pepper", "base_frame", "human", "torso_frame", off)
    assert np.allclose(t.evaluate(w).error, 0.0, atol=1e-9)


def test_pbvs_target_follows_anchor(pepper, human, rng):
    w, rs, hs = _pbvs_world(pepper, human, rng)
    off = _target_rpy(rng)
    t = PbvsTask("pbvs", "pepper", "base_frame", "human", "torso_frame", off)
    t.prepare(w)
    before = t.target
    d = np.array([0.3, -0.2, 0.1])
    q = hs.q.copy()
    q[:3] += d
    hs.set(q)
    t.prepare(w)
    assert np.allclose(t.target.translation - before.translation, d, atol=1e-12)
    assert np.allclose(t.target.rotation, before.rotation, atol=1e-12)


def test_pbvs_stale_observation(pepper, human, rng):
    w, rs, hs = _pbvs_world(pepper, human, rng)
    t = PbvsTask("pbvs", "pepper", "base_frame", "human", "torso_frame", FrameTransform(), staleness_budget=5)
    hs.staleness = 6
    with pytest.raises(StaleObservation):
        t.evaluate(w)
    hs.staleness = None
    with pytest.raises(StaleObservation):
        t.evaluate(w)


def test_pbvs_no_columns_for_observed(pepper, human, rng):
    w, rs, hs = _pbvs_world(pepper, human, rng)
    t = PbvsTask("pbvs", "pepper", "base_frame", "human", "torso_frame", FrameTransform())
    assert t.compute(w).J.shape == (6, pepper.nv)


# --- IBVS


def _camera_world(pepper, rng):
    rs = RobotState("p", pepper, q=random_configuration(pepper, rng))
    return _world(rs), rs, rs.kin.frame_pose("camera_optical")


def test_ibvs_on_axis(pepper, rng):
    w, rs, cam = _camera_world(pepper, rng)
    pt = cam.rotation @ [0, 0, 1.5] + cam.translation
    e, _ = IbvsTask("ibvs", "p", "camera_optical", pt).error_jacobian(w, rs.kin)
    assert np.allclose(e, 0.0, atol=1e-12)


def test_ibvs_pinhole(pepper, rng):
    w, rs, cam = _camera_world(pepper, rng)
    X, Z = 0.3, 2.0
    pt = cam.rotation @ [X, 0, Z] + cam.translation
    e, _ = IbvsTask("ibvs", "p", "camera_optical", pt).error_jacobian(w, rs.kin)
    assert np.allclose(e, [X / Z, 0.0], atol=1e-12)


def test_ibvs_behind_camera(pepper, rng):
    w, rs, cam = _camera_world(pepper, rng)
    pt = cam.rotation @ [0, 0, -1.0] + cam.translation
    with pytest.raises(BehindCamera):
        IbvsTask("ibvs", "p", "camera_optical", pt).compute(w)


def test_ibvs_interaction_matrix_fd(pepper, rng):
    for _ in range(10):
        w, rs, cam = _camera_world(pepper, rng)
        pt = cam.rotation @ np.append(rng.uniform(-0.5, 0.5, 2), rng.uniform(1, 3)) + cam.translation
        t = IbvsTask("ibvs", "p", "camera_optical", pt)
        v = rng.normal(size=pepper.nv)
        h = 1e-6
        s_p = _error_at(t, w, rs, configuration_step(pepper, rs.q, v, h))
        s_m = _error_at(t, w, rs, configuration_step(pepper, rs.q, v, -h))
        # L times the camera twist expressed in the camera frame
        J6 = rs.kin.frame_jacobian("camera_optical")
        Rt = cam.rotation.T
        twist = np.concatenate([Rt @ J6[:3] @ v, Rt @ J6[3:] @ v])
        P = Rt @ (pt - cam.translation)
        L = interaction_matrix(P[0] / P[2], P[1] / P[2], P[2])
        assert np.allclose(L @ twist, (s_p - s_m) / (2 * h), atol=1e-4)


# --- shared properties


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_zero_error_zero_rate_fixed_point(pepper, seed):
    r = np.random.default_rng(seed)
    q = random_configuration(pepper, r)
    rs = RobotState("p", pepper, q=q)
    w = _world(rs)
    tasks = [
        PostureTask("post", "p", pepper, q[pepper.joint_slice()]),
        CoMTask("com", "p", rs.kin.com()),
        CoMRelativeBodyTask("cr", "p", pepper, rs.kin.R[0].T @ (rs.kin.com() - rs.kin.p[0])),
        EndEffectorTask("ee", "p", "r_gripper", rs.kin.frame_pose("r_gripper")),
    ]
    for t in tasks:
        assert np.allclose(t.compute(w).b, 0.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(w1=st.floats(0.01, 100), w2=st.floats(0.01, 100), bump=st.floats(1.01, 10))
def test_weight_monotonicity(w1, w2, bump):
    m = chain_model([("revolute", [0, 0, 1], [0, 0, 0])])
    rs = RobotState("r", m, q=np.array([0.0]))
    w = _world(rs)

    def argmin(wa):
        ta = PostureTask("a", "r", m, [1.0], gains=TaskGains(1.0, 0.0, wa))
        tb = PostureTask("b", "r", m, [-1.0], gains=TaskGains(1.0, 0.0, w2))
        return solve(assemble([ta.compute(w), tb.compute(w)], [], reg=0.0)).x[0]

    # task a alone would give acceleration +1 (error -1)
    assert argmin(w1 * bump) >= argmin(w1) - 1e-12
