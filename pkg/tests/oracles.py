"""Independent reference computations shared by the unit and acceptance tests."""

from itertools import combinations

import numpy as np


def random_qp(rng, n=None, m=None, p_eq=None):
    """Random strictly convex QP with a strictly feasible point."""
    n = n or int(rng.integers(1, 7))
    m = int(rng.integers(0, 9)) if m is None else m
    p_eq = int(rng.integers(0, min(n, 3))) if p_eq is None else p_eq
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3
    x0 = rng.normal(size=n)
    C = rng.normal(size=(m, n))
    d = C @ x0 + rng.uniform(0.0, 1.0, m)
    A = rng.normal(size=(p_eq, n))
    b = A @ x0
    return H, g, A, b, C, d


def brute_force_qp(H, g, A, b, C, d, feas_tol=1e-9):
    """Minimize 1/2 x'Hx + g'x over {Ax = b, Cx <= d} by trying every active set.

    Each candidate solves the equality-constrained KKT system; the best
    primal-feasible candidate is the optimum of a strictly convex QP.
    """
    n = H.shape[0]
    m = C.shape[0]
    best, best_x = np.inf, None
    for k in range(0, min(m, n - A.shape[0]) + 1):
        for S in combinations(range(m), k):
            E = np.vstack([A, C[list(S)]]) if (A.shape[0] or k) else np.zeros((0, n))
            e = np.concatenate([b, d[list(S)]])
            K = np.block([[H, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            rhs = np.concatenate([-g, e])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            if m and np.max(C @ x - d) > feas_tol:
                continue
            f = 0.5 * x @ H @ x + g @ x
            if f < best:
                best, best_x = f, x
    return best, best_x


def kkt_check(H, g, A, b, C, d, x, mu, lam):
    """Absolute KKT violations: (stationarity, primal, dual, complementarity)."""
    stat = H @ x + g + A.T @ mu + C.T @ lam
    prim = max(np.abs(A @ x - b).max(initial=0.0), np.maximum(C @ x - d, 0).max(initial=0.0))
    dual = np.maximum(-lam, 0).max(initial=0.0)
    comp = np.abs(lam * (d - C @ x)).max(initial=0.0)
    return float(np.abs(stat).max(initial=0.0)), float(prim), float(dual), float(comp)


def fd_kinematics(model, q, frames, h=1e-6):
    """Central-difference frame Jacobians (world-frame [linear; angular]) and
    CoM Jacobian, one column per velocity direction."""
    from scipy.spatial.transform import Rotation

    from tasqp.model import Kinematics, configuration_step

    J = {f: np.zeros((6, model.nv)) for f in frames}
    Jc = np.zeros((3, model.nv))
    for k in range(model.nv):
        e = np.zeros(model.nv)
        e[k] = 1.0
        kp = Kinematics(model, configuration_step(model, q, e, h))
        km = Kinematics(model, configuration_step(model, q, e, -h))
        for f in frames:
            Tp, Tm = kp.frame_pose(f), km.frame_pose(f)
            J[f][:3, k] = (Tp.translation - Tm.translation) / (2 * h)
            J[f][3:, k] = Rotation.from_matrix(Tp.rotation @ Tm.rotation.T).as_rotvec() / (2 * h)
        Jc[:, k] = (kp.com() - km.com()) / (2 * h)
    return J, Jc
