"""Dense strictly convex QP over the stacked acceleration vector.

    minimize    1/2 x'Hx + g'x
    subject to  A x = b      (equality rows)
                C x <= d     (inequality rows)

``solve`` is a dual active-set method in the Goldfarb-Idnani family: it
starts from the unconstrained minimizer and adds the most violated row at
each step, dropping rows whose multiplier would turn negative.  The working
set stays linearly independent so the projected directions are recomputed
densely from H^-1 each step (n is a few dozen at most).  The final active set
is re-solved exactly to polish x and the multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class QpError(RuntimeError):
    pass


class Infeasible(QpError):
    pass


class MaxIter(QpError):
    pass


@dataclass
class CostTerm:
    """Weighted least-squares block ``weight * |J x - b|^2``."""

    J: np.ndarray
    b: np.ndarray
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.J = np.atleast_2d(np.asarray(self.J, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.J.shape[0] != self.b.shape[0]:
            raise ValueError(f"cost {self.name!r}: J has {self.J.shape[0]} rows, b has {self.b.shape[0]}")
        if not self.weight > 0:
            raise ValueError(f"cost {self.name!r}: weight must be positive")
        if not (np.all(np.isfinite(self.J)) and np.all(np.isfinite(self.b))):
            raise ValueError(f"cost {self.name!r}: non-finite entries")


@dataclass
class ConstraintRows:
    """Linear rows on x: ``A x <= rhs`` (``kind="ineq"``) or ``A x = rhs`` (``kind="eq"``)."""

    kind: str
    A: np.ndarray
    rhs: np.ndarray
    label: str = ""
    row_names: list | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("ineq", "eq"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, np.shape(self.A)[-1] if np.ndim(self.A) else 0)
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if self.A.shape[0] != self.rhs.shape[0]:
            raise ValueError(f"rows {self.label!r}: {self.A.shape[0]} rows but {self.rhs.shape[0]} right-hand sides")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.rhs))):
            raise ValueError(f"rows {self.label!r}: non-finite entries")

    def __len__(self):
        return self.A.shape[0]

    def labels(self):
        if self.row_names is not None:
            return [f"{self.label}:{r}" for r in self.row_names]
        return [f"{self.label}[{i}]" for i in range(len(self))]

    @classmethod
    def empty(cls, kind, n, label=""):
        return cls(kind, np.zeros((0, n)), np.zeros(0), label)


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    C: np.ndarray
    d: np.ndarray
    eq_labels: list
    ineq_labels: list
    reg: float = 0.0

    @property
    def n(self):
        return self.H.shape[0]

    def objective(self, x):
        return 0.5 * x @ self.H @ x + self.g @ x


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # optimal | infeasible | max_iter
    kkt_residual: float
    active_set: list
    iterations: int = 0
    eq_multipliers: np.ndarray | None = None
    ineq_multipliers: np.ndarray | None = None

    @property
    def ok(self):
        return self.status == "optimal"

    def raise_for_status(self):
        if self.status == "infeasible":
            raise Infeasible("constraints are inconsistent")
        if self.status == "max_iter":
            raise MaxIter(f"no optimal active set after {self.iterations} iterations")
        return self


def assemble(terms, rows, reg=1e-6, n=None) -> QpProblem:
    """Sum the weighted normal equations and stack constraint blocks."""
    if reg < 0:
        raise ValueError("regularization must be non-negative")
    if n is None:
        if terms:
            n = terms[0].J.shape[1]
        elif rows:
            n = rows[0].A.shape[1]
        else:
            raise ValueError("cannot infer the problem dimension")
    H = reg * np.eye(n)
    g = np.zeros(n)
    for t in terms:
        if t.J.shape[1] != n:
            from .model import DimensionError

            raise DimensionError(f"cost {t.name!r} has {t.J.shape[1]} columns, expected {n}")
        WJ = t.weight * t.J
        H += WJ.T @ t.J
        g -= WJ.T @ t.b
    H = 0.5 * (H + H.T)
    eqs = [r for r in rows if r.kind == "eq"]
    ins = [r for r in rows if r.kind == "ineq"]
    for r in rows:
        if r.A.shape[1] != n:
            from .model import DimensionError

            raise DimensionError(f"rows {r.label!r} have {r.A.shape[1]} columns, expected {n}")

    def stack(blocks):
        if not blocks:
            return np.zeros((0, n)), np.zeros(0), []
        return (
            np.vstack([r.A for r in blocks]),
            np.concatenate([r.rhs for r in blocks]),
            [lab for r in blocks for lab in r.labels()],
        )

    A, b, el = stack(eqs)
    C, d, il = stack(ins)
    return QpProblem(H, g, A, b, C, d, el, il, reg)


def kkt_residual(p: QpProblem, x, mu, lam):
    """Largest KKT violation.  Stationarity is relative to the gradient scale;
    primal/complementarity use unit-normalized rows."""
    grad = p.H @ x + p.g
    stat = grad.copy()
    if len(mu):
        stat += p.A_eq.T @ mu
    if len(lam):
        stat += p.C.T @ lam
    scale = max(1.0, float(np.abs(p.g).max(initial=0.0)), float(np.abs(p.H @ x).max(initial=0.0)))
    res = float(np.abs(stat).max(initial=0.0)) / scale
    if len(mu):
        nrm = np.linalg.norm(p.A_eq, axis=1)
        nrm[nrm == 0] = 1.0
        res = max(res, float((np.abs(p.A_eq @ x - p.b_eq) / nrm).max()))
    if len(lam):
        nrm = np.linalg.norm(p.C, axis=1)
        nrm[nrm == 0] = 1.0
        slack = (p.d - p.C @ x) / nrm
        u = lam * nrm
        res = max(res, float(np.maximum(-slack, 0).max()), float(np.maximum(-u, 0).max()))
        res = max(res, float(np.abs(u * np.maximum(slack, 0)).max()))
    return res


def solve(p: QpProblem, tol=1e-8, max_iter=200) -> QpSolution:
    n = p.n
    try:
        L = np.linalg.cholesky(p.H)
    except np.linalg.LinAlgError:
        raise ValueError("H is not positive definite; increase the regularization") from None
    Linv = np.linalg.inv(L)
    Hinv = Linv.T @ Linv
    viol_tol = min(1e-11, tol)

    # unit-normalized rows in the n'x >= b convention
    def normalize(M, r, sign):
        nrm = np.linalg.norm(M, axis=1)
        ok = nrm > 1e-14
        N = np.zeros_like(M)
        N[ok] = sign * M[ok] / nrm[ok, None]
        bb = np.zeros_like(r)
        bb[ok] = sign * r[ok] / nrm[ok]
        return N, bb, nrm, ok

    Ne, be, ne_norm, e_ok = normalize(p.A_eq, p.b_eq, 1.0)
    Ni, bi, ni_norm, i_ok = normalize(p.C, p.d, -1.0)
    me, mi = len(be), len(bi)

    def fail(status, x, it):
        return QpSolution(x, status, np.inf, [], it)

    # zero rows are either trivially satisfied or inconsistent
    if np.any(~e_ok & (np.abs(p.b_eq) > tol)) or np.any(~i_ok & (p.d < -tol)):
        return fail("infeasible", -Hinv @ p.g, 0)

    order = sorted(range(mi), key=lambda i: p.ineq_labels[i])
    rank = np.empty(mi, dtype=int)
    rank[order] = np.arange(mi)

    x = -Hinv @ p.g
    act = []  # ('e', i) / ('i', i)
    u = np.zeros(0)
    N = np.zeros((n, 0))

    def directions(N, nvec):
        w = Hinv @ nvec
        if N.shape[1] == 0:
            return w, np.zeros(0)
        HN = Hinv @ N
        r = np.linalg.solve(N.T @ HN, N.T @ w)
        return w - HN @ r, r

    def dependent(nvec, z):
        return z @ nvec <= 1e-10 * (nvec @ Hinv @ nvec)

    it = 0
    for i in sorted(range(me), key=lambda k: p.eq_labels[k]):
        if not e_ok[i]:
            continue
        nvec = Ne[i]
        z, r = directions(N, nvec)
        s = nvec @ x - be[i]
        if dependent(nvec, z):
            if abs(s) > tol:
                return fail("infeasible", x, it)
            continue
        t = -s / (z @ nvec)
        x = x + t * z
        u = np.append(u - t * r, t)
        act.append(("e", i))
        N = np.column_stack([N, nvec])
        it += 1

    status = "max_iter"
    while it < max_iter:
        viol = Ni @ x - bi if mi else np.zeros(0)
        if mi:
            viol = np.where(i_ok, viol, np.inf)
            for k, idx in act:
                if k == "i":
                    viol[idx] = np.inf
        if mi == 0 or viol.min() >= -viol_tol:
            status = "optimal"
            break
        # most violated row; ties go to the lowest label
        worst = viol.min()
        cand = np.nonzero(viol <= worst + 1e-15)[0]
        pidx = int(cand[np.argmin(rank[cand])])
        nvec = Ni[pidx]
        up = 0.0
        while True:
            it += 1
            if it > max_iter:
                break
            z, r = directions(N, nvec)
            t1, drop = np.inf, None
            for j, (k, idx) in enumerate(act):
                if k == "i" and r[j] > 1e-12 and u[j] / r[j] < t1:
                    t1, drop = u[j] / r[j], j
            s = nvec @ x - bi[pidx]
            t2 = np.inf if dependent(nvec, z) else -s / (z @ nvec)
            t = min(t1, t2)
            if not np.isfinite(t):
                return fail("infeasible", x, it)
            if np.isfinite(t2):
                x = x + t * z
            u = u - t * r
            up += t
            if t2 <= t1:
                u = np.append(u, up)
                act.append(("i", pidx))
                N = np.column_stack([N, nvec])
                break
            keep = [j for j in range(len(act)) if j != drop]
            act = [act[j] for j in keep]
            u = u[keep]
            N = N[:, keep]
        if it > max_iter:
            break

    mu = np.zeros(me)
    lam = np.zeros(mi)

    def unpack(uu):
        mu[:] = 0.0
        lam[:] = 0.0
        for j, (k, idx) in enumerate(act):
            if k == "e":
                mu[idx] = -uu[j] / ne_norm[idx]
            else:
                lam[idx] = uu[j] / ni_norm[idx]

    if status == "optimal" and act:
        # exact re-solve on the final working set
        bvec = np.array([be[i] if k == "e" else bi[i] for k, i in act])
        HN = Hinv @ N
        try:
            u_pol = np.linalg.solve(N.T @ HN, bvec + N.T @ (Hinv @ p.g))
            x_pol = Hinv @ (N @ u_pol - p.g)
            unpack(u)
            before = kkt_residual(p, x, mu, lam)
            unpack(u_pol)
            after = kkt_residual(p, x_pol, mu, lam)
            if after <= before:
                x, u = x_pol, u_pol
        except np.linalg.LinAlgError:
            pass
    unpack(u)
    res = kkt_residual(p, x, mu, lam)
    if status == "optimal" and res > tol:
        status = "max_iter"
    labels = [p.eq_labels[i] if k == "e" else p.ineq_labels[i] for k, i in act]
    return QpSolution(x, status, res, labels, it, mu.copy(), lam.copy())
