"""Small dense convex QPs: ``min 1/2 x'Px + q'x  s.t.  A x >= lb,  lower <= x <= upper``.

Solved with the Goldfarb-Idnani dual active-set method. It starts at the
unconstrained minimum and adds violated constraints one at a time, lowest
index first. Box bounds come first in that order, so the first iterates are
the box-clamped unconstrained minimum. Everything here has at most three
variables and a handful of rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEAS_TOL = 1e-8
ACTIVE_TOL = 1e-10
MAX_ITER = 50


class QPError(RuntimeError):
    pass


class QPStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class QuadraticProgram:
    hessian: np.ndarray
    linear: np.ndarray
    A: np.ndarray
    lb: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_names: tuple = ()

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        dim = P.shape[0]
        if P.shape != (dim, dim):
            raise ValueError("hessian must be square")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ValueError("hessian must be symmetric")
        q = np.asarray(self.linear, dtype=float).reshape(dim)
        A = np.asarray(self.A, dtype=float).reshape(-1, dim)
        lb = np.asarray(self.lb, dtype=float).reshape(A.shape[0])
        lo = np.asarray(self.lower, dtype=float).reshape(dim)
        hi = np.asarray(self.upper, dtype=float).reshape(dim)
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        for name, val in (("hessian", P), ("linear", q), ("A", A), ("lb", lb)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"non-finite entries in {name}")
        for name, val in (("hessian", P), ("linear", q), ("A", A), ("lb", lb), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)
        if not self.row_names:
            object.__setattr__(self, "row_names", tuple(f"row{i}" for i in range(A.shape[0])))

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x)

    def constraint_matrix(self):
        """All constraints as ``C x >= d``: finite box bounds first, then rows.

        Returns ``(C, d, labels)`` where a label is ``("lower", i)``,
        ``("upper", i)`` or ``("row", k)``.
        """
        C, d, labels = [], [], []
        eye = np.eye(self.dim)
        for i in range(self.dim):
            if np.isfinite(self.lower[i]):
                C.append(eye[i]); d.append(self.lower[i]); labels.append(("lower", i))
            if np.isfinite(self.upper[i]):
                C.append(-eye[i]); d.append(-self.upper[i]); labels.append(("upper", i))
        for k in range(self.n_rows):
            C.append(self.A[k]); d.append(self.lb[k]); labels.append(("row", k))
        if not C:
            return np.zeros((0, self.dim)), np.zeros(0), []
        return np.array(C), np.array(d), labels


@dataclass
class QPSolution:
    point: np.ndarray
    objective: float
    active_set: list
    status: QPStatus
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_box: list = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is QPStatus.OPTIMAL


def _tolerance(C_i: np.ndarray, d_i: float, x: np.ndarray) -> float:
    return ACTIVE_TOL * (1.0 + abs(d_i) + float(np.abs(C_i) @ np.abs(x)))


def solve(qp: QuadraticProgram, max_iter: int = MAX_ITER) -> QPSolution:
    """Minimise the program; returns an ``Infeasible`` solution if no point exists."""
    P = qp.hessian
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise QPError("hessian must be positive definite") from exc
    Ginv = np.linalg.inv(P)
    C, d, labels = qp.constraint_matrix()
    n_con = len(d)

    x = -Ginv @ qp.linear
    active: list[int] = []
    mult = np.zeros(0)
    iterations = 0

    def finish(status: QPStatus) -> QPSolution:
        lam = np.zeros(n_con)
        for j, idx in enumerate(active):
            lam[idx] = mult[j]
        slack = C @ x - d if n_con else np.zeros(0)
        rows, box = [], []
        for idx in range(n_con):
            if abs(slack[idx]) <= 10 * _tolerance(C[idx], d[idx], x) or idx in active:
                kind, i = labels[idx]
                (rows if kind == "row" else box).append(i if kind == "row" else (kind, i))
        return QPSolution(x.copy(), qp.objective(x), sorted(set(rows)), status, lam,
                          sorted(set(box)), iterations)

    while True:
        violated = None
        if n_con:
            s = C @ x - d
            for idx in range(n_con):
                if idx not in active and s[idx] < -_tolerance(C[idx], d[idx], x):
                    violated = idx
                    break
        if violated is None:
            return finish(QPStatus.OPTIMAL)

        p = violated
        n_p = C[p]
        mult_plus = np.append(mult, 0.0)
        while True:
            iterations += 1
            if iterations > max_iter:
                raise QPError(f"active-set iteration cap ({max_iter}) exceeded")
            if active:
                N = C[active].T
                GN = Ginv @ N
                Nstar = np.linalg.solve(N.T @ GN, GN.T)
                z = Ginv @ n_p - GN @ (Nstar @ n_p)
                r = Nstar @ n_p
            else:
                z = Ginv @ n_p
                r = np.zeros(0)

            t1, drop = np.inf, None
            for j in range(len(active)):
                if r[j] > ACTIVE_TOL:
                    ratio = mult_plus[j] / r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            zn = float(z @ n_p)
            if zn > ACTIVE_TOL * max(1.0, float(n_p @ n_p)):
                t2 = -(float(n_p @ x) - d[p]) / zn
            else:
                t2 = np.inf

            if not np.isfinite(t1) and not np.isfinite(t2):
                return finish(QPStatus.INFEASIBLE)
            if not np.isfinite(t2):
                mult_plus[:-1] -= t1 * r
                mult_plus[-1] += t1
                del active[drop]
                mult_plus = np.delete(mult_plus, drop)
                continue
            t = min(t1, t2)
            x = x + t * z
            mult_plus[:-1] -= t * r
            mult_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                mult = mult_plus
                break
            del active[drop]
            mult_plus = np.delete(mult_plus, drop)


def kkt_residual(qp: QuadraticProgram, sol: QPSolution) -> float:
    """Largest of the stationarity, primal, dual and complementarity residuals."""
    x = np.asarray(sol.point, dtype=float)
    C, d, _ = qp.constraint_matrix()
    lam = np.asarray(sol.multipliers, dtype=float)
    if lam.shape != d.shape:
        raise ValueError("solution multipliers do not match the program")
    grad = qp.hessian @ x + qp.linear
    stationarity = float(np.max(np.abs(grad - C.T @ lam))) if grad.size else 0.0
    s = C @ x - d if len(d) else np.zeros(0)
    primal = float(max(0.0, np.max(-s))) if len(s) else 0.0
    dual = float(max(0.0, np.max(-lam))) if len(lam) else 0.0
    comp = float(np.max(np.abs(lam * s))) if len(s) else 0.0
    return max(stationarity, primal, dual, comp)


def program(hessian, linear, rows: Sequence = (), lb: Sequence = (), lower=None, upper=None,
            row_names: tuple = ()) -> QuadraticProgram:
    """Convenience constructor; ``rows`` / ``lb`` encode ``rows @ x >= lb``."""
    P = np.atleast_2d(np.asarray(hessian, dtype=float))
    dim = P.shape[0]
    A = np.asarray(rows, dtype=float).reshape(-1, dim) if len(rows) else np.zeros((0, dim))
    lo = np.full(dim, -np.inf) if lower is None else lower
    hi = np.full(dim, np.inf) if upper is None else upper
    return QuadraticProgram(P, linear, A, np.asarray(lb, dtype=float), lo, hi, row_names)
