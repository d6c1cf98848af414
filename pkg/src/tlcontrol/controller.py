"""Per-step QP assembly and the time-driven zero-order-hold controller."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import qp as qpmod
from .certificates import (ClassKSpec, HalfspaceRow, Sense, clf_row, hocbf_row, zoh_tlc_row,
                           zoh_tls_row)
from .dynamics import ControlBox, ControllerFault, StepDecision


class MethodKind(enum.Enum):
    ZOH_TLC = "tlc"
    HOCBF = "hocbf"
    EVENT_TLC = "etlc"


@dataclass(frozen=True)
class MethodSelector:
    kind: MethodKind
    hocbf_params: Optional[ClassKSpec] = None

    def __post_init__(self):
        if (self.kind is MethodKind.HOCBF) != (self.hocbf_params is not None):
            raise ValueError("hocbf_params must be given exactly when kind is HOCBF")

    @classmethod
    def from_name(cls, name: str, gains: Sequence[float] = (1.0, 1.0)) -> "MethodSelector":
        kind = MethodKind(name)
        return cls(kind, ClassKSpec(tuple(gains)) if kind is MethodKind.HOCBF else None)


@dataclass(frozen=True)
class ControllerConfig:
    dt: float
    w: float = 1.0
    method: MethodSelector = field(default_factory=lambda: MethodSelector(MethodKind.ZOH_TLC))
    substeps: int = 10
    t_end: float = 40.0
    on_infeasible: str = "halt"

    def __post_init__(self):
        if self.on_infeasible not in ("halt", "fallback"):
            raise ValueError("on_infeasible must be 'halt' or 'fallback'")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.w > 0:
            raise ValueError("w must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def build_step_qp(rows: Sequence[HalfspaceRow], box: ControlBox, w: float) -> qpmod.QuadraticProgram:
    """QP over ``(u, delta)`` with cost ``||u||^2 + w delta^2``.

    Hard rows constrain ``u`` only; slack-coupled ``<=`` rows read
    ``a.u + b <= delta``. The slack variable is present only when some row
    uses it.
    """
    q = box.q
    for row in rows:
        if row.a.shape != (q,):
            raise ValueError(f"row {row.name!r} has {row.a.size} control coefficients, box has {q}")
        if row.slack_coupled and row.sense is Sense.GEQ:
            raise ValueError("slack coupling is only defined for <= rows")
    has_slack = any(r.slack_coupled for r in rows)
    dim = q + int(has_slack)
    weights = np.ones(dim)
    if has_slack:
        weights[-1] = w
    A, lb = [], []
    for row in rows:
        coeff = np.zeros(dim)
        if row.sense is Sense.GEQ:
            coeff[:q] = row.a
            lb.append(-row.b)
        else:
            coeff[:q] = -row.a
            if row.slack_coupled:
                coeff[-1] = 1.0
            lb.append(row.b)
        A.append(coeff)
    lower = np.concatenate([box.u_min, [-np.inf] * int(has_slack)])
    upper = np.concatenate([box.u_max, [np.inf] * int(has_slack)])
    return qpmod.program(2.0 * np.diag(weights), np.zeros(dim), A, lb, lower, upper,
                         tuple(r.name for r in rows))


def split_solution(sol: qpmod.QPSolution, q: int) -> tuple[np.ndarray, float]:
    u = sol.point[:q].copy()
    delta = float(sol.point[q]) if sol.point.size > q else 0.0
    return u, delta


def safety_rows(scenario, x, method: MethodSelector, dt: float) -> list[HalfspaceRow]:
    if method.kind is MethodKind.HOCBF:
        return [hocbf_row(c, x, method.hocbf_params) for c in scenario.safety_chains]
    return [zoh_tlc_row(c, x, dt) for c in scenario.safety_chains]


def stability_rows(scenario, x, dt: float) -> list[HalfspaceRow]:
    rows = []
    for term in scenario.stability:
        if term.mode == "clf":
            rows.append(clf_row(term.chain, x, 1.0 / dt))
        else:
            rows.append(zoh_tls_row(term.chain, x, dt))
    return rows


def solve_rows(rows, box: ControlBox, w: float) -> tuple[qpmod.QPSolution, np.ndarray, float]:
    program = build_step_qp(rows, box, w)
    sol = qpmod.solve(program)
    u, delta = split_solution(sol, box.q)
    return sol, box.clip(u), delta


FALLBACK_WEIGHT = 1e8


def least_violation_qp(rows: Sequence[HalfspaceRow], box: ControlBox, w: float) -> qpmod.QuadraticProgram:
    """Relaxation used when the step QP is infeasible.

    Every hard row is scaled to a unit control coefficient and relaxed by one
    shared nonnegative variable ``sigma`` that costs ``FALLBACK_WEIGHT *
    sigma^2``, so the result is (to within that weight) the control in the box
    that least violates the worst hard row.
    """
    base = build_step_qp(rows, box, w)
    dim = base.dim + 1
    P = np.zeros((dim, dim))
    P[:-1, :-1] = base.hessian
    P[-1, -1] = 2.0 * FALLBACK_WEIGHT
    A = np.zeros((base.n_rows, dim))
    A[:, :-1] = base.A
    lb = base.lb.copy()
    for k, row in enumerate(rows):
        if row.sense is Sense.GEQ and not row.slack_coupled:
            norm = float(np.linalg.norm(row.a))
            if norm > 0:
                A[k] /= norm
                lb[k] /= norm
            A[k, -1] = 1.0
    lower = np.append(base.lower, 0.0)
    upper = np.append(base.upper, np.inf)
    return qpmod.program(P, np.zeros(dim), A, lb, lower, upper, base.row_names)


def solve_or_fallback(rows, box: ControlBox, config: ControllerConfig, t: float, x, details: dict):
    """Solve the step QP; on infeasibility halt or fall back per ``config.on_infeasible``.

    Returns ``(solution, u, delta, used_fallback)``.
    """
    sol, u, delta = solve_rows(rows, box, config.w)
    if sol.optimal:
        return sol, u, delta, False
    if config.on_infeasible == "halt":
        raise ControllerFault(f"infeasible QP at t={t:.4f}", t, x, details)
    relaxed = qpmod.solve(least_violation_qp(rows, box, config.w))
    if not relaxed.optimal:
        raise ControllerFault(f"fallback QP infeasible at t={t:.4f}", t, x, details)
    u, delta = split_solution(relaxed, box.q)
    return relaxed, box.clip(u), delta, True


class TimeDrivenPolicy:
    """Solve one QP per control interval and hold the result.

    Attributes ``qp_count`` and ``records`` (per-step rows, slack and status)
    are read back by the simulation log and the analysis layer.
    """

    def __init__(self, scenario, config: ControllerConfig):
        if config.method.kind is MethodKind.EVENT_TLC:
            raise ValueError("use event_triggered_policy for the event-triggered method")
        self.scenario = scenario
        self.config = config
        self.qp_count = 0
        self.records: list[dict] = []
        self.fallback_times: list[float] = []

    def rows(self, x) -> list[HalfspaceRow]:
        cfg = self.config
        return (safety_rows(self.scenario, x, cfg.method, cfg.dt)
                + stability_rows(self.scenario, x, cfg.dt))

    def __call__(self, t: float, x) -> StepDecision:
        rows = self.rows(x)
        self.qp_count += 1
        details = {"rows": [(r.name, r.a, r.b, r.sense.value) for r in rows]}
        _, u, delta, fell_back = solve_or_fallback(
            rows, self.scenario.system.control_box, self.config, t, x, details)
        if fell_back:
            self.fallback_times.append(float(t))
        self.records.append({"t": t, "u": u, "slack": delta,
                             "row_values": {r.name: r.value(u) for r in rows}})
        return StepDecision(u, delta)


def time_driven_policy(scenario, config: ControllerConfig) -> TimeDrivenPolicy:
    return TimeDrivenPolicy(scenario, config)
