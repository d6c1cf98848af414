"""Event-triggered Taylor-Lagrange control.

At an event the safety rows are made robust over a box around the current
state, the resulting QP is solved once, and the control is held until a
monitored sample leaves the box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .certificates import HalfspaceRow, LieDerivativeChain, Sense, taylor_coefficients
from .controller import (ControllerConfig, MethodKind, MethodSelector, safety_rows,
                         solve_or_fallback, solve_rows, stability_rows)
from .dynamics import StepDecision


@dataclass(frozen=True)
class StateBox:
    center: np.ndarray
    lower_offsets: np.ndarray
    upper_offsets: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).copy()
        lo = np.broadcast_to(np.asarray(self.lower_offsets, dtype=float), c.shape).copy()
        hi = np.broadcast_to(np.asarray(self.upper_offsets, dtype=float), c.shape).copy()
        if np.any(lo < 0) or np.any(hi < 0):
            raise ValueError("box offsets must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "lower_offsets", lo)
        object.__setattr__(self, "upper_offsets", hi)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.lower_offsets

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.upper_offsets

    def axes(self, per_dim: int) -> list[np.ndarray]:
        if per_dim < 2:
            raise ValueError("grid_per_dim must be >= 2")
        return [np.array([lo]) if lo == hi else np.linspace(lo, hi, per_dim)
                for lo, hi in zip(self.lower, self.upper)]

    def grid(self, per_dim: int) -> np.ndarray:
        """Uniform grid including every corner; flat dimensions collapse to one point.

        Points are in C order over :meth:`axes`, so values can be reshaped to
        the grid shape.
        """
        return np.array(list(itertools.product(*self.axes(per_dim))))


@dataclass(frozen=True)
class RobustRow:
    G: np.ndarray
    h_r: float
    name: str = ""

    def as_row(self) -> HalfspaceRow:
        return HalfspaceRow(self.G, self.h_r, Sense.GEQ, False, self.name)


CURVATURE_SAFETY = 2.0


def curvature_allowance(values: np.ndarray) -> np.ndarray:
    """Bound on how far a function can dip below its grid samples inside a cell.

    ``values`` has the grid shape along the leading axes (trailing axes are
    separate functions). On a cell with spacings ``s_i`` the multilinear
    interpolant differs from the function by at most
    ``sum_i s_i^2 max|d_ii f| / 8``; ``s_i^2 d_ii f`` is estimated by the
    grid's second differences and inflated by ``CURVATURE_SAFETY``.
    """
    n_axes = values.ndim - 1
    total = np.zeros(values.shape[-1])
    for i in range(n_axes):
        if values.shape[i] < 3:
            continue
        d2 = np.abs(np.diff(values, n=2, axis=i))
        total += d2.reshape(-1, values.shape[-1]).max(axis=0)
    return CURVATURE_SAFETY * total / 8.0


def robust_bounds(chain: LieDerivativeChain, box: StateBox, dt: float, u_sign: Sequence[float],
                  grid_per_dim: int = 5, curvature: bool = True) -> RobustRow:
    """Worst case of the ZOH-TLC row over ``box``.

    ``h_r`` is the minimum of the control-free part over the grid; each
    control coefficient takes its minimum where ``u_k >= 0`` and its maximum
    otherwise, so ``G.u + h_r`` lower-bounds the row at every grid point for
    any sign-consistent ``u``. Same ``m!/dt^m`` scaling as ``zoh_tlc_row``.

    With ``curvature`` the grid extremes are widened by
    :func:`curvature_allowance` so the bound also holds between grid points.
    A zero-width box is unaffected.
    """
    scale = math.factorial(chain.m) / dt ** chain.m
    coeff = taylor_coefficients(chain.m, dt) * scale
    axes = box.axes(grid_per_dim)
    shape = tuple(len(a) for a in axes)
    points = np.array(list(itertools.product(*axes)))
    free, lg = [], []
    for y in points:
        lf, g = chain.evaluate(y)
        free.append(float(np.dot(coeff, lf)))
        lg.append(g)
    free = np.array(free)
    lg = np.array(lg)
    sign = np.asarray(u_sign, dtype=float)
    if sign.shape != (lg.shape[1],):
        raise ValueError("u_sign length must equal the control dimension")
    G = np.where(sign >= 0, lg.min(axis=0), lg.max(axis=0))
    h_r = float(free.min())
    if curvature:
        pad = curvature_allowance(np.column_stack([free, lg]).reshape(shape + (-1,)))
        h_r -= float(pad[0])
        G = G - np.where(sign >= 0, pad[1:], -pad[1:])
    return RobustRow(G, h_r, chain.name)


def detect_exit(x, box: StateBox) -> bool:
    """True iff some component is strictly outside the (closed) box."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.center.shape:
        raise ValueError("state and box dimensions differ")
    return bool(np.any(x < box.lower) or np.any(x > box.upper))


class EventTriggeredPolicy:
    """Called at every monitor instant; re-solves only when the state leaves the box.

    Each event costs two QPs: a nominal time-driven one that fixes the
    control signs, then the robust event QP.
    """

    def __init__(self, scenario, config: ControllerConfig, monitor_dt: float,
                 x_lower: Sequence[float], x_up: Sequence[float], grid_per_dim: int = 5):
        if not 0 < monitor_dt <= config.dt + 1e-12:
            raise ValueError("monitor_dt must be positive and no larger than the control dt")
        self.scenario = scenario
        self.config = config
        self.monitor_dt = monitor_dt
        self.x_lower = np.asarray(x_lower, dtype=float)
        self.x_up = np.asarray(x_up, dtype=float)
        self.grid_per_dim = grid_per_dim
        self.box: Optional[StateBox] = None
        self.held: Optional[StepDecision] = None
        self.qp_count = 0
        self.event_times: list[float] = []
        self.boxes: list[StateBox] = []
        self.records: list[dict] = []
        self.fallback_times: list[float] = []
        self._nominal = MethodSelector(MethodKind.ZOH_TLC)

    def _event(self, t: float, x) -> StepDecision:
        sc, cfg = self.scenario, self.config
        box_u = sc.system.control_box
        nominal_rows = safety_rows(sc, x, self._nominal, cfg.dt) + stability_rows(sc, x, cfg.dt)
        nominal, u_nom, _ = solve_rows(nominal_rows, box_u, cfg.w)
        self.qp_count += 1
        # zero (or an infeasible nominal) takes the u >= 0 branch
        u_sign = np.where(u_nom < 0, -1.0, 1.0) if nominal.optimal else np.ones(box_u.q)

        box = StateBox(x, self.x_lower, self.x_up)
        robust = [robust_bounds(c, box, cfg.dt, u_sign, self.grid_per_dim) for c in sc.safety_chains]
        rows = [r.as_row() for r in robust] + stability_rows(sc, x, cfg.dt)
        self.qp_count += 1
        details = {"box_lower": box.lower, "box_upper": box.upper,
                   "robust_rows": [(r.name, r.G, r.h_r) for r in robust],
                   "nominal_status": nominal.status.value}
        _, u, delta, fell_back = solve_or_fallback(rows, box_u, cfg, t, x, details)
        if fell_back:
            self.fallback_times.append(float(t))
        self.box = box
        self.boxes.append(box)
        self.event_times.append(float(t))
        self.records.append({"t": t, "u": u, "slack": delta, "u_sign": u_sign,
                             "robust": {r.name: (r.G.copy(), r.h_r) for r in robust}})
        return StepDecision(u, delta)

    def __call__(self, t: float, x) -> StepDecision:
        if self.box is None or detect_exit(x, self.box):
            self.held = self._event(t, x)
        return self.held


def event_triggered_policy(scenario, config: ControllerConfig, monitor_dt: float,
                           box_offsets, grid_per_dim: int = 5) -> EventTriggeredPolicy:
    """``box_offsets`` is ``(x_lower, x_up)``."""
    lower, upper = box_offsets
    return EventTriggeredPolicy(scenario, config, monitor_dt, lower, upper, grid_per_dim)
