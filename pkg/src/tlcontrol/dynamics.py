"""Control-affine systems and fixed-step closed-loop integration.

Systems have the form ``xdot = f(x) + g(x) u``. The control is held constant
(zero-order hold) between controller updates and the state is advanced with
classical RK4 on a fixed sub-grid, so identical inputs always give identical
trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

Vector = np.ndarray


class DynamicsError(RuntimeError):
    """Non-finite derivative; carries the offending state."""

    def __init__(self, message: str, state: Sequence[float]):
        super().__init__(message)
        self.state = np.array(state, dtype=float)


class IntegrationError(RuntimeError):
    """Integration produced a non-finite state; carries the last valid time."""

    def __init__(self, message: str, last_valid_time: float, state: Sequence[float]):
        super().__init__(message)
        self.last_valid_time = last_valid_time
        self.state = np.array(state, dtype=float)


@dataclass(frozen=True)
class ControlBox:
    u_min: Vector
    u_max: Vector

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("u_min and u_max must have the same length")
        if np.any(lo > hi):
            raise ValueError("u_min must not exceed u_max")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)

    @property
    def q(self) -> int:
        return self.u_min.size

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.u_min - tol) and np.all(u <= self.u_max + tol))

    def clip(self, u) -> Vector:
        return np.clip(np.asarray(u, dtype=float), self.u_min, self.u_max)


@dataclass(frozen=True)
class ControlAffineSystem:
    """``xdot = f(x) + g(x) u`` with a box on the control.

    ``f`` maps a state of length ``n`` to a length-``n`` vector and ``g``
    maps it to an ``n x q`` matrix.
    """

    n: int
    q: int
    f: Callable[[Vector], Vector]
    g: Callable[[Vector], Vector]
    control_box: ControlBox
    state_names: tuple = ()
    control_names: tuple = ()

    def __post_init__(self):
        if self.control_box.q != self.q:
            raise ValueError("control box length must equal q")
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i}" for i in range(self.n)))
        if not self.control_names:
            object.__setattr__(self, "control_names", tuple(f"u{i}" for i in range(self.q)))


def eval_dynamics(sys: ControlAffineSystem, x, u) -> Vector:
    """Return ``f(x) + g(x) u``."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (sys.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({sys.n},)")
    if u.shape != (sys.q,):
        raise ValueError(f"control has shape {u.shape}, expected ({sys.q},)")
    gx = np.asarray(sys.g(x), dtype=float).reshape(sys.n, sys.q)
    xdot = np.asarray(sys.f(x), dtype=float) + gx @ u
    if not np.all(np.isfinite(xdot)):
        raise DynamicsError(f"non-finite dynamics at x={x.tolist()}", x)
    return xdot


def integrate_zoh_step(sys: ControlAffineSystem, x0, u, dt: float, substeps: int = 10,
                       t0: float = 0.0) -> Vector:
    """Advance ``x0`` by ``dt`` under the constant control ``u`` with RK4.

    Parameters
    ----------
    sys : ControlAffineSystem
    x0 : array_like
        Initial state.
    u : array_like
        Control held over the whole interval.
    dt : float
        Interval length, must be positive.
    substeps : int
        Number of equal RK4 steps inside the interval.
    t0 : float
        Start time, only used for error reporting.

    Returns
    -------
    numpy.ndarray
        State at ``t0 + dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = dt / substeps
    x = np.asarray(x0, dtype=float).copy()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    for k in range(substeps):
        try:
            k1 = eval_dynamics(sys, x, u)
            k2 = eval_dynamics(sys, x + 0.5 * h * k1, u)
            k3 = eval_dynamics(sys, x + 0.5 * h * k2, u)
            k4 = eval_dynamics(sys, x + h * k3, u)
        except DynamicsError as exc:
            raise IntegrationError(str(exc), t0 + k * h, x) from exc
        x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x_next)):
            raise IntegrationError("non-finite state during integration", t0 + k * h, x)
        x = x_next
    return x


@dataclass
class StepDecision:
    """What a policy returns at one sample: the control and its slack."""

    u: Vector
    slack: float = 0.0


class Policy(Protocol):
    def __call__(self, t: float, x: Vector) -> StepDecision: ...


@dataclass
class SimulationLog:
    times: Vector
    states: Vector
    controls: Vector
    slack: Vector
    h_values: dict = field(default_factory=dict)
    event_times: list = field(default_factory=list)
    qp_count: int = 0
    state_names: tuple = ()
    control_names: tuple = ()
    fault: Optional[dict] = None
    fallback_times: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def completed(self) -> bool:
        return self.fault is None


class ControllerFault(RuntimeError):
    """The per-step QP had no feasible point.

    ``log`` holds the partial trajectory up to the failing sample when the
    fault is raised from :func:`run_closed_loop`.
    """

    def __init__(self, message: str, t: float, state, details: Optional[dict] = None):
        super().__init__(message)
        self.t = t
        self.state = np.array(state, dtype=float)
        self.details = details or {}
        self.log: Optional[SimulationLog] = None

    def record(self) -> dict:
        def _plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (list, tuple)):
                return [_plain(i) for i in v]
            if isinstance(v, dict):
                return {k: _plain(i) for k, i in v.items()}
            return v
        return {"message": str(self), "t": self.t, "state": self.state.tolist(),
                "details": _plain(self.details)}


def sample_times(t_end: float, dt: float) -> Vector:
    """Sample grid ``0, dt, 2 dt, ...`` ending exactly at ``t_end``."""
    n = int(math.ceil(t_end / dt - 1e-9))
    times = np.arange(n + 1, dtype=float) * dt
    times[-1] = t_end
    return times


def run_closed_loop(sys: ControlAffineSystem, controller: Policy, t_end: float, dt: float,
                    substeps: int = 10, x0=None,
                    h_functions: Optional[Mapping[str, Callable[[Vector], float]]] = None,
                    raise_on_fault: bool = True) -> SimulationLog:
    """Simulate the closed loop on the grid ``k * dt`` up to ``t_end``.

    The controller is queried once per interval; the terminal sample repeats
    the last held control so every sequence has the same length. Controls
    are checked against the box at every sample.

    On a :class:`ControllerFault` the partial log is attached to the
    exception (``exc.log``) and re-raised, or returned with ``log.fault`` set
    when ``raise_on_fault`` is false.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if x0 is None:
        raise ValueError("initial state x0 is required")
    h_functions = dict(h_functions or {})
    times = sample_times(t_end, dt)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({sys.n},)")

    states, controls, slacks = [x.copy()], [], []
    fault = None
    for k in range(len(times) - 1):
        t = times[k]
        try:
            decision = controller(t, x)
        except ControllerFault as exc:
            fault = exc
            break
        u = np.atleast_1d(np.asarray(decision.u, dtype=float))
        if not sys.control_box.contains(u, tol=1e-9):
            raise AssertionError(f"control {u} outside box at t={t}")
        # box membership to 1e-9 is guaranteed above; make it exact for logging
        u = sys.control_box.clip(u)
        controls.append(u)
        slacks.append(float(decision.slack))
        x = integrate_zoh_step(sys, x, u, times[k + 1] - t, substeps, t0=t)
        states.append(x.copy())

    n_done = len(states)
    if controls:
        controls.append(controls[-1].copy())
        slacks.append(slacks[-1])
    else:
        controls.append(np.zeros(sys.q))
        slacks.append(0.0)
    states_arr = np.array(states)
    log = SimulationLog(
        times=times[:n_done].copy(),
        states=states_arr,
        controls=np.array(controls),
        slack=np.array(slacks),
        h_values={name: np.array([float(fn(s)) for s in states_arr])
                  for name, fn in h_functions.items()},
        event_times=list(getattr(controller, "event_times", [])),
        qp_count=int(getattr(controller, "qp_count", n_done - 1)),
        fallback_times=list(getattr(controller, "fallback_times", [])),
        state_names=sys.state_names,
        control_names=sys.control_names,
    )
    if fault is not None:
        log.fault = fault.record()
        fault.log = log
        if raise_on_fault:
            raise fault
    return log
