"""Benchmark problems: adaptive cruise control and a unicycle robot.

Each factory returns a :class:`ScenarioSpec` holding the system, its closed-form
Lie chains and the default controller settings. Parameters the benchmark
leaves open (slack weight, horizons, robot geometry) carry documented
defaults and are listed in ``INVENTED`` so config echoes can flag them.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certificates import LieDerivativeChain, finite_diff_chain_check
from .dynamics import ControlAffineSystem, ControlBox

CHAIN_CHECK_TOL = 1e-4


def _sgn(v: float) -> float:
    # sgn(0) = 0; the benchmarks keep v > 0 so the jump is never crossed
    return float(np.sign(v))


@dataclass(frozen=True)
class ACCParams:
    v0: float = 13.89
    v_d: float = 24.0
    M: float = 1650.0
    f0: float = 0.1
    f1: float = 5.0
    f2: float = 0.25
    c: float = 10.0
    c_a: float = 0.4
    c_d: float = 0.7
    g: float = 9.81
    x0: tuple = (24.0, 90.0)
    dt: float = 0.1
    d_t: float = 0.03
    x_lower: tuple = (0.5, 1.0)
    x_up: tuple = (0.5, 1.0)
    # controller defaults; w = 1 lets the speed slack win and the ego coasts
    # below the lead speed, w = 10 is the smallest tried that settles
    w: float = 10.0
    t_end: float = 40.0
    substeps: int = 10
    hocbf_gains: tuple = (1.0, 1.0)
    grid_per_dim: int = 7
    on_infeasible: str = "halt"

    INVENTED = ("w", "t_end", "substeps", "hocbf_gains", "grid_per_dim", "on_infeasible")

    def __post_init__(self):
        for name in ("v0", "v_d", "M", "f0", "f1", "f2", "c", "c_a", "c_d", "g", "dt", "d_t", "w", "t_end"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if any(o < 0 for o in tuple(self.x_lower) + tuple(self.x_up)):
            raise ValueError("box offsets must be nonnegative")

    def resistance(self, v: float) -> float:
        return self.f0 * _sgn(v) + self.f1 * v + self.f2 * v * v


@dataclass(frozen=True)
class RobotParams:
    obstacle: tuple = (25.0, 12.5)
    r: float = 7.0
    r_obstacle: float = 6.0
    destination: tuple = (50.0, 15.0)
    v_min: float = 0.0
    v_max: float = 2.0
    u1_max: float = 0.4
    u2_max: float = 0.8
    x0: tuple = (0.0, 10.0, 0.0, 0.5)
    dt: float = 0.1
    d_t: float = 0.03
    x_lower: tuple = (0.2, 0.2, 0.1, 0.1)
    x_up: tuple = (0.2, 0.2, 0.1, 0.1)
    stability_mode: str = "CLF_pair"
    vd_gain: float = 0.1
    # controller defaults
    w: float = 1.0
    t_end: float = 60.0
    substeps: int = 10
    hocbf_gains: tuple = (1.0, 1.0)
    grid_per_dim: int = 5
    on_infeasible: str = "halt"

    INVENTED = ("obstacle", "destination", "x0", "dt", "d_t", "stability_mode", "vd_gain",
                "w", "t_end", "substeps", "hocbf_gains", "grid_per_dim", "on_infeasible")

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.stability_mode not in ("TLS_m2", "CLF_pair"):
            raise ValueError("stability_mode must be 'TLS_m2' or 'CLF_pair'")
        if any(o < 0 for o in tuple(self.x_lower) + tuple(self.x_up)):
            raise ValueError("box offsets must be nonnegative")


@dataclass(frozen=True)
class StabilityTerm:
    chain: LieDerivativeChain
    mode: str  # "tls" or "clf"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    system: ControlAffineSystem
    x0: np.ndarray
    safety_chains: tuple
    stability: tuple
    params: object
    psi_chain: str
    tracking_error: Callable[[np.ndarray], float] = field(repr=False, default=lambda x: float("nan"))

    def safety_functions(self) -> dict:
        return {c.name: c.value for c in self.safety_chains}

    def chain(self, name: str) -> LieDerivativeChain:
        for c in self.safety_chains + tuple(s.chain for s in self.stability):
            if c.name == name:
                return c
        raise KeyError(name)

    def all_chains(self) -> list:
        return list(self.safety_chains) + [s.chain for s in self.stability]


@dataclass(frozen=True)
class EventSettings:
    monitor_dt: float
    x_lower: tuple
    x_up: tuple
    grid_per_dim: int


def _check_chains(spec: ScenarioSpec) -> ScenarioSpec:
    for chain in spec.all_chains():
        err = finite_diff_chain_check(spec.system, chain, spec.x0)
        if err > CHAIN_CHECK_TOL:
            raise ValueError(f"chain {chain.name!r} fails the finite-difference check ({err:.2e})")
    return spec


def make_acc(params: Optional[ACCParams] = None) -> ScenarioSpec:
    """Ego vehicle following a lead car at constant speed; state ``(v, z)``."""
    p = params or ACCParams()
    M = p.M

    def f(x):
        v, _ = x
        return np.array([-p.resistance(v) / M, p.v0 - v])

    def g(x):
        return np.array([[1.0 / M], [0.0]])

    box = ControlBox([-p.c_d * M * p.g], [p.c_a * M * p.g])
    system = ControlAffineSystem(2, 1, f, g, box, ("v", "z"), ("u",))

    gap = LieDerivativeChain(
        "gap", 2,
        lambda x: [x[1] - p.c, p.v0 - x[0], p.resistance(x[0]) / M],
        lambda x: [-1.0 / M])
    speed = LieDerivativeChain(
        "speed", 1,
        lambda x: [(x[0] - p.v_d) ** 2, -2.0 * (x[0] - p.v_d) * p.resistance(x[0]) / M],
        lambda x: [2.0 * (x[0] - p.v_d) / M])

    spec = ScenarioSpec(
        "acc", system, np.array(p.x0, dtype=float), (gap,), (StabilityTerm(speed, "tls"),), p,
        psi_chain="gap",
        # once the gap constraint binds the ego can only match the lead speed
        tracking_error=lambda x: abs(float(x[0]) - p.v0))
    return _check_chains(spec)


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _distance_chain(name: str, center, offset: float) -> LieDerivativeChain:
    """``(x - cx)^2 + (y - cy)^2 - offset`` for the unicycle; relative degree 2."""
    cx, cy = center

    def lf(s):
        x, y, th, v = s
        dx, dy = x - cx, y - cy
        return [dx * dx + dy * dy - offset,
                2.0 * dx * v * math.cos(th) + 2.0 * dy * v * math.sin(th),
                2.0 * v * v]

    def lglf(s):
        x, y, th, v = s
        dx, dy = x - cx, y - cy
        return [2.0 * v * (-dx * math.sin(th) + dy * math.cos(th)),
                2.0 * (dx * math.cos(th) + dy * math.sin(th))]

    return LieDerivativeChain(name, 2, lf, lglf)


def make_robot(params: Optional[RobotParams] = None, stability_mode: Optional[str] = None) -> ScenarioSpec:
    """Unicycle ``(x, y, theta, v)`` steered by ``(u1, u2)`` = (turn rate, acceleration)."""
    p = params or RobotParams()
    if stability_mode is not None:
        p = dataclasses.replace(p, stability_mode=stability_mode)
    xo, yo = p.obstacle
    xd, yd = p.destination
    x0 = np.array(p.x0, dtype=float)
    if (x0[0] - xo) ** 2 + (x0[1] - yo) ** 2 <= p.r ** 2:
        raise ValueError("initial state lies inside the obstacle clearance disc")

    def f(s):
        _, _, th, v = s
        return np.array([v * math.cos(th), v * math.sin(th), 0.0, 0.0])

    G = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    def g(s):
        return G

    box = ControlBox([-p.u1_max, -p.u2_max], [p.u1_max, p.u2_max])
    system = ControlAffineSystem(4, 2, f, g, box, ("x", "y", "theta", "v"), ("u1", "u2"))

    obstacle = _distance_chain("obstacle", p.obstacle, p.r ** 2)
    v_max = LieDerivativeChain("v_max", 1, lambda s: [p.v_max - s[3], 0.0], lambda s: [0.0, -1.0])
    v_min = LieDerivativeChain("v_min", 1, lambda s: [s[3] - p.v_min, 0.0], lambda s: [0.0, 1.0])

    if p.stability_mode == "TLS_m2":
        stability = (StabilityTerm(_distance_chain("goal", p.destination, 0.0), "tls"),)
    else:
        def vd(s):
            return min(p.v_max, p.vd_gain * math.hypot(s[0] - xd, s[1] - yd))

        def vd_rate(s):
            x, y, th, v = s
            rho = math.hypot(x - xd, y - yd)
            if p.vd_gain * rho >= p.v_max or rho == 0.0:
                return 0.0
            return p.vd_gain * ((x - xd) * v * math.cos(th) + (y - yd) * v * math.sin(th)) / rho

        def bearing_error(s):
            return _wrap(s[2] - math.atan2(yd - s[1], xd - s[0]))

        def bearing_rate(s):
            x, y, th, v = s
            dx, dy = xd - x, yd - y
            return (-dx * v * math.sin(th) + dy * v * math.cos(th)) / (dx * dx + dy * dy)

        speed = LieDerivativeChain(
            "speed", 1,
            lambda s: [(s[3] - vd(s)) ** 2, -2.0 * (s[3] - vd(s)) * vd_rate(s)],
            lambda s: [0.0, 2.0 * (s[3] - vd(s))])
        heading = LieDerivativeChain(
            "heading", 1,
            lambda s: [bearing_error(s) ** 2, -2.0 * bearing_error(s) * bearing_rate(s)],
            lambda s: [2.0 * bearing_error(s), 0.0])
        stability = (StabilityTerm(speed, "clf"), StabilityTerm(heading, "clf"))

    spec = ScenarioSpec(
        "robot", system, x0, (obstacle, v_max, v_min), stability, p, psi_chain="obstacle",
        tracking_error=lambda s: math.hypot(float(s[0]) - xd, float(s[1]) - yd))
    return _check_chains(spec)


PARAMS = {"acc": ACCParams, "robot": RobotParams}


def make_scenario(name: str, params=None) -> ScenarioSpec:
    if name == "acc":
        return make_acc(params)
    if name == "robot":
        return make_robot(params)
    raise ValueError(f"unknown scenario {name!r}")


def default_configs(spec: ScenarioSpec, method: str = "tlc"):
    """Controller and event-trigger settings taken from the scenario parameters.

    Returns ``(ControllerConfig, EventSettings, echo)`` where ``echo`` maps
    every parameter to ``{"value": ..., "invented": bool}``.
    """
    from .controller import ControllerConfig, MethodSelector

    p = spec.params
    cfg = ControllerConfig(dt=p.dt, w=p.w, method=MethodSelector.from_name(method, p.hocbf_gains),
                           substeps=p.substeps, t_end=p.t_end, on_infeasible=p.on_infeasible)
    event = EventSettings(p.d_t, tuple(p.x_lower), tuple(p.x_up), p.grid_per_dim)
    return cfg, event, config_echo(p)


def config_echo(params) -> dict:
    out = {}
    for fld in dataclasses.fields(params):
        value = getattr(params, fld.name)
        out[fld.name] = {"value": list(value) if isinstance(value, tuple) else value,
                         "invented": fld.name in params.INVENTED}
    return out


def sample_envelope(spec: ScenarioSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random states from the scenario's operating envelope.

    Robot samples stay clear of the places where a closed-form chain is not
    differentiable: the goal point, the ``v_d`` saturation circle and the
    bearing wrap.
    """
    if spec.name == "acc":
        return np.column_stack([rng.uniform(5.0, 30.0, n), rng.uniform(10.0, 120.0, n)])
    p = spec.params
    xd, yd = p.destination
    kink = p.v_max / p.vd_gain
    out = []
    while len(out) < n:
        s = np.array([rng.uniform(-5.0, 55.0), rng.uniform(0.0, 30.0),
                      rng.uniform(-math.pi, math.pi), rng.uniform(0.1, p.v_max)])
        rho = math.hypot(s[0] - xd, s[1] - yd)
        err = _wrap(s[2] - math.atan2(yd - s[1], xd - s[0]))
        if rho < 1.0 or abs(rho - kink) < 0.05 or abs(err) > math.pi - 0.05:
            continue
        out.append(s)
    return np.array(out)
