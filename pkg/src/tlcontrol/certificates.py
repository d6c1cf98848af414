"""Lie-derivative chains and the affine control constraints built from them.

Every constraint is returned as a :class:`HalfspaceRow` ``a . u + b (>= | <=) 0``.
Zero-order-hold Taylor-Lagrange rows are scaled by ``m! / dt**m`` so that the
control coefficient is exactly ``L_g L_f^{m-1} h``; this is the same scaling the
high-order barrier rows use, which makes the two directly comparable.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import ControlAffineSystem, Vector


class ChainEvaluationError(ValueError):
    pass


class Sense(enum.Enum):
    GEQ = ">="
    LEQ = "<="


@dataclass(frozen=True)
class LieDerivativeChain:
    """Closed-form Lie derivatives of one scalar function of relative degree ``m``.

    ``lf(x)`` returns ``[h, L_f h, ..., L_f^m h]`` (length ``m + 1``) and
    ``lglf(x)`` returns the row ``L_g L_f^{m-1} h`` (length ``q``).
    """

    name: str
    m: int
    lf: Callable[[Vector], Sequence[float]]
    lglf: Callable[[Vector], Sequence[float]]

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("relative degree must be >= 1")

    def evaluate(self, x) -> tuple[Vector, Vector]:
        x = np.asarray(x, dtype=float)
        lf = np.asarray(self.lf(x), dtype=float).ravel()
        lg = np.atleast_1d(np.asarray(self.lglf(x), dtype=float)).ravel()
        if lf.size != self.m + 1:
            raise ChainEvaluationError(
                f"chain {self.name!r} returned {lf.size} Lie derivatives, expected {self.m + 1}")
        if not (np.all(np.isfinite(lf)) and np.all(np.isfinite(lg))):
            raise ChainEvaluationError(f"non-finite chain values for {self.name!r} at x={x.tolist()}")
        return lf, lg

    def value(self, x) -> float:
        return float(np.asarray(self.lf(np.asarray(x, dtype=float)), dtype=float)[0])

    def scaled(self, factor: float) -> "LieDerivativeChain":
        lf, lglf = self.lf, self.lglf
        return LieDerivativeChain(
            self.name, self.m,
            lambda x: factor * np.asarray(lf(x), dtype=float),
            lambda x: factor * np.atleast_1d(np.asarray(lglf(x), dtype=float)))


@dataclass(frozen=True)
class HalfspaceRow:
    a: Vector
    b: float
    sense: Sense = Sense.GEQ
    slack_coupled: bool = False
    name: str = ""

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        if not (np.all(np.isfinite(a)) and math.isfinite(self.b)):
            raise ChainEvaluationError(f"non-finite row {self.name!r}")

    def value(self, u) -> float:
        return float(self.a @ np.atleast_1d(np.asarray(u, dtype=float)) + self.b)

    def satisfied(self, u, slack: float = 0.0, tol: float = 0.0) -> bool:
        v = self.value(u)
        if self.sense is Sense.GEQ:
            return v >= -tol
        return v - (slack if self.slack_coupled else 0.0) <= tol


@dataclass(frozen=True)
class ComplexRootPair:
    p1: complex
    p2: complex

    @property
    def sum(self) -> complex:
        return self.p1 + self.p2

    @property
    def product(self) -> complex:
        return self.p1 * self.p2


@dataclass(frozen=True)
class ClassKSpec:
    """Linear class-K gains ``alpha_i(s) = p_i s``, one per order."""

    coefficients: tuple = field(default=(1.0, 1.0))

    def __post_init__(self):
        coeffs = tuple(float(p) for p in self.coefficients)
        if not coeffs:
            raise ValueError("at least one class-K coefficient is required")
        if any(not p > 0 for p in coeffs):
            raise ValueError(f"class-K coefficients must be positive, got {coeffs}")
        object.__setattr__(self, "coefficients", coeffs)


def taylor_coefficients(m: int, dt: float) -> Vector:
    """``[dt**k / k! for k in 0..m]``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.array([dt ** k / math.factorial(k) for k in range(m + 1)])


def _taylor_row(chain: LieDerivativeChain, x, dt: float, sense: Sense, slack: bool) -> HalfspaceRow:
    lf, lg = chain.evaluate(x)
    coeff = taylor_coefficients(chain.m, dt)
    scale = math.factorial(chain.m) / dt ** chain.m
    b = float(np.dot(coeff * scale, lf))
    return HalfspaceRow(lg, b, sense, slack, chain.name)


def zoh_tlc_row(chain: LieDerivativeChain, x, dt: float) -> HalfspaceRow:
    """Hard safety row: the order-``m`` Taylor prediction of ``h`` over ``dt`` stays >= 0."""
    return _taylor_row(chain, x, dt, Sense.GEQ, False)


def zoh_tls_row(chain: LieDerivativeChain, x, dt: float) -> HalfspaceRow:
    """Stability row: the Taylor prediction of ``V`` over ``dt`` is <= the slack."""
    return _taylor_row(chain, x, dt, Sense.LEQ, True)


def expansion_coefficients(roots: Sequence[complex]) -> np.ndarray:
    """Ascending coefficients of ``prod_i (s + p_i)``; the last one is 1."""
    poly = np.array([1.0 + 0j])
    for p in roots:
        # multiply by (s + p), ascending order
        poly = np.concatenate([[0j], poly]) + np.concatenate([poly * p, [0j]])
    return poly


def barrier_row_from_roots(chain: LieDerivativeChain, x, roots: Sequence[complex]) -> HalfspaceRow:
    """Barrier row ``prod_i (D + p_i) h >= 0`` for arbitrary (possibly complex) gains.

    Complex gains must come in conjugate pairs so the row is real.
    """
    if len(roots) != chain.m:
        raise ValueError(f"need {chain.m} gains, got {len(roots)}")
    lf, lg = chain.evaluate(x)
    coeffs = expansion_coefficients(roots)
    b = complex(np.dot(coeffs[:-1], lf[:-1]) + lf[-1])
    if abs(b.imag) > 1e-9 * max(1.0, abs(b.real)):
        raise ValueError("gains do not form conjugate pairs; row is complex")
    return HalfspaceRow(lg, b.real, Sense.GEQ, False, chain.name)


def hocbf_row(chain: LieDerivativeChain, x, spec: ClassKSpec) -> HalfspaceRow:
    """High-order barrier row with linear class-K gains.

    Uses the first ``chain.m`` coefficients of ``spec``; for ``m = 2`` this is
    ``L_f^2 h + L_g L_f h u + (p1 + p2) L_f h + p1 p2 h >= 0``.
    """
    if len(spec.coefficients) < chain.m:
        raise ValueError(f"class-K spec has {len(spec.coefficients)} gains, chain needs {chain.m}")
    return barrier_row_from_roots(chain, x, spec.coefficients[:chain.m])


def clf_row(chain: LieDerivativeChain, x, c3: float) -> HalfspaceRow:
    if chain.m != 1:
        raise ValueError("CLF rows need a relative-degree-one function")
    if not c3 > 0:
        raise ValueError("c3 must be positive")
    lf, lg = chain.evaluate(x)
    return HalfspaceRow(lg, lf[1] + c3 * lf[0], Sense.LEQ, True, chain.name)


def complex_roots(dt: float) -> ComplexRootPair:
    """Gains that turn the second-order HOCBF row into the ZOH-TLC row."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return ComplexRootPair(complex(1.0, -1.0) / dt, complex(1.0, 1.0) / dt)


def psi1_trace(chain: LieDerivativeChain, x, dt: float, p1: Optional[complex] = None) -> complex:
    """``L_f h + p1 h`` with ``p1 = (1 - i)/dt`` unless a gain is given."""
    if chain.m < 2:
        raise ValueError("psi1 needs a chain of relative degree >= 2")
    lf, _ = chain.evaluate(x)
    if p1 is None:
        p1 = complex_roots(dt).p1
    return complex(lf[1] + p1 * lf[0])


@dataclass
class TaylorReport:
    lhs: float
    rhs_series_part: float
    remainder_estimate: float
    residual: float
    xi_bracket: tuple
    xi_estimate: Optional[float]
    xi_any: bool


def _nth_derivative(values: Vector, spacing: float, order: int) -> Vector:
    out = np.asarray(values, dtype=float)
    for _ in range(order):
        out = np.gradient(out, spacing, edge_order=2)
    return out


def verify_taylor_identity(times, values, m: int, derivatives_at_t0: Optional[Sequence[float]] = None,
                           rtol_uniform: float = 1e-9) -> TaylorReport:
    """Check ``h(t) = sum_{k<m} h^(k)(t0) (t-t0)^k / k! + R_m(t)`` numerically.

    The remainder is the integral form
    ``R_m = int_{t0}^{t} h^(m)(s) (t - s)^(m-1) / (m-1)! ds`` evaluated by the
    trapezoid rule, with ``h^(m)`` from repeated second-order finite
    differences. The mean-value point ``xi`` is bracketed by a sign change of
    ``h^(m)(s) (t - t0)^m / m! - R_m`` on the grid.

    Parameters
    ----------
    times, values : array_like
        Uniform grid over ``[t0, t]`` and the samples of ``h`` on it.
    m : int
        Expansion order.
    derivatives_at_t0 : sequence of float, optional
        Exact ``h^(k)(t0)`` for ``k < m``; estimated from the samples if omitted.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if m < 1:
        raise ValueError("m must be >= 1")
    if times.shape != values.shape or times.ndim != 1:
        raise ValueError("times and values must be 1-D arrays of equal length")
    if times.size < m + 2:
        raise ValueError(f"need at least {m + 2} samples, got {times.size}")
    steps = np.diff(times)
    spacing = float(steps.mean())
    if spacing <= 0 or np.max(np.abs(steps - spacing)) > rtol_uniform * max(1.0, abs(times[-1])):
        raise ValueError("samples must lie on a uniform, increasing grid")

    t0, t1 = times[0], times[-1]
    span = t1 - t0
    if derivatives_at_t0 is None:
        derivatives_at_t0 = [_nth_derivative(values, spacing, k)[0] for k in range(m)]
    series = sum(float(derivatives_at_t0[k]) * span ** k / math.factorial(k) for k in range(m))

    hm = _nth_derivative(values, spacing, m)
    kernel = (t1 - times) ** (m - 1) / math.factorial(m - 1)
    remainder = float(np.trapezoid(hm * kernel, times))
    lhs = float(values[-1])
    residual = abs(lhs - series - remainder)

    mv = hm * span ** m / math.factorial(m) - remainder
    scale = max(abs(remainder), 1e-300)
    if np.all(np.abs(mv) <= 1e-6 * scale):
        return TaylorReport(lhs, series, remainder, residual, (t0, t1), None, True)
    bracket, xi = (t0, t1), None
    for i in range(len(mv) - 1):
        if mv[i] == 0.0:
            bracket, xi = (times[i], times[i]), float(times[i])
            break
        if mv[i] * mv[i + 1] < 0:
            bracket = (float(times[i]), float(times[i + 1]))
            xi = float(times[i] - mv[i] * (times[i + 1] - times[i]) / (mv[i + 1] - mv[i]))
            break
    return TaylorReport(lhs, series, remainder, residual, bracket, xi, False)


def finite_diff_chain_check(sys: ControlAffineSystem, chain: LieDerivativeChain, x, u=None,
                            eps: float = 1e-4) -> float:
    """Worst relative error between the closed-form chain and central differences.

    Checks ``L_f^{k+1} h`` against the derivative of ``L_f^k h`` along ``f``,
    ``L_g L_f^{m-1} h`` against the derivative of ``L_f^{m-1} h`` along each
    column of ``g``, and that lower orders do not depend on the control. If
    ``u`` is given, the full time derivative of ``L_f^{m-1} h`` along
    ``f + g u`` is checked as well.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    lf, lg = chain.evaluate(x)
    fx = np.asarray(sys.f(x), dtype=float)
    gx = np.asarray(sys.g(x), dtype=float).reshape(sys.n, sys.q)
    floor = 1e-6 * (1.0 + float(np.max(np.abs(lf))))

    def order(k, y):
        return float(np.asarray(chain.lf(y), dtype=float)[k])

    def ddir(k, direction):
        return (order(k, x + eps * direction) - order(k, x - eps * direction)) / (2 * eps)

    def rel(analytic, numeric):
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)

    worst = 0.0
    for k in range(chain.m):
        worst = max(worst, rel(lf[k + 1], ddir(k, fx)))
        for j in range(sys.q):
            expected = lg[j] if k == chain.m - 1 else 0.0
            worst = max(worst, rel(expected, ddir(k, gx[:, j])))
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        total = ddir(chain.m - 1, fx + gx @ u)
        worst = max(worst, rel(lf[chain.m] + float(lg @ u), total))
    return worst
