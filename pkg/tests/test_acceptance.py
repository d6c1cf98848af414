"""Acceptance criteria 1-10.

Every criterion records one PASS/FAIL line (printed in the pytest terminal
summary, or directly when this file is run as a script) and then asserts.
Runs use the shipped defaults, including the halt-on-infeasible policy; a
run that stops early cannot satisfy a criterion about the full horizon.
Where a run stops early the line also reports what the opt-in fallback
policy produces, for diagnosis only.
"""
from __future__ import annotations

import dataclasses
import functools
import itertools
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

from tlcontrol.analysis import RunRequest, compute_metrics, read_csv, simulate, write_outputs
from tlcontrol.certificates import (ClassKSpec, barrier_row_from_roots, complex_roots,
                                    finite_diff_chain_check, hocbf_row, taylor_coefficients,
                                    verify_taylor_identity, zoh_tlc_row)
from tlcontrol.dynamics import integrate_zoh_step
from tlcontrol.event_trigger import StateBox, detect_exit, robust_bounds
from tlcontrol.qp import kkt_residual, solve
from tlcontrol.scenarios import make_acc, make_robot, sample_envelope

from qp_oracle import grid_min, oracle_cases

RESULTS: dict[int, str] = {}
OUT = Path(tempfile.mkdtemp(prefix="tlc_acceptance_"))


def report(n: int, passed: bool, text: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {text}"
    RESULTS[n] = line
    print(line)
    assert passed, line


@functools.lru_cache(maxsize=None)
def _run(scenario: str, method: str, items: tuple = ()):
    overrides = dict(items)
    req = RunRequest(scenario, method, overrides)
    result = simulate(req)
    metrics = compute_metrics(result, method)
    out = OUT / ("_".join([scenario, method] + [f"{k}{v}" for k, v in items]))
    write_outputs(result, metrics, out, plots=False)
    return result, metrics, out


def run(scenario, method, **overrides):
    return _run(scenario, method, tuple(sorted(overrides.items())))


def _status(metrics) -> str:
    if metrics.completed:
        return "complete"
    return f"halted at t={metrics.fault['t']:.2f} (infeasible QP)"


# ---------------------------------------------------------------- 1

def test_criterion_1_algebraic_equivalence():
    rng = np.random.default_rng(1)
    dt = 0.1
    roots = complex_roots(dt)
    worst, n_rows = 0.0, 0
    for spec in (make_acc(), make_robot()):
        for x in sample_envelope(spec, 100, rng):
            for chain in spec.safety_chains:
                tlc = zoh_tlc_row(chain, x, dt)
                if chain.m == 1:
                    ref = hocbf_row(chain, x, ClassKSpec((1.0 / dt,)))
                else:
                    ref = barrier_row_from_roots(chain, x, (roots.p1, roots.p2))
                for c1, c2 in zip(np.append(tlc.a, tlc.b), np.append(ref.a, ref.b)):
                    scale = max(abs(c1), abs(c2))
                    if scale > 0:
                        worst = max(worst, abs(c1 - c2) / scale)
                n_rows += 1
    sum_ok = abs(roots.sum - 2 / dt) <= 1e-12 * 2 / dt
    prod_ok = abs(roots.product - 2 / dt ** 2) <= 1e-12 * 2 / dt ** 2
    ok = worst <= 1e-12 and sum_ok and prod_ok
    report(1, ok, f"{n_rows} rows over 200 states, worst relative coefficient gap {worst:.2e} "
                  f"(tol 1e-12); p1+p2=2/dt {sum_ok}, p1*p2=2/dt^2 {prod_ok}")


# ---------------------------------------------------------------- 2

def _acc_interval_residual(x0, u, dt, spacing):
    acc = make_acc()
    gap = acc.chain("gap")
    n = int(round(dt / spacing))
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(n):
        xs.append(integrate_zoh_step(acc.system, xs[-1], u, spacing, substeps=1))
    t = np.linspace(0.0, dt, n + 1)
    h = np.array([gap.value(x) for x in xs])
    lf, _ = gap.evaluate(x0)
    rep = verify_taylor_identity(t, h, 2, derivatives_at_t0=lf[:2])
    return rep.residual, float(np.max(np.abs(h)))


def test_criterion_2_taylor_identity():
    t = np.linspace(0.0, 1.0, 1001)
    rep = verify_taylor_identity(t, t ** 3, 2, derivatives_at_t0=[0.0, 0.0])
    xi_ok = rep.xi_estimate is not None and abs(rep.xi_estimate - 1 / 3) <= 1e-3

    result, _, _ = run("acc", "hocbf")
    log = result.log
    k = int(np.argmax(np.abs(log.controls[:-1, 0])))
    dt = result.config.dt
    residuals = [_acc_interval_residual(log.states[k], log.controls[k], dt, s) for s in (1e-3, 5e-4, 2.5e-4)]
    r0, hmax = residuals[0]
    bound_ok = r0 <= 1e-4 * hmax
    decreasing = all(b[0] < a[0] for a, b in zip(residuals, residuals[1:]))
    report(2, xi_ok and bound_ok and decreasing,
           f"t^3 xi={rep.xi_estimate:.6f} (|xi-1/3| tol 1e-3); ACC interval t={log.times[k]:.1f} "
           f"u={log.controls[k, 0]:.1f}: residual {r0:.2e} vs 1e-4*max|h|={1e-4 * hmax:.2e}, "
           f"refinement {[f'{r:.1e}' for r, _ in residuals]}")


# ---------------------------------------------------------------- 3

def test_criterion_3_qp_oracle():
    worst_gap, worst_kkt, n_opt, mismatch = 0.0, 0.0, 0, 0
    for qp, ref in oracle_cases():
        sol = solve(qp)
        if sol.optimal:
            n_opt += 1
            worst_kkt = max(worst_kkt, kkt_residual(qp, sol))
            if ref is None:
                ref = grid_min(qp, sol.point, 5e-4, step=1e-5)[0]
            if ref is None:
                mismatch += 1
                continue
            worst_gap = max(worst_gap, abs(sol.objective - ref))
        elif ref is not None:
            mismatch += 1
    ok = worst_gap <= 1e-2 and worst_kkt <= 1e-8 and mismatch == 0
    report(3, ok, f"200 programs ({n_opt} optimal): max |obj - grid| {worst_gap:.2e} (tol 1e-2), "
                  f"max KKT residual {worst_kkt:.2e} (tol 1e-8), status mismatches {mismatch}")


# ---------------------------------------------------------------- 4

def _fallback_min_h(method, **kw):
    return run("acc", method, on_infeasible="fallback", **kw)[1].min_h_overall


def test_criterion_4_acc_safety_ordering():
    _, etlc, _ = run("acc", "etlc")
    _, tlc01, _ = run("acc", "tlc")
    _, tlc1, _ = run("acc", "tlc", dt=1.0)
    a = etlc.completed and etlc.min_h_overall >= 0
    b = tlc01.completed and tlc01.min_h_overall >= -0.5
    c = tlc1.completed and tlc1.min_h_overall < 0
    d = tlc1.completed and tlc01.completed and -tlc1.min_h_overall > -tlc01.min_h_overall
    fb = {k: _fallback_min_h(*args) for k, args in
          (("etlc", ("etlc",)), ("tlc0.1", ("tlc",)))}
    fb["tlc1"] = _fallback_min_h("tlc", dt=1.0)
    report(4, a and b and c and d,
           f"(a) etlc {_status(etlc)}, min h {etlc.min_h_overall:.3f} -> {a}; "
           f"(b) tlc dt=0.1 {_status(tlc01)}, min h {tlc01.min_h_overall:.3f} -> {b}; "
           f"(c) tlc dt=1 {_status(tlc1)}, min h {tlc1.min_h_overall:.3f} -> {c}; (d) {d}. "
           f"fallback policy min h: etlc {fb['etlc']:.2f}, tlc dt=0.1 {fb['tlc0.1']:.2f}, "
           f"tlc dt=1 {fb['tlc1']:.2f}")


# ---------------------------------------------------------------- 5

def _settles(result, target, tol):
    log = result.log
    if not log.completed:
        return False, float("nan")
    off = np.abs(log.states[:, 0] - target) > tol
    if off[-1]:
        return False, float("nan")
    last_off = np.nonzero(off)[0]
    k = 0 if last_off.size == 0 else int(last_off[-1]) + 1
    return log.times[k] < log.times[-1], float(log.times[k])


def test_criterion_5_acc_behavior():
    parts, all_ok = [], True
    for method in ("hocbf", "tlc", "etlc"):
        result, metrics, _ = run("acc", method)
        p = result.spec.params
        log = result.log
        starts = log.states[0, 0] == 24.0
        settled, t_s = _settles(result, p.v0, 0.5)
        box = result.spec.system.control_box
        in_box = bool(np.all(log.controls >= box.u_min) and np.all(log.controls <= box.u_max))
        activated = metrics.min_h_overall <= 0.1 * log.h_values["gap"][0]
        ok = starts and settled and in_box and activated
        all_ok &= ok
        parts.append(f"{method}: {_status(metrics)}, v(T)={log.states[-1, 0]:.3f}, "
                     f"settled by t={t_s:.1f}, controls in box {in_box} -> {ok}")
    report(5, all_ok, "; ".join(parts))


# ---------------------------------------------------------------- 6

def _containment_violations(result):
    log, boxes = result.log, result.policy.boxes
    events = np.asarray(log.event_times)
    bad = 0
    for t, x in zip(log.times[:-1], log.states[:-1]):
        k = int(np.searchsorted(events, t + 1e-12)) - 1
        if k >= 0 and detect_exit(x, boxes[k]):
            bad += 1
    return bad


def _densest_near_min(result):
    log = result.log
    h = log.h_values[result.spec.psi_chain]
    h_min = float(h.min())
    near = h <= h_min + 0.1 * abs(h_min)
    gaps = np.diff(log.event_times)
    if gaps.size == 0:
        return False
    j = int(np.argmin(gaps))
    t0, t1 = log.event_times[j], log.event_times[j + 1]
    window = log.times[near]
    return bool(window.size and window.min() <= t0 and t1 <= window.max())


def test_criterion_6_event_trigger():
    parts, ok = [], True
    for scenario in ("acc", "robot"):
        ev, ev_m, _ = run(scenario, "etlc")
        _, td_m, _ = run(scenario, "tlc")
        bad = _containment_violations(ev)
        dense = _densest_near_min(ev)
        equal_horizon = ev_m.completed and td_m.completed
        fewer = equal_horizon and ev_m.qp_count < td_m.qp_count
        rate_ev = ev_m.qp_count / max(ev_m.t_final, 1e-12)
        rate_td = td_m.qp_count / max(td_m.t_final, 1e-12)
        ok &= bad == 0 and dense and fewer
        parts.append(f"{scenario}: containment violations {bad}, smallest gap in near-min window "
                     f"{dense}, qp_count etlc {ev_m.qp_count} ({_status(ev_m)}) vs tlc {td_m.qp_count} "
                     f"({_status(td_m)}) -> fewer at equal horizon {fewer} "
                     f"[QPs/s {rate_ev:.1f} vs {rate_td:.1f}]")
    report(6, ok, "; ".join(parts))


# ---------------------------------------------------------------- 7

def _exact_rows(chain, points, dt):
    coeff = taylor_coefficients(chain.m, dt) * math.factorial(chain.m) / dt ** chain.m
    b, a = [], []
    for y in points:
        lf, lg = chain.evaluate(y)
        b.append(float(coeff @ lf))
        a.append(lg)
    return np.array(a), np.array(b)


def test_criterion_7_robust_conservatism():
    rng = np.random.default_rng(11)
    parts, ok = [], True
    for spec, dense in ((make_acc(), 25), (make_robot(), 7)):
        p = spec.params
        box_u = spec.system.control_box
        worst = np.inf
        for x in sample_envelope(spec, 100, rng):
            scale = rng.uniform(0.2, 1.0)
            box = StateBox(x, np.array(p.x_lower) * scale, np.array(p.x_up) * scale)
            sign = rng.choice([-1.0, 1.0], size=box_u.q)
            ext = [[0.0, box_u.u_max[k] if sign[k] > 0 else box_u.u_min[k]] for k in range(box_u.q)]
            U = np.array(list(itertools.product(*ext)))
            pts = box.grid(dense)
            for chain in spec.safety_chains:
                r = robust_bounds(chain, box, p.dt, sign, p.grid_per_dim)
                A, b = _exact_rows(chain, pts, p.dt)
                exact = A @ U.T + b[:, None]
                worst = min(worst, float(np.min(exact - (U @ r.G + r.h_r)[None, :])))
        ok &= worst >= -1e-9
        parts.append(f"{spec.name}: worst margin {worst:.3e} over 100 boxes x {dense}^{spec.system.n} samples")
    report(7, ok, "; ".join(parts) + " (tol -1e-9)")


# ---------------------------------------------------------------- 8

def test_criterion_8_robot():
    parts, all_ok = [], True
    for method in ("hocbf", "etlc"):
        result, metrics, _ = run("robot", method)
        log, p = result.log, result.spec.params
        xo, yo = p.obstacle
        clear = np.min((log.states[:, 0] - xo) ** 2 + (log.states[:, 1] - yo) ** 2) >= p.r ** 2
        box = result.spec.system.control_box
        limits = bool(np.all(log.states[:, 3] >= p.v_min) and np.all(log.states[:, 3] <= p.v_max)
                      and np.all(log.controls >= box.u_min) and np.all(log.controls <= box.u_max))
        near = metrics.completed and metrics.final_tracking_error <= 2.0
        ok = clear and limits and near
        all_ok &= ok
        parts.append(f"{method}: {_status(metrics)}, clearance {bool(clear)} (min h "
                     f"{metrics.min_h['obstacle']:.3f}), final distance {metrics.final_tracking_error:.2f} m, "
                     f"limits {limits} -> {ok}")
    report(8, all_ok, "; ".join(parts))


# ---------------------------------------------------------------- 9

def test_criterion_9_psi1_plane():
    parts, ok = [], True
    for scenario in ("acc", "robot"):
        for method in ("tlc", "etlc", "hocbf"):
            result, _, out = run(scenario, method)
            psi = read_csv(out / "psi1.csv")
            h = read_csv(out / "trajectory.csv")[f"h_{result.spec.psi_chain}"]
            if method == "hocbf":
                good = bool(np.all(psi["imag"] == 0.0))
            else:
                good = bool(np.all((psi["imag"] != 0.0) == (h != 0.0)))
            ok &= good
            parts.append(f"{scenario}/{method} {len(h)} rows {good}")
    report(9, ok, ", ".join(parts))


# ---------------------------------------------------------------- 10

def test_criterion_10_lie_chains():
    rng = np.random.default_rng(10)
    worst, names = 0.0, []
    specs = (make_acc(), make_robot(stability_mode="CLF_pair"), make_robot(stability_mode="TLS_m2"))
    for spec in specs:
        states = sample_envelope(spec, 100, rng)
        for chain in spec.all_chains():
            err = max(finite_diff_chain_check(spec.system, chain, x) for x in states)
            worst = max(worst, err)
            names.append(chain.name)
    report(10, worst <= 1e-4, f"{len(names)} chains x 100 states, worst relative error {worst:.2e} (tol 1e-4)")


if __name__ == "__main__":
    import sys

    status = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                status = 1
    sys.exit(status)
