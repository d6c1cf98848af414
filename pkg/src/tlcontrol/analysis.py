"""Run orchestration, metrics and file outputs for the benchmark scenarios.

A run produces, inside its output directory::

    trajectory.csv   t, states, controls, slack, h_<constraint>
    psi1.csv         t, real, imag of L_f h + p1 h on the first safety chain
    events.csv       event_index, t, inter_event_gap (event-triggered runs)
    metrics.json     fixed key set, absent values as null
    *.svg            time histories, psi1 plane and (robot) the xy path

Floats in CSV files are written with 17 significant digits so reading a file
back gives the logged values bit for bit.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .certificates import (ClassKSpec, barrier_row_from_roots, complex_roots,
                           finite_diff_chain_check, hocbf_row, psi1_trace,
                           verify_taylor_identity, zoh_tlc_row)
from .controller import MethodKind, time_driven_policy
from .dynamics import SimulationLog, run_closed_loop
from .event_trigger import event_triggered_policy
from .scenarios import PARAMS, ScenarioSpec, default_configs, make_scenario, sample_envelope

METHODS = ("hocbf", "tlc", "etlc")

METRIC_KEYS = (
    "scenario", "method", "completed", "t_final", "n_samples", "min_h", "min_h_overall",
    "final_tracking_error", "qp_count", "control_effort", "event_count", "min_event_gap",
    "mean_event_gap", "violation_duration", "peak_abs_control_approach", "fallback_steps",
    "fault", "config",
)


class ConfigError(ValueError):
    """Bad scenario, method, override key or override value."""


@dataclass
class RunRequest:
    scenario: str
    method: str
    overrides: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in PARAMS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {sorted(PARAMS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {list(METHODS)}")
        known = {f.name for f in dataclasses.fields(PARAMS[self.scenario])}
        unknown = sorted(set(self.overrides) - known)
        if unknown:
            raise ConfigError(f"unknown {self.scenario} parameter(s): {', '.join(unknown)}")
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    @property
    def label(self) -> str:
        if not self.overrides:
            return self.method
        extra = ",".join(f"{k}={_fmt_value(v)}" for k, v in sorted(self.overrides.items()))
        return f"{self.method}[{extra}]"


def _fmt_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt_value(i) for i in v) + "]"
    return str(v)


def parse_value(text: str):
    """JSON literal if it parses (lists become tuples), else the raw string."""
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return text
    return tuple(value) if isinstance(value, list) else value


def parse_assignments(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def load_config(path) -> dict:
    """Flat JSON object of parameter overrides."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


def parse_request(text: str, out_dir=None) -> RunRequest:
    """``scenario:method[:k=v,k=v]``; commas inside ``[...]`` belong to the value."""
    parts = text.split(":", 2)
    if len(parts) < 2:
        raise ConfigError(f"request {text!r} must look like scenario:method[:k=v,...]")
    overrides = {}
    if len(parts) == 3 and parts[2]:
        overrides = parse_assignments(re.split(r",(?![^\[]*\])", parts[2]))
    return RunRequest(parts[0], parts[1], overrides, out_dir)


def build_params(request: RunRequest):
    try:
        return dataclasses.replace(PARAMS[request.scenario](), **request.overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunResult:
    spec: ScenarioSpec
    log: SimulationLog
    policy: object
    config: object
    event_settings: object
    echo: dict

    @property
    def monitor_dt(self) -> float:
        return self.event_settings.monitor_dt if self.config.method.kind is MethodKind.EVENT_TLC else self.config.dt


def simulate(request: RunRequest) -> RunResult:
    """Run the closed loop; a controller fault leaves ``log.fault`` set instead of raising."""
    params = build_params(request)
    try:
        spec = make_scenario(request.scenario, params)
        cfg, event, echo = default_configs(spec, request.method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.method.kind is MethodKind.EVENT_TLC:
        policy = event_triggered_policy(spec, cfg, event.monitor_dt, (event.x_lower, event.x_up),
                                        event.grid_per_dim)
        step = event.monitor_dt
    else:
        policy = time_driven_policy(spec, cfg)
        step = cfg.dt
    log = run_closed_loop(spec.system, policy, cfg.t_end, step, cfg.substeps, spec.x0,
                          spec.safety_functions(), raise_on_fault=False)
    return RunResult(spec, log, policy, cfg, event, echo)


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    scenario: str
    method: str
    completed: bool
    t_final: float
    n_samples: int
    min_h: dict
    min_h_overall: Optional[float]
    final_tracking_error: float
    qp_count: int
    control_effort: float
    event_count: Optional[int]
    min_event_gap: Optional[float]
    mean_event_gap: Optional[float]
    violation_duration: float
    peak_abs_control_approach: list
    fallback_steps: int
    fault: Optional[dict]
    config: dict

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: _json_safe(d[k]) for k in METRIC_KEYS}


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(i) for k, i in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(i) for i in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    return v


def event_gaps(event_times: Sequence[float]) -> np.ndarray:
    return np.diff(np.asarray(event_times, dtype=float))


def compute_metrics(result: RunResult, method: str) -> MetricsReport:
    log, spec = result.log, result.spec
    t = log.times
    h = np.array([log.h_values[c.name] for c in spec.safety_chains])
    min_h = {c.name: float(h[i].min()) for i, c in enumerate(spec.safety_chains)}
    effort = float(np.trapezoid(np.sum(log.controls ** 2, axis=1), t)) if len(t) > 1 else 0.0

    # piecewise constant from the left sample: an interval counts if it starts unsafe
    unsafe = np.any(h < 0, axis=0)
    violation = float(np.sum(np.diff(t)[unsafe[:-1]])) if len(t) > 1 else 0.0

    # approach phase: up to the minimum of the primary safety function
    k_min = int(np.argmin(log.h_values[spec.psi_chain]))
    peak = np.max(np.abs(log.controls[:k_min + 1]), axis=0).tolist()

    event_count = min_gap = mean_gap = None
    if method == "etlc":
        gaps = event_gaps(log.event_times)
        event_count = len(log.event_times)
        if gaps.size:
            min_gap, mean_gap = float(gaps.min()), float(gaps.mean())

    return MetricsReport(
        scenario=spec.name, method=method, completed=log.completed, t_final=float(t[-1]),
        n_samples=len(t), min_h=min_h, min_h_overall=min(min_h.values()),
        final_tracking_error=float(spec.tracking_error(log.states[-1])),
        qp_count=log.qp_count, control_effort=effort, event_count=event_count,
        min_event_gap=min_gap, mean_event_gap=mean_gap, violation_duration=violation,
        peak_abs_control_approach=peak, fallback_steps=len(log.fallback_times),
        fault=log.fault, config=result.echo)


# ---------------------------------------------------------------- csv io

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_columns(spec: ScenarioSpec) -> list[str]:
    sys = spec.system
    return (["t"] + list(sys.state_names) + list(sys.control_names) + ["slack"]
            + [f"h_{c.name}" for c in spec.safety_chains])


def trajectory_table(result: RunResult) -> np.ndarray:
    log, spec = result.log, result.spec
    h = [log.h_values[c.name][:, None] for c in spec.safety_chains]
    return np.hstack([log.times[:, None], log.states, log.controls, log.slack[:, None]] + h)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> dict:
    """Column name -> float array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def psi1_rows(result: RunResult) -> np.ndarray:
    """``(t, Re, Im)`` of ``L_f h + p1 h`` along the trajectory.

    The time-driven and event-triggered certificates use the complex
    ``p1 = (1 - i)/dt``; the barrier baseline uses its first real gain.
    """
    spec, cfg, log = result.spec, result.config, result.log
    chain = spec.chain(spec.psi_chain)
    p1 = cfg.method.hocbf_params.coefficients[0] if cfg.method.kind is MethodKind.HOCBF else None
    vals = [psi1_trace(chain, x, cfg.dt, p1) for x in log.states]
    return np.column_stack([log.times, [v.real for v in vals], [v.imag for v in vals]])


def event_rows(event_times: Sequence[float]) -> list:
    rows, prev = [], None
    for i, t in enumerate(event_times):
        rows.append((i, t, float("nan") if prev is None else t - prev))
        prev = t
    return rows


def write_outputs(result: RunResult, metrics: MetricsReport, out_dir, plots: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "trajectory.csv", out / "psi1.csv", out / "metrics.json"]
    write_csv(written[0], trajectory_columns(result.spec), trajectory_table(result))
    write_csv(written[1], ["t", "real", "imag"], psi1_rows(result))
    if metrics.method == "etlc":
        written.append(out / "events.csv")
        write_csv(written[-1], ["event_index", "t", "inter_event_gap"], event_rows(result.log.event_times))
    written[2].write_text(json.dumps(metrics.to_dict(), indent=2, allow_nan=False) + "\n")
    if plots:
        from .plots import render_run
        written += render_run(result, psi1_rows(result), out)
    return written


def run(request: RunRequest, plots: bool = True) -> MetricsReport:
    """Simulate, compute metrics and, if ``request.out_dir`` is set, write the files."""
    result = simulate(request)
    metrics = compute_metrics(result, request.method)
    if request.out_dir is not None:
        write_outputs(result, metrics, request.out_dir, plots)
    return metrics


# ---------------------------------------------------------------- compare

COMPARE_COLUMNS = ("label", "method", "completed", "t_final", "min_h", "violates_safety", "qp_count",
                   "fewest_qps", "control_effort", "final_tracking_error", "peak_abs_u0_approach",
                   "fallback_steps")


def compare(requests: Sequence[RunRequest], out_dir=None, plots: bool = True) -> list[dict]:
    """Run every request and line up their metrics.

    Each member run writes into ``out_dir/<index>_<method>``; the table is
    written to ``comparison.csv`` and ``comparison.txt``.
    """
    if len(requests) < 2:
        raise ConfigError("compare needs at least two requests")
    scenarios = {r.scenario for r in requests}
    if len(scenarios) != 1:
        raise ConfigError(f"compare needs a single scenario, got {sorted(scenarios)}")
    reports = []
    for i, req in enumerate(requests):
        member = dataclasses.replace(req, out_dir=None if out_dir is None else Path(out_dir) / f"{i:02d}_{req.method}")
        reports.append((req.label, run(member, plots)))
    fewest = min(m.qp_count for _, m in reports)
    table = []
    for label, m in reports:
        table.append({
            "label": label, "method": m.method, "completed": m.completed, "t_final": m.t_final,
            "min_h": m.min_h_overall, "violates_safety": m.min_h_overall < 0,
            "qp_count": m.qp_count, "fewest_qps": m.qp_count == fewest,
            "control_effort": m.control_effort, "final_tracking_error": m.final_tracking_error,
            "peak_abs_u0_approach": m.peak_abs_control_approach[0],
            "fallback_steps": m.fallback_steps,
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, COMPARE_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in table:
                w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})
        (out / "comparison.txt").write_text(format_table(table) + "\n")
    return table


def format_table(rows: Sequence[dict], columns: Sequence[str] = COMPARE_COLUMNS) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)
    cells = [[cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


# ---------------------------------------------------------------- verify

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def verify(n_states: int = 100, seed: int = 0) -> list[CheckResult]:
    """Self-checks of the certificate algebra and every shipped Lie chain."""
    rng = np.random.default_rng(seed)
    checks = []

    t = np.linspace(0.0, 1.0, 2001)
    rep = verify_taylor_identity(t, t ** 3, 2, derivatives_at_t0=[0.0, 0.0])
    ok = rep.xi_estimate is not None and abs(rep.xi_estimate - 1.0 / 3.0) <= 1e-3
    checks.append(CheckResult("taylor identity h=t^3, m=2", ok,
                              f"xi={rep.xi_estimate}, residual={rep.residual:.2e}"))

    specs = [make_scenario("acc"), make_scenario("robot"),
             make_scenario("robot", dataclasses.replace(PARAMS["robot"](), stability_mode="TLS_m2"))]
    for spec in specs:
        states = sample_envelope(spec, n_states, rng)
        tag = spec.name + ("/" + spec.params.stability_mode if spec.name == "robot" else "")
        for chain in spec.all_chains():
            err = max(finite_diff_chain_check(spec.system, chain, x) for x in states)
            checks.append(CheckResult(f"chain {tag}:{chain.name}", err <= 1e-4, f"max rel err {err:.2e}"))

    dt = 0.1
    roots = complex_roots(dt)
    for spec in specs[:2]:
        worst = 0.0
        for x in sample_envelope(spec, n_states, rng):
            for chain in spec.safety_chains:
                tlc = zoh_tlc_row(chain, x, dt)
                ref = (hocbf_row(chain, x, ClassKSpec((1.0 / dt,))) if chain.m == 1
                       else barrier_row_from_roots(chain, x, (roots.p1, roots.p2)))
                worst = max(worst, _row_rel_diff(tlc, ref))
        checks.append(CheckResult(f"tlc row equals barrier row ({spec.name})", worst <= 1e-12,
                                  f"max rel diff {worst:.2e}"))
    return checks


def _row_rel_diff(r1, r2) -> float:
    c1 = np.append(r1.a, r1.b)
    c2 = np.append(r2.a, r2.b)
    scale = max(float(np.max(np.abs(c1))), float(np.max(np.abs(c2))), 1e-300)
    return float(np.max(np.abs(c1 - c2))) / scale


def format_checks(checks: Sequence[CheckResult]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name.ljust(width)}  {c.detail}" for c in checks]
    n_pass = sum(c.passed for c in checks)
    lines.append(f"{n_pass}/{len(checks)} checks passed")
    return "\n".join(lines)
