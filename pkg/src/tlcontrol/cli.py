"""Command-line entry point.

::

    tlcontrol run --scenario acc --method etlc --out out/acc_etlc
    tlcontrol run --scenario acc --method tlc --set dt=1 --out out/acc_tlc_dt1
    tlcontrol compare --out out/cmp acc:tlc acc:etlc
    tlcontrol verify

Exit codes: 0 success, 1 failed verify check, 2 controller fault,
3 configuration error.
"""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .analysis import (ConfigError, RunRequest, compare, format_checks, format_table,
                       load_config, parse_assignments, parse_request, run, verify)

EXIT_OK, EXIT_CHECK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2, 3

SUMMARY_KEYS = ("scenario", "method", "completed", "t_final", "min_h_overall", "final_tracking_error",
                "qp_count", "control_effort", "event_count", "min_event_gap", "mean_event_gap",
                "violation_duration", "fallback_steps")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tlcontrol", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario/method pair")
    r.add_argument("--scenario", required=True, choices=("acc", "robot"))
    r.add_argument("--method", required=True, choices=("hocbf", "tlc", "etlc"))
    r.add_argument("--config", help="JSON file of parameter overrides")
    r.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                   help="parameter override; repeatable, applied after --config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--no-plots", action="store_true", help="skip the SVG figures")

    c = sub.add_parser("compare", help="run several requests on one scenario and tabulate")
    c.add_argument("--out", required=True)
    c.add_argument("--no-plots", action="store_true")
    c.add_argument("requests", nargs="+", metavar="REQ", help="scenario:method[:key=value,...]")

    v = sub.add_parser("verify", help="Taylor-identity, row-equivalence and Lie-chain checks")
    v.add_argument("--states", type=int, default=100, help="random states per chain")
    v.add_argument("--seed", type=int, default=0)
    return ap


def _print_summary(metrics) -> None:
    d = metrics.to_dict()
    print("-" * 60)
    for k in SUMMARY_KEYS:
        print(f"{k}\t{d[k]}")
    for name, val in d["min_h"].items():
        print(f"min_h[{name}]\t{val}")
    if d["fault"] is not None:
        print(f"fault\t{d['fault']['message']}")
    print("-" * 60)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            overrides = load_config(args.config) if args.config else {}
            overrides.update(parse_assignments(args.assignments))
            req = RunRequest(args.scenario, args.method, overrides, args.out)
            metrics = run(req, plots=not args.no_plots)
            _print_summary(metrics)
            print(f"outputs written to {req.out_dir}")
            return EXIT_OK if metrics.completed else EXIT_FAULT

        if args.command == "compare":
            reqs = [parse_request(text) for text in args.requests]
            table = compare(reqs, args.out, plots=not args.no_plots)
            print(format_table(table))
            print(f"outputs written to {args.out}")
            return EXIT_OK if all(row["completed"] for row in table) else EXIT_FAULT

        checks = verify(args.states, args.seed)
        print(format_checks(checks))
        return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
