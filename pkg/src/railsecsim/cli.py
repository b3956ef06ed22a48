"""Command line entry points: run, validate, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .scenario import ScenarioError, load_scenario, validate_scenario
from .sim import ValidationError


def _cmd_run(args: argparse.Namespace) -> int:
    from .runner import run_scenario
    try:
        result = run_scenario(Path(args.scenario), seed=args.seed,
                              out_dir=Path(args.out) if args.out else None,
                              until=args.until)
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = result.report
    print(f"scenario   : {report['scenario']}")
    print(f"seed       : {report['seed']}")
    print(f"events     : {result.summary.events_dispatched}")
    print(f"trace hash : {result.summary.trace_hash}")
    print(f"availability: {report['availability']:.4f}")
    print(f"unsafe     : {report['unsafe_state_count']}")
    print(f"alerts     : {len(report['alerts'])}")
    print(f"verdict    : {report['verdict']}")
    return 0 if report["verdict"] == "pass" else 2


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(Path(args.scenario))
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    violations = validate_scenario(scenario)
    for violation in violations:
        print(f"{violation.grade}: {violation.kind} {violation.subject} {violation.detail}".rstrip())
    errors = [v for v in violations if v.grade == "error"]
    if not violations:
        print("ok: no violations")
    return 1 if errors else 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve_scenario
    try:
        serve_scenario(Path(args.scenario), port=args.port,
                       realtime_factor=args.realtime_factor,
                       out_dir=Path(args.out) if args.out else None,
                       host=args.host, linger_s=args.linger)
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railsecsim",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario headlessly")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help="directory for trace.jsonl/report.json/events.jsonl")
    p_run.add_argument("--until", type=int, default=None, help="stop at this sim time (ms)")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a scenario and its topology")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_serve = sub.add_parser("serve", help="run with the live operator API")
    p_serve.add_argument("--scenario", required=True)
    p_serve.add_argument("--port", type=int, required=True)
    p_serve.add_argument("--realtime-factor", type=float, default=1.0,
                         help="sim ms advanced per wall ms")
    p_serve.add_argument("--out", default=None)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--linger", type=float, default=5.0,
                         help="seconds to keep serving after the run finishes")
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
