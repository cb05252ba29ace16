"""Command-line scenario runner.

    compute-oversight report --scenario eo-threshold --out out/
    compute-oversight simulate --scenario my.yaml --seed 3 --out out/ --format text

``--scenario`` takes a path or the name of a bundled scenario.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

from .scenario import (
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    SUBCOMMAND_STAGES,
    ScenarioError,
    bundled_scenarios,
    format_summary,
    load_scenario,
    run_pipeline,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compute-oversight", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "generate telemetry traces",
        "account": "simulate, then estimate compute and check thresholds",
        "classify": "simulate, account, then classify workloads against declarations",
        "kyc": "verify customer identities and assign risk tiers",
        "federate": "simulate, account, then exchange digests and detect structuring",
        "report": "run every stage and emit regulator reports",
    }
    for name in SUBCOMMAND_STAGES:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--format", choices=("text", "jsonl"), default="text", help="summary format")
        p.add_argument(
            "--legal-hold",
            action="append",
            default=[],
            metavar="CUSTOMER_ID",
            help="place a legal hold on a customer's records (repeatable)",
        )
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def resolve_scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    raise ScenarioError(f"no such scenario file or bundled scenario: {name!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in bundled_scenarios():
            print(name)
        return 0
    try:
        scenario = load_scenario(resolve_scenario_path(args.scenario))
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
        unknown = sorted(set(args.legal_hold) - {a.customer_id for a in scenario.accounts})
        if unknown:
            raise ScenarioError(f"unknown customer {unknown[0]!r}", field="--legal-hold")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        result = run_pipeline(
            scenario, args.out, SUBCOMMAND_STAGES[args.command], args.format, tuple(args.legal_hold)
        )
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(format_summary(result.summary))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
