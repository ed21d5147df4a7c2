"""Command-line interface.

Subcommands: ``classify`` (moment report + verdict for a spec file),
``simulate`` (run an experiment config), ``beta`` (root solver),
``validate`` (run and require verdict agreement), ``suite`` (acceptance
battery).  Errors map to stable exit codes; ``--error-json`` switches
error reporting to one machine-readable JSON object on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import errors
from .harness import default_parallelism, load_config, run_experiment
from .moments import moment_report, solve_beta
from .classify import classify_speed
from .environment import load_spec
from .suite import SUITE_SEED_DEFAULT, run_suite

EXIT_CODES = {
    errors.MalformedConfig: 2,
    errors.RejectP1Half: 3,
    errors.RejectNoZeroCookies: 3,
    errors.RejectMomentBlowup: 3,
    errors.OutOfDomain: 4,
    errors.RegimeMismatch: 5,
    errors.NoConvergence: 6,
    errors.NotTransientEnough: 8,
    errors.InvalidGap: 9,
    errors.CouplingPreconditionFailed: 10,
    errors.NotCookieFree: 11,
    errors.UnsupportedMLaw: 12,
}
EXIT_INCONSISTENT = 7


def _apply_overrides(config, args):
    if args.seed is not None:
        config.master_seed = args.seed
    if args.replicas is not None:
        config.replicas = args.replicas
    if args.horizon is not None:
        config.horizon = args.horizon
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    return config


def cmd_classify(args) -> int:
    spec = load_spec(args.spec)
    report = moment_report(spec)
    verdict = classify_speed(report)
    print(
        json.dumps(
            {"moment_report": report.to_json_dict(), "verdict": verdict.to_json_dict()},
            indent=2,
        )
    )
    return 0


def cmd_beta(args) -> int:
    spec = load_spec(args.spec)
    beta, gamma = solve_beta(spec, tol=args.tol)
    print(json.dumps({"beta": beta, "gamma": gamma, "tol": args.tol}))
    return 0


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    report = run_experiment(config)
    doc = report.to_json_dict()
    doc.pop("config", None)
    print(json.dumps(doc, indent=2, default=str))
    return 0


def cmd_validate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    report = run_experiment(config)
    print(
        json.dumps(
            {
                "agreement": report.agreement,
                "verdict": report.verdict.to_json_dict(),
                "aggregates": report.aggregates,
            },
            indent=2,
            default=str,
        )
    )
    return EXIT_INCONSISTENT if report.agreement == "inconsistent" else 0


def cmd_suite(args) -> int:
    results = run_suite(
        master_seed=args.seed if args.seed is not None else SUITE_SEED_DEFAULT,
        scale=args.scale,
        out_dir=args.out_dir,
        echo=print,
    )
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cookiewalk",
        description="Monte Carlo lab for cookie-perturbed walks in random environments",
    )
    parser.add_argument(
        "--error-json",
        action="store_true",
        help="report errors as one JSON object on stdout",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="print moment report and verdict for a spec file")
    p.add_argument("spec")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("beta", help="solve E[rho^beta log rho] = 0 for a spec file")
    p.add_argument("spec")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_beta)

    for name, func, help_text in (
        ("simulate", cmd_simulate, "run an experiment config"),
        ("validate", cmd_validate, "run an experiment and require verdict agreement"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("suite", help="run the acceptance battery")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except errors.CookieWalkError as exc:
        code = EXIT_CODES.get(type(exc), 1)
        if args.error_json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}))
        else:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except FileNotFoundError as exc:
        if args.error_json:
            print(json.dumps({"error": "FileNotFoundError", "message": str(exc), "exit_code": 2}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
