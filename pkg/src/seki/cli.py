"""Command-line entry point.

    seki run --config cfg.json [--experiment ct|cs|validate] [--scale f]
             [--seed n] [--out dir] [--solvers a,b] [--override key=value ...]
    seki figures [--experiment ct|cs] [--scale f] [--seed n] [--out dir] ...

Exit codes: 0 success, 2 configuration error, 3 numerical failure (a run
produced non-finite values, or a validation check failed).
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericalError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seki",
        description=("Subgradient ensemble Kalman inversion benchmarks "
                     "and validation suite"),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--experiment", choices=["ct", "cs", "validate"])
        p.add_argument("--scale", type=float,
                       help="problem-size fraction in (0, 1]")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--solvers", help="comma-separated solver list")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted config override, e.g. cs.rho=0.98")

    run_p = sub.add_parser("run", help="run one experiment or the validation suite")
    common(run_p)
    fig_p = sub.add_parser("figures",
                           help="emit benchmark figure CSVs and PNG renders")
    common(fig_p)
    fig_p.add_argument("--no-render", action="store_true",
                       help="emit CSV series only, skip PNG rendering")
    return parser


def _config_from_args(args) -> dict:
    from .experiments import load_config, validate_config

    config = load_config(args.config, args.override)
    if args.experiment is not None:
        config["experiment"] = args.experiment
    if args.scale is not None:
        config["scale"] = args.scale
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    if args.solvers is not None:
        config["solvers"] = [s.strip() for s in args.solvers.split(",") if s.strip()]
    validate_config(config)
    return config


def _run_validate(config: dict) -> int:
    from .validation import run_validation_suite, write_report

    results = run_validation_suite()
    os.makedirs(config["out"], exist_ok=True)
    path = os.path.join(config["out"], "validation_report.csv")
    write_report(results, path)
    failed = [r.check_name for r in results if not r.passed]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status} {r.check_name}: {r.metric} = {r.value:.6g} "
              f"(threshold {r.threshold:g})")
    print(f"report written to {path}")
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}",
              file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "run":
            if config["experiment"] == "validate":
                return _run_validate(config)
            from .experiments import run_experiment

            result = run_experiment(config)
            print(f"wrote {result['summary_path']}")
            return 0
        # figures
        from .experiments import reproduce_figures

        experiments = ("cs", "ct")
        if config["experiment"] in ("cs", "ct"):
            experiments = (config["experiment"],)
        if args.scale is None and config["scale"] == 1.0:
            config["scale"] = 0.25
        written = reproduce_figures(config, experiments=experiments,
                                    render=not args.no_render)
        print(f"wrote {len(written)} files under {config['out']}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
