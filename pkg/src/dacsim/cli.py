"""Command-line entry point.

Subcommands:

    dacsim run <config>            run one experiment, write artifacts
    dacsim sweep <config> --param tau --values 1,5,30
    dacsim report <results-dir>    summarize stored runs into a table
    dacsim validate <config>       parse + validate only

Exit codes: 0 success, 1 validation error, 2 runtime/training error,
3 ingestion error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import format_config, parse_config
from .errors import ConfigurationError, IngestionError, TrainingError
from .reporting import format_table, summarize_results, write_summary_csv
from .simulator import SWEEPABLE, run_experiment, run_sweep, write_artifacts

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_INGESTION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dacsim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config", help="path to a key=value config file")
    run.add_argument("--output-dir", help="override the config's output_dir")
    run.add_argument("--workers", type=int, default=1, help="round-parallel worker count")
    run.add_argument(
        "--dry-run", action="store_true", help="validate and echo the config, run nothing"
    )

    sweep = sub.add_parser("sweep", help="rerun one config over a list of parameter values")
    sweep.add_argument("config")
    sweep.add_argument("--param", required=True, help=f"one of: {', '.join(sorted(SWEEPABLE))}")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--output-dir", help="override the config's output_dir")
    sweep.add_argument("--workers", type=int, default=1)

    report = sub.add_parser("report", help="summarize accuracy.csv files under a directory")
    report.add_argument("results_dir")

    validate = sub.add_parser("validate", help="check a config file and echo the resolved config")
    validate.add_argument("config")
    return parser


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    if args.dry_run:
        print(format_config(config), end="")
        return EXIT_OK
    result = run_experiment(config, workers=args.workers)
    out = write_artifacts(result, config.output_dir)
    print(f"wrote {out}/accuracy.csv heatmap.csv metrics.jsonl config.echo")
    print(
        f"protocol={config.protocol} seed={config.seed} "
        f"mean_over_clusters={result.mean_over_clusters:.4f} "
        f"std_over_clusters={result.std_over_clusters:.4f}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = parse_config(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigurationError("--values is empty")
    results = run_sweep(config, args.param, raw_values, workers=args.workers)
    for value, result in zip(raw_values, results):
        out = write_artifacts(result, Path(config.output_dir) / f"{args.param}_{value}")
        print(
            f"{args.param}={value}: mean_over_clusters={result.mean_over_clusters:.4f} "
            f"-> {out}"
        )
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = summarize_results(args.results_dir)
    print(format_table(rows))
    summary_path = Path(args.results_dir) / "summary.csv"
    write_summary_csv(rows, summary_path)
    print(f"wrote {summary_path}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = parse_config(args.config)
    print(format_config(config), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "report": _cmd_report,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
