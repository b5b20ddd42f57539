"""
Command-line interface: run | dsa | psa | update | validate | diagram

Exit codes: 0 success, 1 model or run error (one `error: ...` line on stderr),
2 usage error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .config import configure_logging, get_settings
from .errors import MarkovCeaError
from .reports import (
    format_dsa_summary,
    format_heterogeneity_summary,
    format_psa_summary,
    format_run_summary,
    write_dsa_reports,
    write_heterogeneity_reports,
    write_psa_reports,
    write_run_reports,
)
from .service import CohortModelService
from .uncertainty import psa_summary

logger = logging.getLogger(__name__)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _thresholds(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None
    if not values or any(value < 0 for value in values):
        raise argparse.ArgumentTypeError("thresholds must be non-negative numbers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markovcea",
        description="Markov cohort models and cost-effectiveness analysis from TOML model documents",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="Logging level (default: MARKOVCEA_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def model_command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("model", type=Path, help="Model document (TOML)")
        return sub

    def analysis_options(sub: argparse.ArgumentParser, threads: bool = True) -> None:
        sub.add_argument("--out", type=Path, help="Output directory (default: MARKOVCEA_OUT_DIR or .)")
        sub.add_argument("--cycles", type=_positive_int, help="Override the number of cycles")
        sub.add_argument("--method", help="Override the counting method (start, end, life-table)")
        if threads:
            sub.add_argument("--threads", type=_positive_int, help="Worker processes; results do not change")

    run = model_command("run", "Run every strategy and write counts, values and totals")
    analysis_options(run, threads=False)
    run.add_argument("--thresholds", type=_thresholds, help="Comma-separated willingness-to-pay values for NMB")

    dsa = model_command("dsa", "One-way deterministic sensitivity analysis over the [dsa] bounds")
    analysis_options(dsa)

    psa = model_command("psa", "Probabilistic sensitivity analysis over the [psa] distributions")
    analysis_options(psa)
    psa.add_argument("--draws", type=_positive_int, required=True, help="Number of PSA draws")
    psa.add_argument("--seed", type=_non_negative_int, required=True, help="Random seed")
    psa.add_argument("--thresholds", type=_thresholds, help="Comma-separated willingness-to-pay grid for CEAC/EVPI")

    update = model_command("update", "Heterogeneity analysis over a population table")
    analysis_options(update)
    update.add_argument("--population", type=Path, help="Population CSV (default: the [population] section)")

    model_command("validate", "Load and validate a model document")

    diagram = model_command("diagram", "Print the transition diagram of a strategy as Graphviz DOT")
    diagram.add_argument("strategy", help="Strategy name")
    return parser


def _out_dir(args: argparse.Namespace) -> Path:
    return args.out if args.out is not None else get_settings().out_dir


def _workers(args: argparse.Namespace) -> int:
    return args.threads if getattr(args, "threads", None) is not None else get_settings().threads


def _print_paths(paths) -> None:
    for path in paths.values():
        print(f"wrote {path}")


def _run(args: argparse.Namespace) -> int:
    service = CohortModelService.from_path(args.model)
    result = service.run(args.cycles, args.method)
    thresholds = args.thresholds or service.document.thresholds
    print(format_run_summary(result, service.initial_counts(), thresholds))
    _print_paths(write_run_reports(result, _out_dir(args), thresholds))
    return 0


def _dsa(args: argparse.Namespace) -> int:
    service = CohortModelService.from_path(args.model, _workers(args))
    table = service.dsa(args.cycles, args.method)
    print(format_dsa_summary(table))
    _print_paths(write_dsa_reports(table, _out_dir(args)))
    return 0


def _psa(args: argparse.Namespace) -> int:
    service = CohortModelService.from_path(args.model, _workers(args))
    result = service.psa(args.draws, args.seed, args.cycles, args.method)
    cohort = float(sum(service.initial_counts().values()))
    print(format_psa_summary(psa_summary(result), result.draws, cohort))
    _print_paths(write_psa_reports(result, _out_dir(args), service.thresholds(args.thresholds)))
    return 0


def _update(args: argparse.Namespace) -> int:
    service = CohortModelService.from_path(args.model, _workers(args))
    result = service.update(args.population, args.cycles, args.method)
    cohort = float(sum(service.initial_counts().values()))
    print(format_heterogeneity_summary(result, cohort))
    _print_paths(write_heterogeneity_reports(result, _out_dir(args)))
    return 0


def _validate(args: argparse.Namespace) -> int:
    info = CohortModelService.from_path(args.model).validate()
    print(f"{args.model}: ok")
    for key, value in info.items():
        text = ", ".join(str(item) for item in value) if isinstance(value, list) else str(value)
        print(f"  {key}: {text}")
    return 0


def _diagram(args: argparse.Namespace) -> int:
    sys.stdout.write(CohortModelService.from_path(args.model).diagram(args.strategy))
    return 0


COMMANDS = {
    "run": _run,
    "dsa": _dsa,
    "psa": _psa,
    "update": _update,
    "validate": _validate,
    "diagram": _diagram,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the `markovcea` command"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
    except ValidationError as exc:
        print(f"error: invalid environment settings: {exc.errors()[0]['msg']}", file=sys.stderr)
        return 1
    try:
        configure_logging(args.log_level.upper() if args.log_level else settings.log_level)
    except ValueError:
        parser.error(f"unknown log level '{args.log_level}'")
    try:
        return COMMANDS[args.command](args)
    except MarkovCeaError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
