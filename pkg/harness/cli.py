"""
Command-line entry point: ``python -m harness <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 acceptance failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from harness import experiments
from harness.acceptance import AcceptanceGate
from harness.config import ExperimentConfig, ExperimentSection, MalliavinSection, load_config
from harness.reporting import status_line, write_manifest, write_tables
from utils.errors import AcceptanceFailure, ConfigurationError, HawkesLabError
from utils.seeding import MASK64

logger = logging.getLogger("harness")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_ACCEPTANCE = 3

SUBCOMMANDS = (
    "constants",
    "simulate",
    "sigma2",
    "converge-marginal",
    "converge-functional",
    "lemmas",
    "malliavin",
    "discretize-error",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= value <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not value > 0.0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value experiment file")
    common.add_argument("--seed", type=_u64, help="master seed (overrides SEED and the config file)")
    common.add_argument("--out", help="output directory (overrides HAWKES_OUT_DIR and the config file)")
    common.add_argument("--replicas", type=_positive_int, help="replica count for this subcommand")
    common.add_argument("--workers", type=_positive_int, default=1, help="worker processes (default 1)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="hawkes-lab", description="Nonlinear compound Hawkes simulation and fCLT checks")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.add_parser("constants", parents=[common], help="rho, resolvent norm, moments, mean-intensity bound")
    simulate = sub.add_parser("simulate", parents=[common], help="simulate paths to CSV")
    simulate.add_argument("--horizon", type=_positive_float, help="path horizon (default: largest t_grid value)")
    sub.add_parser("sigma2", parents=[common], help="stationary estimate of sigma^2 = E[lambda]")
    sub.add_parser("converge-marginal", parents=[common], help="W1 of F_1 against N(0, sigma_tilde^2)")
    sub.add_parser("converge-functional", parents=[common], help="path-space W1 lower bounds")
    sub.add_parser("lemmas", parents=[common], help="cell-integral bound checks")
    sub.add_parser("malliavin", parents=[common], help="shift derivative bound and dichotomy checks")
    sub.add_parser("discretize-error", parents=[common], help="E sup |F - Pi_n F| over (T, n)")
    return parser


def _apply_replicas(cfg: ExperimentConfig, command: str, replicas: Optional[int]) -> None:
    """Route --replicas to the section the subcommand reads."""
    if replicas is None or command in ("constants", "simulate"):
        return
    try:
        if command == "malliavin":
            cfg.malliavin = MalliavinSection.model_validate({**cfg.malliavin.model_dump(), "replicas": replicas})
            return
        key = "sigma2_replicas" if command == "sigma2" else "replicas"
        cfg.experiment = ExperimentSection.model_validate({**cfg.experiment.model_dump(), key: replicas})
    except ValueError as exc:
        raise ConfigurationError(f"--replicas {replicas}: {exc}") from exc


def _drivers(args) -> Dict[str, Callable[[ExperimentConfig], experiments.Report]]:
    w = args.workers
    return {
        "constants": lambda cfg: experiments.run_constants(cfg),
        "simulate": lambda cfg: experiments.run_simulate(cfg, args.horizon, args.replicas or 1),
        "sigma2": lambda cfg: experiments.run_sigma2(cfg, w),
        "converge-marginal": lambda cfg: experiments.run_marginal_convergence(cfg, w),
        "converge-functional": lambda cfg: experiments.run_functional_convergence(cfg, w),
        "lemmas": lambda cfg: experiments.run_lemma_checks(cfg, w),
        "malliavin": lambda cfg: experiments.run_malliavin(cfg, w),
        "discretize-error": lambda cfg: experiments.run_discretization(cfg, w),
    }


def _print_summary(report: experiments.Report) -> None:
    for key, value in report.summary.items():
        print(f"   {key}: {value:.6g}" if isinstance(value, float) else f"   {key}: {value}")
    for row in report.controls:
        print(status_line(row.cell, row.passed))
    for row in report.checks:
        print(status_line(row.cell, row.passed, f"{row.value:.6g} (tolerance {row.tolerance:.6g})"))


def run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    _apply_replicas(cfg, args.command, args.replicas)
    logger.info("%s: seed %d, config %s", args.command, cfg.master_seed, cfg.source or "<defaults>")

    report = _drivers(args)[args.command](cfg)
    out_dir = Path(cfg.output_dir) / args.command
    outputs = write_tables(out_dir, report.tables)
    write_manifest(out_dir, cfg, args.command, outputs, args.workers, args.replicas)
    _print_summary(report)
    print(f"📂 {len(outputs)} table(s) written to {out_dir}")

    if report.checks:
        AcceptanceGate.enforce(report.checks)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")

    load_dotenv()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except AcceptanceFailure as exc:
        print(status_line("acceptance", False, str(exc)), file=sys.stderr)
        return EXIT_ACCEPTANCE
    except HawkesLabError as exc:
        print(status_line(args.command, False, str(exc)), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
