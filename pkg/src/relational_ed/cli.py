"""Command-line front end: ``relational-ed <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed acceptance check.  Every run that reaches its output directory
leaves a ``summary.json`` with a machine-readable status.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import scipy.fft

from . import __version__
from .config import parse_config
from .errors import ConfigError
from .runner import (
    NUMERICAL_ERRORS,
    RunOutcome,
    failure_summary,
    jsonable,
    run_best_match,
    run_evolve,
    run_parametrized,
    run_sample,
    write_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
COMMANDS = ("evolve", "best-match", "sample", "parametrized", "verify", "describe-config")

log = logging.getLogger("relational_ed")


def configure_logging(env=None) -> None:
    env = os.environ if env is None else env
    name = env.get("ED_LOG_LEVEL", "warn").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.captureWarnings(True)
    if level is None:
        log.warning("ignoring unknown ED_LOG_LEVEL %r; expected one of %s", name, ", ".join(LOG_LEVELS))


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("threads must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relational-ed", description="Relational entropic dynamics on a grid.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment file")
    common.add_argument("--output", type=Path, help="output directory (overrides [output] directory)")
    common.add_argument("--seed", type=_seed, help="sampler master seed (overrides [sampler] seed)")
    common.add_argument("--threads", type=_threads, default=1, help="worker threads, 0 for one per core")
    common.add_argument("--backend", choices=("cn", "split"), help="override the configured solver backend")
    common.add_argument("--strict", action="store_true", help="treat failed run checks as errors (exit 4)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "evolve": "integrate the shifted Schroedinger equation and record observables",
        "best-match": "analytic and numerical best-matching shifts for the initial state",
        "sample": "co-evolve an ontic trajectory ensemble and compare with |psi|^2",
        "parametrized": "evolve in label time with the configured lapse",
        "verify": "run the invariant suite and a reference run",
        "describe-config": "print the validated configuration with defaults filled in",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _resolve_threads(n: int) -> int:
    return (os.cpu_count() or 1) if n == 0 else n


def _dispatch(args, config, out: Path, threads: int) -> tuple[RunOutcome, int]:
    cmd = args.command
    if cmd == "evolve":
        outcome = run_evolve(config, out, args.backend)
        cc = outcome.summary["constraint_check"]
        failed = args.strict and not cc["passed"] and not cc["negative_control_detected"]
        return outcome, EXIT_CHECK if failed else EXIT_OK
    if cmd == "best-match":
        outcome = run_best_match(config, out, args.backend)
        gap = outcome.summary.get("analytic_vs_numerical", 0.0)
        return outcome, EXIT_CHECK if args.strict and gap > 1e-4 else EXIT_OK
    if cmd == "sample":
        outcome = run_sample(config, out, args.seed, threads, args.backend, strict=args.strict)
        tv = outcome.summary["density_comparison"]["total_variation"]
        return outcome, EXIT_CHECK if args.strict and tv >= 0.05 else EXIT_OK
    if cmd == "parametrized":
        return run_parametrized(config, out, args.backend), EXIT_OK
    from .verify import run_verify

    passed, summary = run_verify(out, args.seed, threads, args.backend, config)
    return RunOutcome(summary=summary), EXIT_OK if passed else EXIT_CHECK


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    cmd = args.command
    config = None
    try:
        if args.config is not None:
            config = parse_config(args.config)
        elif cmd != "verify":
            raise ConfigError(f"{cmd} needs --config PATH")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if cmd == "describe-config":
        print(json.dumps(jsonable(config.resolved), indent=2, sort_keys=True))
        return EXIT_OK

    out = args.output or (config.output_dir if config else Path("ed-output"))
    threads = _resolve_threads(args.threads)
    try:
        with scipy.fft.set_workers(threads):
            outcome, code = _dispatch(args, config, out, threads)
    except ConfigError as exc:
        code = EXIT_CONFIG
        summary = failure_summary(cmd, exc, code)
    except NUMERICAL_ERRORS as exc:
        code = EXIT_NUMERICAL
        summary = failure_summary(cmd, exc, code)
    else:
        summary = dict(outcome.summary)
        summary["status"] = "ok" if code == EXIT_OK else "error"
        summary["exit_code"] = code
        summary["reason"] = None if code == EXIT_OK else "check"
    if code in (EXIT_CONFIG, EXIT_NUMERICAL):
        print(f"{summary['reason']} error: {summary['error_type']}: {summary['message']}", file=sys.stderr)
    if config is not None:
        summary["config"] = config.resolved
    summary["threads"] = threads
    try:
        write_json(Path(out) / "summary.json", summary)
    except OSError as exc:
        print(f"cannot write summary to {out}: {exc}", file=sys.stderr)
        return code or EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
