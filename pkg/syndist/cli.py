"""Command-line entrypoint: ``python -m syndist {run,verify,serve}``.

Exit status is 0 on success, 1 when a run or check fails and 2 when the
configuration is invalid.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from syndist.config import LOG_FORMAT, get_settings
from syndist.errors import ConfigError, SyndistError
from syndist.experiment import PRESETS, apply_overrides, preset, run_experiment
from syndist.io import load_config
from syndist.schemas import ExperimentConfig
from syndist.verify import DEFAULT_FD_TOL, format_table, run_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syndist", description="Self-supervised distance refinement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment and write metrics, report and figures.")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=Path, help="Experiment config (.json or .toml).")
    source.add_argument("--preset", choices=sorted(PRESETS), help="Built-in experiment.")
    run.add_argument("--ablate", help="Comma-separated toggles to run both on and off.")
    run.add_argument("--iters", type=int, help="Override the number of optimizer iterations.")
    run.add_argument("--seed", type=int, help="Run a single seed.")
    run.add_argument("--out", type=Path, help="Output directory (default: $SYNDIST_OUT_DIR/<name>).")

    verify = sub.add_parser("verify", help="Run the oracle suite and print a pass/fail table.")
    verify.add_argument("--config", type=Path, help="Experiment config whose fd_tol sets the tolerance.")
    verify.add_argument("--fd-tol", type=float, help="Relative tolerance of gradient checks (overrides --config).")

    serve = sub.add_parser("serve", help="Serve the HTTP API with uvicorn.")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, ExperimentConfig) if args.config else preset(args.preset)
    ablate = None
    if args.ablate is not None:
        ablate = [t.strip() for t in args.ablate.split(",") if t.strip()]
    return apply_overrides(cfg, iterations=args.iters, seed=args.seed, ablate=ablate)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = args.out or (Path(cfg.out_dir) if cfg.out_dir else get_settings().out_dir / cfg.name)
    result = run_experiment(cfg, out_dir=out_dir)
    print(result.metrics.to_string(index=False))
    if not result.ok:
        for failure in result.failures:
            print(f"FAILED {failure}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    fd_tol = args.fd_tol
    if fd_tol is None:
        fd_tol = load_config(args.config, ExperimentConfig).fd_tol if args.config else DEFAULT_FD_TOL
    if not fd_tol > 0:
        raise ConfigError("--fd-tol must be > 0")
    logger.info(f"Running oracle checks with fd_tol={fd_tol:g}")
    results = run_checks(fd_tol=fd_tol)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("syndist.main:app", host=args.host, port=args.port, log_level=get_settings().log_level.lower())
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "serve": cmd_serve}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=get_settings().log_level, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except SyndistError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
