"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError
from .config import ConfigError, field_types, load_config
from .kg import DatasetError
from .pipeline import STAGES, StageError, run_pipeline, run_stage

LOGGER = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2

_VALIDATION_ERRORS = (ConfigError, DatasetError, CheckpointError, FileNotFoundError, ValueError, KeyError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgalign", description="Partitioned entity alignment of two knowledge graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help="run all stages" if name == "pipeline" else f"run the {name} stage")
        p.add_argument("--config", help="key=value configuration file")
        for key in field_types():
            # --seed and --out are ordinary keys; every key can be overridden
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE")
    return parser


def _threads() -> int:
    raw = os.environ.get("KGALIGN_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"KGALIGN_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("KGALIGN_THREADS must be non-negative")
    return n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
        cfg = load_config(args.config, overrides)
        n_threads = _threads()
    except ConfigError as exc:
        LOGGER.error("%s", exc)
        return EXIT_INVALID

    limit = threadpool_limits(limits=n_threads) if n_threads > 0 else nullcontext()
    try:
        with limit:
            if args.command == "pipeline":
                report = run_pipeline(cfg)
                LOGGER.info("f1 %.4f  hits@1 %.4f  mrr %.4f", report.f1, report.hits_at.get(1, 0.0), report.mrr)
            else:
                result = run_stage(cfg, args.command)
                LOGGER.info("%s done: %s", args.command, result)
    except StageError as exc:
        LOGGER.error("%s", exc)
        return EXIT_INVALID if isinstance(exc.cause, _VALIDATION_ERRORS) else EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
