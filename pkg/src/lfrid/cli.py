"""Command-line interface.

    lfrid <stage> [--config CONFIG.json] --out RUN_DIR

Stages are ``generate``, ``bla``, ``init``, ``fit``, ``eval`` and
``pipeline`` (all of them in order).  Without ``--config`` the built-in
Bouc-Wen experiment is used.  ``lfrid defaults`` prints that configuration
as JSON, which is a convenient starting point for editing.

Exit status is 0 on success, 1 when a stage fails and 2 for configuration
errors.  Failures are also written to ``RUN_DIR/manifest.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .pipeline import STAGES, ExperimentConfig, load_config, run_pipeline, run_stage

log = logging.getLogger("lfrid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfrid", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline"
                           else "run every stage in order")
        p.add_argument("--config", type=Path, help="experiment configuration (JSON)")
        p.add_argument("--out", type=Path, required=True, help="run directory")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("defaults", help="print the default configuration")
    return parser


def _record_config_failure(out: Path, err: Exception) -> None:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data["config_error"] = {"error": type(err).__name__, "message": str(err)}
    path.write_text(json.dumps(data, indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(json.dumps(ExperimentConfig().to_dict(), indent=2))
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.command == "pipeline":
            run_pipeline(cfg, args.out)
        else:
            run_stage(args.command, cfg, args.out)
    except ConfigError as err:
        _record_config_failure(args.out, err)
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # the manifest already holds the details
        print(f"{args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        if args.verbose:
            log.exception("stage failure")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
