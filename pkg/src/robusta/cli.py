"""Command line: ``robusta <task> --config <path> [--seed N] [--out DIR]``.

Errors are reported as one JSON object on stderr, e.g.
``{"error": "ConfigError", "message": "..."}``. Exit codes: 0 success,
2 invalid configuration or arguments, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .config import TASKS, load_config
from .errors import ConfigError, RobustaError


def _threads():
    raw = os.environ.get("ROBUSTA_THREADS")
    if raw is None or raw == "":
        return None
    if not raw.isdigit() or int(raw) < 1:
        raise ConfigError(f"ROBUSTA_THREADS must be a positive integer, got {raw!r}")
    return int(raw)


def build_parser():
    p = argparse.ArgumentParser(prog="robusta", description="Robustness evaluation and training experiments.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (must not exist or be empty)")
    return p


def _report(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("epoch", "batch", "offset", "acceptance"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    print(json.dumps(doc), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = _threads()
        cfg = load_config(args.config, task=args.task)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg = cfg.replace(seed=args.seed)
        from .runner import run_experiment
        out, summary = run_experiment(cfg, out=args.out, threads=threads)
    except ConfigError as exc:
        _report(exc)
        return 2
    except (RobustaError, OSError, ValueError, ArithmeticError) as exc:
        _report(exc)
        return 1
    print(json.dumps({"out": str(out), "task": cfg.task}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
