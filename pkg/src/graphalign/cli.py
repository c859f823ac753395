"""Command line entry point: ``graphalign [--config F] [--out D] [--dry-run] STAGE``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .config import load_config
from .errors import GraphAlignError, OutputLocked
from .pipeline import STAGE_FUNCS, STAGES, Context

LOCK_NAME = ".lock"


def build_parser():
    p = argparse.ArgumentParser(prog="graphalign", description="Anchor-guided graph retrieval pipeline")
    p.add_argument("--config", "-c", default="config.json", help="pipeline config (JSON)")
    p.add_argument("--out", "-o", default=None, help="output directory (overrides paths.output)")
    p.add_argument("--dry-run", action="store_true", help="validate the config and exit without writing")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("stage", choices=STAGES)
    return p


@contextmanager
def output_lock(out_dir):
    """Exclusive ownership of ``out_dir`` for one invocation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"{out_dir} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def run(stage, config_path, out=None, dry_run=False, gateway=None, embedder=None):
    """Run one stage; returns the config hash. Raises GraphAlignError on failure."""
    config = load_config(config_path)
    config.validate(check_paths=True)
    if dry_run:
        return config.config_hash()
    ctx = Context(config, out, gateway=gateway, embedder=embedder)
    with output_lock(ctx.out):
        STAGE_FUNCS[stage](ctx)
    return ctx.hash


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        digest = run(args.stage, args.config, args.out, args.dry_run)
    except GraphAlignError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc), "stage": args.stage}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface as machine-readable error
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "stage": args.stage}),
              file=sys.stderr)
        return 2
    print(json.dumps({"stage": args.stage, "status": "dry-run" if args.dry_run else "ok",
                      "config_hash": digest}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
