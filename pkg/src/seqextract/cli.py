"""Command-line driver: ``seqextract <stage|all> --run-dir DIR [--config FILE]``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .augment import GenerationInterrupted
from .data import DatasetError
from .nn.checkpoint import CheckpointError
from .oracle import BudgetExhausted


def _parser():
    ap = argparse.ArgumentParser(prog="seqextract", description="Few-shot extraction of sequential recommenders.")
    ap.add_argument("command", choices=(*pipeline.STAGES, "all"))
    ap.add_argument("--config", help="JSON run config (defaults to the run directory's config.json)")
    ap.add_argument("--run-dir", required=True)
    ap.add_argument("--seed", type=int, help="override the global seed")
    ap.add_argument("--stages", help="comma-separated subset for 'all'")
    ap.add_argument("--bind", help=f"host:port for serve (default ${pipeline.wire.BIND_ENV} or 127.0.0.1:7878)")
    ap.add_argument("--log-level", default="INFO")
    return ap


def _fail(kind, detail, code=1, **extra):
    sys.stderr.write(json.dumps({"error": kind, "detail": detail, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    run_dir = Path(args.run_dir)
    source = args.config
    if source is None and (run_dir / "config.json").exists():
        source = run_dir / "config.json"
    try:
        cfg = pipeline.validate_config(source, seed=args.seed)
    except pipeline.ConfigError as e:
        return _fail("config_invalid", str(e), 2, fields=[{"path": p, "message": m} for p, m in e.errors])
    except OSError as e:
        return _fail("config_unreadable", str(e), 2)

    if args.command == "all":
        stages = pipeline.BATCH_STAGES
        if args.stages:
            stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
            if "serve" in stages:
                return _fail("bad_stages", "serve runs until interrupted; start it with the serve command", 2)
    else:
        stages = (args.command,)
    pipe = pipeline.Pipeline(cfg, run_dir)
    try:
        if stages == ("serve",):
            pipe._persist_config()
            pipe.stage_serve(args.bind)
        else:
            pipe.run(stages)
    except pipeline.StageError as e:
        return _fail("stage_failed", str(e), 1, stage=e.stage, run_first=e.needs)
    except (GenerationInterrupted, BudgetExhausted) as e:
        return _fail("budget_exhausted", str(e), 1, progress=e.progress)
    except (DatasetError, CheckpointError, ValueError, FloatingPointError, OSError) as e:
        return _fail(type(e).__name__, str(e), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
