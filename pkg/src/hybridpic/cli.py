"""Command-line entry points: run, preset, resume.

Exit codes: 0 success, 2 configuration problem, 3 runtime/solver failure.
The default output directory comes from --out, then HYBRIDPIC_OUT, then
./hybridpic_out.
"""

import argparse
import sys

from . import harness
from .harness import ConfigError


def _load_config(path):
    with open(path, encoding="utf-8") as fh:
        return harness.parse_config(fh.read())


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hybridpic",
                                     description="structure-preserving hybrid plasma PIC runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--out", default=None)

    p_pre = sub.add_parser("preset", help="print a reference experiment config")
    p_pre.add_argument("name")
    p_pre.add_argument("--desk", action="store_true", help="CI-sized variant")

    p_res = sub.add_parser("resume", help="resume a run from a checkpoint")
    p_res.add_argument("checkpoint")
    p_res.add_argument("config")
    p_res.add_argument("--workers", type=int, default=None)
    p_res.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    try:
        if args.command == "preset":
            cfg = harness.preset(args.name, desk=args.desk)
            sys.stdout.write(harness.format_config(cfg))
            return 0
        if args.command == "run":
            cfg = _load_config(args.config)
            manifest = harness.run(cfg, workers=args.workers, out_dir=args.out)
        else:  # resume
            cfg = _load_config(args.config)
            state = harness.read_checkpoint(args.checkpoint)
            manifest = harness.run(cfg, workers=args.workers, out_dir=args.out, state=state)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures, aborted runs
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    print(f"done: {manifest.steps_run} steps, outputs in manifest")
    return 0


if __name__ == "__main__":
    sys.exit(main())
