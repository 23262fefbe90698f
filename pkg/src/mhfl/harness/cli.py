"""Command line entry point: ``mhfl run|validate|replay``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import ConfigError, load_config
from .runner import replay, run


def _apply_flags(cfg, args):
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed, seeds=None)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.tol is not None:
        cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, tol=args.tol))
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhfl", description="Multi-hop federated learning latency experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, outputs=True):
        sp.add_argument("--seed", type=int, help="base seed (replaces any explicit seed list)")
        sp.add_argument("--tol", type=float, help="relative latency change that stops the descent")
        if outputs:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")

    sp = sub.add_parser("run", help="run an experiment config")
    sp.add_argument("config")
    common(sp)
    sp = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    sp.add_argument("config")
    common(sp, outputs=False)
    sp.set_defaults(out=None)
    sp = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="output directory (default: <manifest dir>/replay)")
    sp.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            res = replay(args.manifest, out=args.out, jobs=args.jobs)
            for name in res.mismatched:
                print(f"mismatch: {name}", file=sys.stderr)
            print(f"replayed into {res.run.out}: "
                  f"{'identical' if res.identical else f'{len(res.mismatched)} file(s) differ'}")
            return 0 if res.identical and res.run.exit_status == 0 else 1
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "validate":
            sys.stdout.write(cfg.dumps())
            return 0
        if args.jobs < 1:
            raise ConfigError("must be at least 1", key="--jobs")
        res = run(cfg, jobs=args.jobs)
        for name, index, message in res.failures:
            print(f"{name} cell {index}: {message}", file=sys.stderr)
        print(f"wrote {len(res.outputs)} file(s) to {res.out}; "
              f"{len(res.failures)} failed cell(s)")
        return res.exit_status
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
