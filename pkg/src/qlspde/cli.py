"""Command line entry point: ``qlspde run --config FILE``."""
from __future__ import annotations

import argparse
import sys

from .experiments import ConfigError, load_config, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlspde", description="Run a configured SPDE experiment.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("--config", required=True, help="flat key = value config file")
    r.add_argument("--seeds", type=int, help="use seeds 0..N-1 instead of the configured list")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--threads", type=int, default=1, help="worker threads for seed chunks")
    r.add_argument("--strict", action="store_true", help="reject unknown config keys")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, strict=args.strict)
        if args.seeds is not None:
            if args.seeds < 1:
                raise ConfigError("CONFIG_SEEDS", "--seeds must be >= 1")
            cfg = cfg.with_seeds(range(args.seeds))
        if args.out:
            cfg = cfg.with_output(args.out)
    except ConfigError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error CONFIG_PARSE: {exc}", file=sys.stderr)
        return 2
    result = run(cfg, threads=max(1, args.threads))
    for name, ok in sorted(result.assertions.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"status {result.status} reason {result.reason or 'OK'} out {result.out_dir}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
