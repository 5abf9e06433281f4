"""Command-line entry point: ``earlyqnet run|validate|list-presets|trace``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from earlyqnet.experiments import (
    PRESETS,
    ConfigError,
    SweepConfig,
    dump_raw,
    emit_results,
    load_config,
    run_sweep,
    run_trial,
    trial_seed,
)

log = logging.getLogger("earlyqnet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _load(args: argparse.Namespace) -> SweepConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        cfg = load_config(text)
    elif args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; see list-presets")
        cfg = PRESETS[args.preset]
    else:
        raise ConfigError("one of --config or --preset is required")
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    n = len(cfg.points())
    log.info("running %s: %d points x %d trials", cfg.name, n, cfg.trials)
    result = run_sweep(cfg, workers=args.workers)
    fmt = args.format or (Path(args.out).suffix.lstrip(".") if args.out else "csv")
    if args.out:
        emit_results(result, fmt, args.out)
    else:
        emit_results(result, fmt, "/dev/stdout")
    if args.raw:
        dump_raw(result, args.raw)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.name}, {len(cfg.points())} points x {cfg.trials} trials")
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    for name, cfg in PRESETS.items():
        swept = ", ".join(f"{k}[{len(v)}]" for k, v in cfg.sweep.items())
        print(f"{name:8s} {cfg.base.scenario:20s} {swept}")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    cfg = _load(args)
    point = cfg.points()[args.point]
    entries: list = []
    run_trial(point, trial_seed(cfg.seed, args.point, 0), trace=entries)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for e in entries:
            out.write(json.dumps(e, default=str) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="earlyqnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p):
        p.add_argument("--config", help="YAML scenario file")
        p.add_argument("--preset", help="named figure preset")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run a sweep and write summary statistics")
    source(p)
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--raw", help="also write per-trial results as JSON lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a configuration without running it")
    source(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list-presets", help="list figure presets")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("trace", help="run one traced trial and print its event log")
    source(p)
    p.add_argument("--point", type=int, default=0, help="sweep point index")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
