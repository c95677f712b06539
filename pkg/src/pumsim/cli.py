"""Command-line entry point: ``pumsim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .config import SystemConfig, load_config
from .errors import SimulationError
from .system import System

SUFFIXES = {"K": 1024, "M": 1024 ** 2, "G": 1024 ** 3}


def parse_size(text: str) -> int:
    text = text.strip().upper().removesuffix("IB").removesuffix("B")
    scale = SUFFIXES.get(text[-1:], 1)
    digits = text[:-1] if text[-1:] in SUFFIXES else text
    try:
        return int(digits) * scale
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}") from None


def parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(parse_size(part) for part in text.split(",") if part.strip())


def parse_fractions(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid fraction list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value configuration file")
    common.add_argument("--seed", type=int, default=None, help="run seed (overrides the configuration)")
    common.add_argument("--char-cache", metavar="FILE", help="load/store the subarray characterization here")

    parser = argparse.ArgumentParser(prog="pumsim", description="Processing-using-memory system simulator.")
    sub = parser.add_subparsers(dest="command", metavar="{characterize,calibrate,bench,dump-tables}")

    p = sub.add_parser("characterize", parents=[common], help="discover subarray groups by RowClone testing")
    p.add_argument("--trials", type=int, default=None, help="RowClone trials per tested row pair")
    p.add_argument("--window", type=int, default=None, help="row window for candidate pairs")
    p.add_argument("--out", metavar="CSV", help="write bank,subarray,first_row,last_row,initializer_row")

    p = sub.add_parser("calibrate", parents=[common], help="fit the CPU cycle-cost model")
    p.add_argument("--out", metavar="FILE", help="constants file (key=value); default: stdout")

    p = sub.add_parser("bench", parents=[common], help="run a benchmark sweep")
    p.add_argument("workload", choices=["copy", "init", "flush", "fork", "compile", "trng"])
    p.add_argument("--mode", default="bare", choices=sorted(bench.MODES), help="copy/init configuration")
    p.add_argument("--sizes", type=parse_sizes, default=None, help="comma-separated sizes, e.g. 8K,64K,8M")
    p.add_argument("--dirty-frac", type=parse_fractions, default=None, help="comma-separated dirty fractions")
    p.add_argument("--reps", type=int, default=3, help="repetitions averaged per point")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--duration-us", type=float, default=2000.0, help="TRNG measurement window per period")
    p.add_argument("--out", metavar="CSV", required=True, help="output CSV (a .gp script is written next to it)")

    p = sub.add_parser("dump-tables", parents=[common], help="write SAMT/AIT/IRT as CSV")
    p.add_argument("--out", metavar="DIR", required=True)
    return parser


def _config(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _run_config(args, cfg: SystemConfig) -> bench.RunConfig:
    kwargs = {"system": cfg, "seed": cfg.seed, "char_cache": args.char_cache}
    for name in ("reps", "jobs"):
        if getattr(args, name, None) is not None:
            kwargs["repetitions" if name == "reps" else name] = getattr(args, name)
    if getattr(args, "mode", None):
        kwargs["mode"] = args.mode
    if getattr(args, "sizes", None):
        kwargs["sizes"] = args.sizes
    if getattr(args, "dirty_frac", None):
        kwargs["dirty_fractions"] = args.dirty_frac
    return bench.RunConfig(**kwargs)


def cmd_characterize(args) -> int:
    cfg = _config(args)
    system = System(cfg)
    system.characterize(args.trials, args.window, args.char_cache)
    grouping = system.supervisor.grouping()
    for bank, groups in enumerate(grouping):
        print(f"bank {bank}: {len(groups)} subarrays, rows per subarray {sorted({len(g) for g in groups})}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bank", "subarray", "first_row", "last_row", "initializer_row"])
            for bank, groups in enumerate(grouping):
                for sa, rows in enumerate(groups):
                    w.writerow([bank, sa, rows[0], rows[-1], max(rows)])
    return 0


def cmd_calibrate(args) -> int:
    model = bench.calibrate(_run_config(args, _config(args)))
    if args.out:
        model.to_file(args.out)
    else:
        for key, value in vars(model).items():
            print(f"{key}={value}")
    return 0


def cmd_bench(args) -> int:
    run = _run_config(args, _config(args))
    kind = args.workload
    if kind == "copy":
        results = bench.run_copy_bench(run)
    elif kind == "init":
        results = bench.run_init_bench(run)
    elif kind == "flush":
        size = max(args.sizes) if args.sizes else 8 * bench.MIB
        results = bench.run_flush_sweep(replace(run, sizes=(size,)), size=size)
    elif kind == "fork":
        results = bench.run_forkbench(run)
    elif kind == "compile":
        results = bench.run_compile_bench(run)
    else:
        results = bench.run_trng_bench(run, duration_ns=args.duration_us * 1000.0)
    bench.write_csv(args.out, kind, results)
    print(f"wrote {len(results)} rows to {args.out}")
    return 0


def cmd_dump_tables(args) -> int:
    system = System(_config(args))
    system.characterize(cache_path=args.char_cache)
    for path in system.supervisor.dump_tables(Path(args.out)):
        print(path)
    return 0


COMMANDS = {"characterize": cmd_characterize, "calibrate": cmd_calibrate, "bench": cmd_bench,
            "dump-tables": cmd_dump_tables}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (SimulationError, ValueError, OSError) as exc:
        print(f"pumsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
