"""Evaluation harness: microbenchmarks, calibration and CSV/gnuplot emission.

Every benchmark compares a CPU baseline (loads and stores through the
cache, costed with the :class:`CycleModel`) against the PuM path (pumolib
or the rcc/rci system calls) on the same simulated system.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .config import SystemConfig
from .cycles import CycleModel
from .errors import CalibrationInfeasible
from .supervisor import PAGE
from .system import System

KIB = 1024
MIB = 1024 * KIB
DEFAULT_SIZES = tuple(8 * KIB << i for i in range(11))  # 8 KiB .. 8 MiB
DIRTY_FRACTIONS = tuple(i / 10 for i in range(11))
FORK_PAGES = tuple(8 << i for i in range(9))  # 8 .. 2048
TRNG_PERIODS = tuple(range(220, 1001, 10))
FORK_ACCESSES = 32 * 1024
COMPILE_ALLOCATIONS = 64

# Reference speedups the calibration fits to (ratios, or fractions for fork/compile).
TARGETS = {
    "bare_copy_8k": 317.5,
    "bare_copy_8m": 364.8,
    "noflush_copy_8k": 58.3,
    "noflush_copy_8m": 118.5,
    "noflush_init_8k": 31.4,
    "noflush_init_8m": 88.7,
    "rowclone_cycles": 58,
    "fork_speedup": 0.429,
    "fork_copy_fraction": 0.86,
    "compile_speedup": 0.09,
}

MODES = {"bare": "bare", "noflush": "noflush", "no-flush": "noflush"}


@dataclass(frozen=True)
class BenchResult:
    workload: str
    size: int
    mode: str
    baseline_cycles: float
    pum_cycles: float
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def speedup(self) -> float:
        return self.baseline_cycles / self.pum_cycles

    def throughput_mbps(self, cpu_mhz: int = 50) -> float:
        """PuM bytes per microsecond of simulated time, in MB/s."""
        return self.size / (self.pum_cycles / cpu_mhz)


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    seed: int = 0
    sizes: tuple[int, ...] = DEFAULT_SIZES
    repetitions: int = 3
    mode: str = "bare"
    dirty_fractions: tuple[float, ...] = DIRTY_FRACTIONS
    char_cache: str | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")


# -- system preparation -------------------------------------------------------


def prepare_system(run: RunConfig, model: CycleModel | None = None, characterize: bool = True) -> System:
    system = System(run.system.with_seed(run.seed), model)
    if characterize:
        system.characterize(cache_path=run.char_cache)
    return system


def _sync(system: System) -> None:
    """Let the CPU clock catch up with untimed setup traffic on the controller."""
    ctl = system.controller
    system.cpu.advance_to(ctl.to_cpu_cycles(ctl.busy_until), "setup")


def _cold(system: System) -> None:
    system.cache.flush_all(system.cpu.cycles)
    _sync(system)


@dataclass
class Measurement:
    cycles: int
    totals: Counter
    counts: Counter


def measure(system: System, fn) -> Measurement:
    """Run ``fn`` and audit that the cycles it took equal the cycles it charged."""
    cpu = system.cpu
    c0, t0, n0 = cpu.cycles, Counter(cpu.ledger.totals), Counter(cpu.ledger.counts)
    fn()
    cycles = cpu.cycles - c0
    totals = Counter(cpu.ledger.totals)
    totals.subtract(t0)
    counts = Counter(cpu.ledger.counts)
    counts.subtract(n0)
    if sum(totals.values()) != cycles or not cpu.ledger.audit():
        raise AssertionError("cycle ledger does not match elapsed cycles")
    return Measurement(cycles, +totals, +counts)


def _fill_rows(system: System, va: int, size: int, rng: np.random.Generator) -> None:
    alloc = system.supervisor.allocations[va]
    for bank, row in alloc.rows:
        system.device.poke_row(bank, row, rng.integers(0, 256, system.geometry.row_bytes, dtype=np.uint8))


# -- CPU baseline loops -------------------------------------------------------


def _line_pas(system: System, va: int, size: int) -> list[int]:
    pt = system.supervisor.page_table
    line = system.cache.config.line
    out = []
    for off in range(0, size, PAGE):
        base = pt.translate(va + off)
        out.extend(range(base, base + PAGE, line))
    return out


def cpu_copy(system: System, dst: int, src: int, size: int) -> None:
    """memcpy loop: per 8-byte word one load and one store."""
    cpu, cache, m = system.cpu, system.cache, system.model
    per_line = m.word_copy * (cache.config.line // 8)
    for s, d in zip(_line_pas(system, src, size), _line_pas(system, dst, size)):
        r = cache.access("load", s, now=cpu.cycles)
        if r.writeback:
            cpu.charge("writeback_stall", m.writeback_stall)
        w = cache.access("store", d, r.data, now=cpu.cycles)
        if w.writeback:
            cpu.charge("writeback_stall", m.writeback_stall)
        cpu.charge("word_copy", per_line)


def cpu_init(system: System, dst: int, size: int) -> None:
    """memset-to-zero loop: one store per 8-byte word."""
    cpu, cache, m = system.cpu, system.cache, system.model
    zero = bytes(cache.config.line)
    per_line = m.word_store * (cache.config.line // 8)
    for d in _line_pas(system, dst, size):
        if cache.access("store", d, zero, now=cpu.cycles).writeback:
            cpu.charge("writeback_stall", m.writeback_stall)
        cpu.charge("word_store", per_line)


# -- PuM paths ----------------------------------------------------------------------


def bare_copy(system: System, dst: int, src: int) -> None:
    sup = system.supervisor
    for (sb, sr), (db, dr) in zip(sup.allocations[src].rows, sup.allocations[dst].rows):
        system.pumolib.rowclone(sup._row_pa(sb, sr), sup._row_pa(db, dr))


def bare_init(system: System, dst: int) -> None:
    sup = system.supervisor
    for bank, row in sup.allocations[dst].rows:
        pa = sup._row_pa(bank, row)
        system.pumolib.rowclone(sup.irt[pa // PAGE], pa)


# -- copy / init sweeps -------------------------------------------------------------


def _copy_init_point(system: System, op: str, size: int, mode: str, reps: int, seed: int) -> BenchResult:
    sup = system.supervisor
    sup.reset_allocations()
    rng = np.random.default_rng([seed, size])
    src = sup.alloc_align(size, 0)
    dst = sup.alloc_align(size, 0)
    _fill_rows(system, src, size, rng)
    _fill_rows(system, dst, size, rng)
    base = pum = 0
    for _ in range(reps):
        _cold(system)
        if op == "copy":
            base += measure(system, lambda: cpu_copy(system, dst, src, size)).cycles
        else:
            base += measure(system, lambda: cpu_init(system, dst, size)).cycles
        _cold(system)
        if mode == "bare":
            fn = (lambda: bare_copy(system, dst, src)) if op == "copy" else (lambda: bare_init(system, dst))
        elif op == "copy":
            fn = lambda: sup.rcc(dst, src, size, "none")  # noqa: E731
        else:
            fn = lambda: sup.rci(dst, size, "none")  # noqa: E731
        pum += measure(system, fn).cycles
    return BenchResult(op, size, mode, base / reps, pum / reps)


def _sweep_worker(args):
    run, op, sizes = args
    system = prepare_system(run)
    return [_copy_init_point(system, op, s, MODES[run.mode], run.repetitions, run.seed) for s in sizes]


def _run_sweep(run: RunConfig, op: str) -> list[BenchResult]:
    sizes = sorted(run.sizes)
    for s in sizes:
        if s <= 0 or s % (8 * KIB):
            raise ValueError(f"size {s} is not a positive multiple of 8 KiB")
    if run.jobs <= 1:
        return _sweep_worker((run, op, sizes))
    chunks = [sizes[i::run.jobs] for i in range(run.jobs)]
    with ProcessPoolExecutor(run.jobs) as pool:
        rows = [r for part in pool.map(_sweep_worker, [(run, op, c) for c in chunks if c]) for r in part]
    return sorted(rows, key=lambda r: r.size)


def run_copy_bench(run: RunConfig) -> list[BenchResult]:
    return _run_sweep(run, "copy")


def run_init_bench(run: RunConfig) -> list[BenchResult]:
    return _run_sweep(run, "init")


# -- CLFLUSH dirty-fraction sweep ---------------------------------------------------


def _flush_point(system: System, op: str, fraction: float, size: int, seed: int, baseline: float) -> BenchResult:
    sup, cache = system.supervisor, system.cache
    sup.reset_allocations()
    rng = np.random.default_rng([seed, size, 7])
    src = sup.alloc_align(size, 0)
    dst = sup.alloc_align(size, 0)
    _fill_rows(system, src, size, rng)
    _fill_rows(system, dst, size, rng)
    _cold(system)
    dirty_rng = np.random.default_rng([seed, round(fraction * 1000), 0 if op == "copy" else 1])
    line = cache.config.line

    def precondition(src_key, dst_key):
        keys = [k for k in (src_key, dst_key) if k is not None]
        lines = [(k, c) for k in keys for c in range(0, system.geometry.row_bytes, line)]
        dirty = np.zeros(len(lines), dtype=bool)
        dirty[dirty_rng.choice(len(lines), round(fraction * len(lines)), replace=False)] = True
        contents = {k: system.device.peek_row(*k).tobytes() for k in keys}
        for ((bank, row), col), is_dirty in zip(lines, dirty):
            pa = sup._row_pa(bank, row) + col
            if is_dirty:
                data = dirty_rng.integers(0, 256, line, dtype=np.uint8).tobytes()
            else:
                data = contents[(bank, row)][col:col + line]
            cache.install(pa, data, bool(is_dirty))

    if op == "copy":
        m = measure(system, lambda: sup.rcc(dst, src, size, "full", on_row=precondition))
    else:
        m = measure(system, lambda: sup.rci(dst, size, "full", on_row=precondition))
    return BenchResult(op, size, f"flush({fraction:.1f})", baseline, m.cycles,
                       {"dirty_fraction": fraction, "flush_cycles": m.totals["clflush"]})


def _flush_worker(args):
    run, op, fractions, size = args
    system = prepare_system(run)
    baseline = _copy_init_point(system, op, size, "bare", run.repetitions, run.seed).baseline_cycles
    return [_flush_point(system, op, f, size, run.seed, baseline) for f in fractions]


def run_flush_sweep(run: RunConfig, size: int = 8 * MIB, ops=("copy", "init")) -> list[BenchResult]:
    fractions = sorted(run.dirty_fractions)
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"dirty fraction {f} outside [0, 1]")
    tasks = [(run, op, fractions, size) for op in ops]
    if run.jobs <= 1:
        parts = [_flush_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(min(run.jobs, len(tasks))) as pool:
            parts = list(pool.map(_flush_worker, tasks))
    return [r for part in parts for r in part]


# -- forkbench and compile -------------------------------------------------------------


def _random_loads(system: System, va: int, size: int, offsets: np.ndarray) -> None:
    pt, cache, cpu = system.supervisor.page_table, system.cache, system.cpu
    for off in offsets.tolist():
        r = cache.access("load", pt.translate(va + off), now=cpu.cycles)
        cpu.charge("random_access", r.cycles)


def _fork_point(system: System, pages: int, seed: int, reps: int) -> BenchResult:
    sup, cpu, m = system.supervisor, system.cpu, system.model
    size = pages * PAGE
    offsets = np.random.default_rng([seed, pages]).integers(0, size // 64, FORK_ACCESSES) * 64
    base = pum = copy = 0
    for _ in range(reps):
        sup.reset_allocations()
        parent = sup.alloc_align(size, 0)
        _fill_rows(system, parent, size, np.random.default_rng([seed, pages, 1]))
        _cold(system)

        def baseline():
            cpu.charge("malloc", pages * m.malloc_page)
            child = sup.malloc(size)
            cpu_copy(system, child, parent, size)
            _random_loads(system, child, size, offsets)

        mb = measure(system, baseline)
        _cold(system)

        def pum_run():
            cpu.charge("alloc_align", pages * m.alloc_align_page)
            child = sup.alloc_align(size, 0)
            sup.rcc(child, parent, size, "none")
            _random_loads(system, child, size, offsets)

        base += mb.cycles
        copy += mb.totals["word_copy"] + mb.totals["writeback_stall"]
        pum += measure(system, pum_run).cycles
    return BenchResult("fork", size, "noflush", base / reps, pum / reps,
                       {"pages": pages, "copy_fraction": copy / base})


def run_forkbench(run: RunConfig, pages=FORK_PAGES) -> list[BenchResult]:
    system = prepare_system(run)
    return [_fork_point(system, n, run.seed, run.repetitions) for n in sorted(pages)]


def _compile_run(system: System, allocations: int, seed: int) -> BenchResult:
    sup, cpu, m = system.supervisor, system.cpu, system.model
    size = 2 * PAGE

    def work(va):
        cpu.charge("compile_work", m.compile_work)
        for pa in _line_pas(system, va, size):
            cpu.charge("compile_load", system.cache.access("load", pa, now=cpu.cycles).cycles)

    sup.reset_allocations()
    _cold(system)

    def baseline():
        for _ in range(allocations):
            va = sup.malloc(size)
            cpu_init(system, va, size)
            work(va)

    mb = measure(system, baseline)
    sup.reset_allocations()
    _cold(system)

    def pum_run():
        for _ in range(allocations):
            va = sup.alloc_align(size, 0)
            sup.rci(va, size, "none")
            work(va)

    mp = measure(system, pum_run)
    return BenchResult("compile", allocations * size, "noflush", mb.cycles, mp.cycles, {"allocations": allocations})


def run_compile_bench(run: RunConfig, allocations: int = COMPILE_ALLOCATIONS) -> list[BenchResult]:
    system = prepare_system(run)
    return [_compile_run(system, allocations, run.seed)]


# -- D-RaNGe --------------------------------------------------------------------------


def trng_block_phys(system: System, bank: int = 0) -> int:
    blocks = system.config.trng_blocks or system.device.weak_cells.trng_blocks
    row, col = blocks[bank]
    return system.controller.dram_to_phys(row, bank, col)


def setup_trng(system: System, period_ns: int, trials: int = 1000) -> list[int]:
    cells = system.supervisor.characterize_trng_cells(trng_block_phys(system), trials)
    system.supervisor.configure_trng(period_ns)
    return cells


def consume_random_words(system: System, duration_ns: float | None = None, words: int | None = None) -> list[int]:
    """The consumer loop: poll buf_sz, then drain with rand_dram, until the time or word budget runs out."""
    lib, cpu = system.pumolib, system.cpu
    end = cpu.cycles + math.ceil(duration_ns / system.model.cpu_ns) if duration_ns is not None else None
    out: list[int] = []
    while (end is None or cpu.cycles < end) and (words is None or len(out) < words):
        n = lib.buf_sz()
        for _ in range(n):
            if words is not None and len(out) >= words:
                break
            out.append(lib.rand_dram())
    return out


def _trng_point(args):
    run, period, duration_ns = args
    system = prepare_system(run, characterize=False)
    setup_trng(system, period)
    start = system.cpu.cycles
    words = consume_random_words(system, duration_ns=duration_ns)
    elapsed_us = (system.cpu.cycles - start) * system.model.cpu_ns / 1000.0
    return period, len(words) * 32 / elapsed_us, len(words)


def run_trng_bench(run: RunConfig, periods=TRNG_PERIODS, duration_ns: float = 2_000_000.0) -> list[tuple[int, float, int]]:
    """Rows of (period_ns, throughput_mbps, words) observed by the consumer loop."""
    tasks = [(run, p, duration_ns) for p in periods]
    if run.jobs <= 1:
        return [_trng_point(t) for t in tasks]
    with ProcessPoolExecutor(run.jobs) as pool:
        return sorted(pool.map(_trng_point, tasks))


def words_to_bits(words) -> np.ndarray:
    """Unpack 32-bit words MSB first, i.e. in generation order."""
    arr = np.asarray(list(words), dtype=">u4").view(np.uint8)
    return np.unpackbits(arr)


def monobit_test(bits: np.ndarray) -> float:
    """Frequency test p-value."""
    n = bits.size
    s = abs(int(2 * np.count_nonzero(bits)) - n) / math.sqrt(n)
    return math.erfc(s / math.sqrt(2))


def runs_test(bits: np.ndarray) -> float:
    """Runs test p-value (0.0 when the frequency prerequisite fails)."""
    n = bits.size
    pi = np.count_nonzero(bits) / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0
    runs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    return math.erfc(abs(runs - 2 * n * pi * (1 - pi)) / (2 * math.sqrt(2 * n) * pi * (1 - pi)))


# -- calibration ---------------------------------------------------------------------


def _measure_handshake(run: RunConfig, latency: int) -> int:
    system = System(run.system.with_seed(run.seed), replace(run.system.model, poc_latency=latency))
    sup = system.supervisor
    return system.pumolib.rowclone(sup._row_pa(0, 0), sup._row_pa(0, 1))


def _anchor(system: System, op: str, size: int) -> dict:
    """Raw counts for one size: baseline without stalls, write-back count, bare and no-flush PuM."""
    sup = system.supervisor
    sup.reset_allocations()
    rng = np.random.default_rng([0, size])
    src, dst = sup.alloc_align(size, 0), sup.alloc_align(size, 0)
    _fill_rows(system, src, size, rng)
    _cold(system)
    mb = measure(system, (lambda: cpu_copy(system, dst, src, size)) if op == "copy" else (lambda: cpu_init(system, dst, size)))
    _cold(system)
    bare = measure(system, (lambda: bare_copy(system, dst, src)) if op == "copy" else (lambda: bare_init(system, dst)))
    _cold(system)
    nf = measure(system, (lambda: sup.rcc(dst, src, size, "none")) if op == "copy" else (lambda: sup.rci(dst, size, "none")))
    fixed = nf.cycles - sum(nf.totals[k] for k in ("syscall", "page_walk", "irt_lookup"))
    return {
        "base0": mb.cycles - mb.totals["writeback_stall"],
        "wb": mb.counts["writeback_stall"],
        "bare": bare.cycles,
        "nf_fixed": fixed,
        "nf_counts": [nf.counts["syscall"], nf.counts["page_walk"], nf.counts["irt_lookup"]],
    }


def calibrate(run: RunConfig | None = None, targets: dict | None = None, tolerance: float = 0.20) -> CycleModel:
    """Recompute the model constants from the reference speedups."""
    run = run or RunConfig()
    t = {**TARGETS, **(targets or {})}
    cpu_words = 8 * KIB // 8

    # anchors exact by construction
    latency = next((lat for lat in range(0, 1000) if _measure_handshake(run, lat) >= t["rowclone_cycles"]), None)
    if latency is None or _measure_handshake(run, latency) != t["rowclone_cycles"]:
        raise CalibrationInfeasible(f"no POC latency yields a {t['rowclone_cycles']}-cycle RowClone")
    word_copy = round(t["rowclone_cycles"] * t["bare_copy_8k"] / cpu_words)
    model = replace(run.system.model, poc_latency=latency, word_copy=word_copy, word_store=word_copy // 2,
                    writeback_stall=0, syscall=0, page_walk=0, irt_lookup=0,
                    malloc_page=0, alloc_align_page=0, compile_work=0)

    system = prepare_system(run, model)
    a = {(op, s): _anchor(system, op, s) for op in ("copy", "init") for s in (8 * KIB, 8 * MIB)}

    big = a[("copy", 8 * MIB)]
    stall = round((t["bare_copy_8m"] * big["bare"] - big["base0"]) / big["wb"]) if big["wb"] else 0
    if stall < 0:
        raise CalibrationInfeasible("bare-metal 8 MiB target needs a negative write-back stall")

    rows, rhs, checks = [], [], []
    for (op, size), name in {("copy", 8 * KIB): "noflush_copy_8k", ("copy", 8 * MIB): "noflush_copy_8m",
                             ("init", 8 * KIB): "noflush_init_8k", ("init", 8 * MIB): "noflush_init_8m"}.items():
        p = a[(op, size)]
        base = p["base0"] + stall * p["wb"]
        target_pum = base / t[name]
        rows.append(np.array(p["nf_counts"], dtype=float) / target_pum)
        rhs.append((target_pum - p["nf_fixed"]) / target_pum)
        checks.append((name, base, p))
    x, _ = nnls(np.array(rows), np.array(rhs))
    syscall, walk, irt = (int(round(v)) for v in x)
    for name, base, p in checks:
        pum = p["nf_fixed"] + np.dot(p["nf_counts"], [syscall, walk, irt])
        if abs(base / pum / t[name] - 1) > tolerance:
            raise CalibrationInfeasible(f"{name}: best fit gives {base / pum:.1f}x against {t[name]}x")
    small = a[("copy", 8 * KIB)]
    if abs((small["base0"] + stall * small["wb"]) / small["bare"] / t["bare_copy_8k"] - 1) > 0.05:
        raise CalibrationInfeasible("bare-metal 8 KiB anchor misses its target")

    model = replace(model, writeback_stall=stall, syscall=syscall, page_walk=walk, irt_lookup=irt)

    # forkbench: allocation costs reproduce the copy fraction and the speedup at the largest N
    system = prepare_system(run, model)
    pages = max(FORK_PAGES)
    fork = _fork_point(system, pages, run.seed, 1)
    copy = fork.extra["copy_fraction"] * fork.baseline_cycles
    malloc_page = (copy / t["fork_copy_fraction"] - fork.baseline_cycles) / pages
    baseline = fork.baseline_cycles + pages * malloc_page
    alloc_page = (baseline / (1 + t["fork_speedup"]) - fork.pum_cycles) / pages
    if malloc_page < 0 or alloc_page < 0:
        raise CalibrationInfeasible("forkbench targets need negative allocation costs")

    comp = _compile_run(system, COMPILE_ALLOCATIONS, run.seed)
    work = (comp.baseline_cycles - (1 + t["compile_speedup"]) * comp.pum_cycles) / (t["compile_speedup"] * COMPILE_ALLOCATIONS)
    if work < 0:
        raise CalibrationInfeasible("compile target needs negative per-allocation work")
    return replace(model, malloc_page=round(malloc_page), alloc_align_page=round(alloc_page), compile_work=round(work))


# -- output -------------------------------------------------------------------------------

COPY_HEADER = ["size_bytes", "baseline_cycles", "pum_cycles", "speedup"]
FLUSH_HEADER = ["dirty_fraction", "op", "size_bytes", "baseline_cycles", "pum_cycles", "speedup", "flush_cycles"]
FORK_HEADER = ["pages", "baseline_cycles", "pum_cycles", "speedup", "copy_fraction"]
COMPILE_HEADER = ["allocations", "baseline_cycles", "pum_cycles", "speedup"]
TRNG_HEADER = ["period_ns", "throughput_mbps", "words"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))
    return str(v)


def result_rows(kind: str, results) -> tuple[list[str], list[list]]:
    if kind in ("copy", "init"):
        return COPY_HEADER, [[r.size, r.baseline_cycles, r.pum_cycles, r.speedup] for r in results]
    if kind == "flush":
        return FLUSH_HEADER, [[r.extra["dirty_fraction"], r.workload, r.size, r.baseline_cycles, r.pum_cycles,
                               r.speedup, r.extra["flush_cycles"]] for r in results]
    if kind == "fork":
        return FORK_HEADER, [[r.extra["pages"], r.baseline_cycles, r.pum_cycles, r.speedup, r.extra["copy_fraction"]]
                             for r in results]
    if kind == "compile":
        return COMPILE_HEADER, [[r.extra["allocations"], r.baseline_cycles, r.pum_cycles, r.speedup] for r in results]
    if kind == "trng":
        return TRNG_HEADER, [list(r) for r in results]
    raise ValueError(f"unknown benchmark {kind!r}")


GNUPLOT = {
    "copy": ("size_bytes", "speedup", "using 1:4 with linespoints", "set logscale x 2"),
    "init": ("size_bytes", "speedup", "using 1:4 with linespoints", "set logscale x 2"),
    "flush": ("dirty fraction", "speedup", "using 1:6 with points", ""),
    "fork": ("pages", "speedup", "using 1:4 with linespoints", "set logscale x 2"),
    "compile": ("allocations", "speedup", "using 1:4 with points", ""),
    "trng": ("TRNG period (ns)", "throughput (Mb/s)", "using 1:2 with linespoints", ""),
}


def write_csv(path, kind: str, results) -> Path:
    """Write the CSV and a gnuplot script next to it (same stem, ``.gp``)."""
    header, rows = result_rows(kind, results)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    xlabel, ylabel, using, extra = GNUPLOT[kind]
    script = "\n".join(filter(None, [
        "set datafile separator ','",
        "set key off",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        extra,
        "set terminal pngcairo",
        f"set output '{path.stem}.png'",
        f"plot '{path.name}' every ::1 {using}",
    ])) + "\n"
    path.with_suffix(".gp").write_text(script)
    return path
