"""CPU cycle-cost model, simulated clock and per-event ledger."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class CycleModel:
    """Calibrated per-event costs in CPU cycles at ``cpu_mhz``.

    ``word_copy``/``word_store`` cover one 8-byte load+store/store of the CPU
    loops including their share of cache fills. ``writeback_stall`` is the
    extra bus interference charged when such a loop evicts a dirty line.
    """

    word_copy: int = 18
    word_store: int = 9
    cache_hit: int = 1
    dirty_flush: int = 45
    clean_flush: int = 6
    mmio_access: int = 5
    poc_latency: int = 28
    syscall: int = 149
    page_walk: int = 30
    irt_lookup: int = 20
    writeback_stall: int = 22
    malloc_page: int = 1665
    alloc_align_page: int = 8491
    compile_work: int = 123187
    cpu_mhz: int = 50

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{f.name} must be a nonnegative integer, got {value!r}")
        if self.dirty_flush != 45 or self.clean_flush != 6:
            raise ValueError("CLFLUSH costs are fixed at 45 (dirty) and 6 (clean) cycles")

    @property
    def cpu_ns(self) -> float:
        return 1000.0 / self.cpu_mhz

    def to_file(self, path) -> None:
        lines = ["# calibrated CPU cycle costs"] + [f"{k}={v}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> CycleModel:
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                continue
            try:
                kwargs[key] = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: expected an integer, got {raw!r}", key) from exc
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


class CycleLedger:
    """Accumulates charged cycles per category."""

    def __init__(self) -> None:
        self.totals: dict[str, int] = defaultdict(int)
        self.counts: dict[str, int] = defaultdict(int)
        self.total = 0

    def record(self, category: str, cycles: int) -> None:
        self.totals[category] += cycles
        self.counts[category] += 1
        self.total += cycles

    def audit(self) -> bool:
        return sum(self.totals.values()) == self.total

    def snapshot(self) -> dict[str, int]:
        return dict(self.totals)


class Cpu:
    """In-order CPU clock. Every charged cost advances time and lands in the ledger."""

    def __init__(self, model: CycleModel | None = None) -> None:
        self.model = model or CycleModel()
        self.cycles = 0
        self.ledger = CycleLedger()

    @property
    def now_ns(self) -> float:
        return self.cycles * self.model.cpu_ns

    def charge(self, category: str, cycles: int) -> int:
        self.cycles += cycles
        self.ledger.record(category, cycles)
        return cycles

    def advance_to(self, cycle: int, category: str = "idle") -> int:
        """Stall until ``cycle`` (no-op if already past it); the wait is charged to ``category``."""
        wait = cycle - self.cycles
        return self.charge(category, wait) if wait > 0 else 0
