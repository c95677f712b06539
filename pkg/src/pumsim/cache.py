"""Physically indexed write-back L1 data cache with CLFLUSH.

There is no coherence between this cache and the memory controller's PuM
path: software must flush source lines and invalidate destination lines
before an in-DRAM operation.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass

from .controller import MemoryController


@dataclass(frozen=True)
class CacheConfig:
    capacity: int = 16 * 1024
    associativity: int = 4
    line: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.capacity % (self.associativity * self.line):
            raise ValueError("capacity must be a multiple of associativity * line")

    @property
    def sets(self) -> int:
        return self.capacity // (self.associativity * self.line)


@dataclass
class CacheAccess:
    data: bytes | None
    cycles: int
    hit: bool
    writeback: bool


class Cache:
    """Write-back, write-allocate cache with seeded random replacement.

    Each set maps tag -> [dirty, bytearray line]. A present entry is a
    valid line, so the dirty-implies-valid invariant holds structurally.
    """

    def __init__(
        self,
        controller: MemoryController,
        config: CacheConfig | None = None,
        hit_cycles: int = 1,
        dirty_flush_cycles: int = 45,
        clean_flush_cycles: int = 6,
        trace: bool = False,
    ) -> None:
        self.controller = controller
        self.config = config or CacheConfig()
        self.hit_cycles = hit_cycles
        self.dirty_flush_cycles = dirty_flush_cycles
        self.clean_flush_cycles = clean_flush_cycles
        self._rng = random.Random(self.config.seed)
        self._sets: list[dict[int, list]] = [{} for _ in range(self.config.sets)]
        self._line_shift = self.config.line.bit_length() - 1
        self._set_mask = self.config.sets - 1
        self.hits = 0
        self.misses = 0
        self.writebacks = 0
        self.tracing = trace
        self.trace: list[tuple[int, str, str, int]] = []

    def _split(self, phys: int) -> tuple[int, int, int]:
        line_no = phys >> self._line_shift
        return line_no & self._set_mask, line_no >> (self.config.sets.bit_length() - 1), phys & (self.config.line - 1)

    def _line_addr(self, index: int, tag: int) -> int:
        return ((tag << (self.config.sets.bit_length() - 1)) | index) << self._line_shift

    def _write_back(self, index: int, tag: int, data: bytearray, now_ns: float) -> int:
        self.writebacks += 1
        res = self.controller.demand_access("write", self._line_addr(index, tag), data=bytes(data), at=now_ns)
        return res.cycles

    def _fill(self, index: int, tag: int, now_ns: float) -> tuple[list, int, bool]:
        ways = self._sets[index]
        cycles = 0
        evicted_dirty = False
        if len(ways) >= self.config.associativity:
            victim = self._rng.choice(list(ways))
            dirty, vdata = ways.pop(victim)
            if dirty:
                cycles += self._write_back(index, victim, vdata, now_ns)
                evicted_dirty = True
        res = self.controller.demand_access("read", self._line_addr(index, tag), at=now_ns + cycles * self.controller.cpu_ns)
        cycles += res.cycles
        entry = [False, bytearray(res.data.tobytes())]
        ways[tag] = entry
        return entry, cycles, evicted_dirty

    def access(self, kind: str, phys: int, data: bytes | None = None, now: int = 0) -> CacheAccess:
        """Load a full line or store ``data`` at ``phys`` (must stay within one line)."""
        index, tag, offset = self._split(phys)
        ways = self._sets[index]
        entry = ways.get(tag)
        cycles = self.hit_cycles
        wb = False
        hit = entry is not None
        if hit:
            self.hits += 1
        else:
            self.misses += 1
            entry, mem, wb = self._fill(index, tag, now * self.controller.cpu_ns)
            cycles += mem
        if kind == "store":
            if data is None or offset + len(data) > self.config.line:
                raise ValueError("store must provide data within a single line")
            entry[1][offset:offset + len(data)] = data
            entry[0] = True
            out = None
        elif kind == "load":
            out = bytes(entry[1])
        else:
            raise ValueError(f"unknown access kind {kind!r}")
        if self.tracing:
            self.trace.append((phys, kind, "hit" if hit else "miss", cycles))
        return CacheAccess(out, cycles, hit, wb)

    def clflush(self, phys: int, now: int = 0) -> int:
        """Write back (if dirty) and invalidate the line holding ``phys``."""
        index, tag, _ = self._split(phys)
        entry = self._sets[index].pop(tag, None)
        if entry is not None and entry[0]:
            self._write_back(index, tag, entry[1], now * self.controller.cpu_ns)
            return self.dirty_flush_cycles
        return self.clean_flush_cycles

    def contains(self, phys: int) -> bool:
        index, tag, _ = self._split(phys)
        return tag in self._sets[index]

    def is_dirty(self, phys: int) -> bool:
        index, tag, _ = self._split(phys)
        entry = self._sets[index].get(tag)
        return bool(entry and entry[0])

    def peek(self, phys: int) -> bytes | None:
        """Resident copy of the line holding ``phys`` without touching replacement state, else None."""
        index, tag, _ = self._split(phys)
        entry = self._sets[index].get(tag)
        return bytes(entry[1]) if entry else None

    def install(self, phys: int, data: bytes, dirty: bool = False) -> None:
        """Place a line without memory traffic (benchmark preconditioning only)."""
        index, tag, _ = self._split(phys)
        ways = self._sets[index]
        if tag not in ways and len(ways) >= self.config.associativity:
            raise ValueError(f"set {index} is full; flush before installing")
        ways[tag] = [dirty, bytearray(data)]

    def flush_all(self, now: int = 0) -> int:
        """Write back every dirty line and invalidate everything; returns write-back count."""
        count = 0
        for index, ways in enumerate(self._sets):
            for tag, (dirty, data) in sorted(ways.items()):
                if dirty:
                    self._write_back(index, tag, data, now * self.controller.cpu_ns)
                    count += 1
            ways.clear()
        return count

    @property
    def resident_lines(self) -> int:
        return sum(len(w) for w in self._sets)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["addr", "kind", "hit_miss", "cycles"])
            for addr, kind, hm, cycles in self.trace:
                writer.writerow([f"{addr:#x}", kind, hm, cycles])
