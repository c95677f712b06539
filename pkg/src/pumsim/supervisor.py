"""Supervisor software: paging, subarray-aware allocation, rcc/rci and characterization.

The supervisor knows the physical -> DRAM address mapping of the memory
controller but *not* the subarray layout; it learns which rows share a
subarray by running RowClone and checking the result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import Cache
from .controller import CRF_TRNG_ADDR, CRF_TRNG_BITS, CRF_TRNG_PERIOD, MemoryController
from .cycles import Cpu
from .errors import (
    CharacterizationFailure,
    GranularityViolation,
    InvalidSize,
    MissingInitializer,
    NoTrngCells,
    NotCoLocated,
    OutOfSubarrayCapacity,
    UnknownBankState,
    UnmappedAddress,
)
from .pumolib import Pumolib

PAGE = 4096
VA_BASE = 0x1_0000_0000


@dataclass
class PageTableEntry:
    ppn: int
    pinned: bool
    alloc_id: int | None


class PageTable:
    """Virtual page number -> physical page; injective over mapped pages."""

    def __init__(self) -> None:
        self.entries: dict[int, PageTableEntry] = {}
        self._owner: dict[int, int] = {}

    def map(self, vpn: int, ppn: int, pinned: bool = True, alloc_id: int | None = None) -> None:
        if ppn in self._owner:
            raise ValueError(f"physical page {ppn:#x} already mapped by vpn {self._owner[ppn]:#x}")
        if vpn in self.entries:
            raise ValueError(f"virtual page {vpn:#x} already mapped")
        self.entries[vpn] = PageTableEntry(ppn, pinned, alloc_id)
        self._owner[ppn] = vpn

    def lookup(self, vpn: int) -> PageTableEntry:
        try:
            return self.entries[vpn]
        except KeyError:
            raise UnmappedAddress(f"virtual page {vpn:#x} is not mapped") from None

    def translate(self, va: int) -> int:
        return self.lookup(va // PAGE).ppn * PAGE + va % PAGE

    def clear(self) -> None:
        self.entries.clear()
        self._owner.clear()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SamtEntry:
    """Row-half address pairs of one subarray; the first ``next_free`` are handed out."""

    tuples: list[tuple[int, int]]
    next_free: int = 0

    @property
    def free_pairs(self) -> int:
        return len(self.tuples) - self.next_free

    def take(self) -> tuple[int, int]:
        if not self.free_pairs:
            raise OutOfSubarrayCapacity("subarray has no free row pairs")
        pair = self.tuples[self.next_free]
        self.next_free += 1
        return pair


@dataclass
class Allocation:
    va: int
    size: int
    alloc_id: int | None
    rows: list[tuple[int, int]] = field(default_factory=list)  # (bank, row) in block order


class Supervisor:
    def __init__(self, controller: MemoryController, cache: Cache, pumolib: Pumolib, cpu: Cpu, seed: int = 0) -> None:
        self.controller = controller
        self.cache = cache
        self.pumolib = pumolib
        self.cpu = cpu
        self.geometry = controller.geometry
        self.rng = np.random.default_rng(seed)
        self.page_table = PageTable()
        self.samt: list[dict[int, SamtEntry]] = []
        self.ait: list[dict[int, int]] = []
        self.irt: dict[int, int] = {}
        self.row_subarray: dict[tuple[int, int], int] = {}
        self.initializers: dict[tuple[int, int], int] = {}
        self.allocations: dict[int, Allocation] = {}
        self._next_va = VA_BASE

    # -- address helpers -------------------------------------------------

    def _row_pa(self, bank: int, row: int, half: int = 0) -> int:
        return self.controller.dram_to_phys(row, bank, half * self.geometry.columns // 2)

    def _lines(self, bank: int, row: int):
        base = self._row_pa(bank, row)
        return range(base, base + self.geometry.row_bytes, self.cache.config.line)

    # -- characterization ------------------------------------------------

    def _rowclone_ok(self, bank: int, src: int, dst: int, trials: int, resident: set[int]) -> bool:
        """Copy random data ``src`` -> ``dst`` and verify it by reading ``dst`` back.

        ``dst`` is expected to hold data different from the fresh pattern
        (scanned rows start out zeroed). On success ``dst`` keeps the
        pattern and is recorded in ``resident`` so the caller can zero it
        later; ``src`` is zeroed straight away.
        """
        ctl = self.controller
        src_pa, dst_pa = self._row_pa(bank, src), self._row_pa(bank, dst)
        ok = True
        for _ in range(trials):
            pattern = np.frombuffer(self.rng.bytes(self.geometry.row_bytes), dtype=np.uint8).copy()
            pattern[0] |= 1  # never all-zero, so an untouched destination cannot pass
            ctl.write_row(src_pa, pattern, at=self.cpu.now_ns)
            self.cpu.advance_to(ctl.to_cpu_cycles(ctl.busy_until), "characterize")
            self.pumolib.rowclone(src_pa, dst_pa)
            got = ctl.read_row(dst_pa, at=self.cpu.now_ns)
            self.cpu.advance_to(ctl.to_cpu_cycles(got.done_ns), "characterize")
            if not np.array_equal(got.data, pattern):
                ok = False
                break
        self._zero_row(bank, src)
        resident.discard(src)
        if ok:
            resident.add(dst)
        return ok

    def _zero_row(self, bank: int, row: int) -> None:
        ctl = self.controller
        ctl.write_row(self._row_pa(bank, row), np.zeros(self.geometry.row_bytes, dtype=np.uint8), at=self.cpu.now_ns)
        self.cpu.advance_to(ctl.to_cpu_cycles(ctl.busy_until), "characterize")

    def discover_groups(self, bank: int, trials: int = 1000, window: int = 1024) -> list[list[int]]:
        """Group the bank's rows by RowClone success against recently grouped rows.

        Each row is tested against the newest member of every group whose
        newest member lies within ``window`` rows, most recent group first.
        """
        groups: list[list[int]] = []
        resident: set[int] = set()
        for row in range(self.geometry.rows_per_bank):
            placed = False
            for group in reversed(groups):
                if row - group[-1] > window:
                    break
                if self._rowclone_ok(bank, group[-1], row, trials, resident):
                    group.append(row)
                    placed = True
                    break
            if not placed:
                groups.append([row])
        for row in sorted(resident):
            self._zero_row(bank, row)
        return groups

    def characterize_subarrays(self, trials: int = 1000, window: int = 1024, cache_path=None) -> list[dict[int, SamtEntry]]:
        """Discover subarray groups in every bank and build SAMT and IRT.

        With ``cache_path`` the discovered grouping is loaded from (or saved
        to) a JSON file instead of being re-measured.
        """
        if trials < 1:
            raise ValueError("trials must be at least 1")
        groups_by_bank = None
        if cache_path is not None and Path(cache_path).exists():
            groups_by_bank = self._load_groups(cache_path)
        if groups_by_bank is None:
            groups_by_bank = [self.discover_groups(b, trials, window) for b in range(self.geometry.banks)]
            if cache_path is not None:
                self._save_groups(cache_path, groups_by_bank)
        self.build_tables(groups_by_bank)
        return self.samt

    def _cache_key(self) -> dict:
        g = self.geometry
        dev = self.controller.device
        return {"banks": g.banks, "rows_per_bank": g.rows_per_bank, "row_bytes": g.row_bytes,
                "rows_per_subarray": g.rows_per_subarray, "weak_seed": dev.weak_seed}

    def _load_groups(self, path) -> list[list[list[int]]] | None:
        blob = json.loads(Path(path).read_text())
        if blob.get("key") != self._cache_key():
            return None
        return [[list(range(a, b + 1)) for a, b in bank] for bank in blob["groups"]]

    def _save_groups(self, path, groups_by_bank) -> None:
        ranges = []
        for groups in groups_by_bank:
            bank_ranges = []
            for g in groups:
                if g != list(range(g[0], g[-1] + 1)):
                    return  # only contiguous groupings are cached
                bank_ranges.append([g[0], g[-1]])
            ranges.append(bank_ranges)
        Path(path).write_text(json.dumps({"key": self._cache_key(), "groups": ranges}))

    def build_tables(self, groups_by_bank: list[list[list[int]]]) -> None:
        half = self.geometry.columns // 2
        self.samt = []
        self.ait = [dict() for _ in range(self.geometry.banks)]
        self.irt = {}
        self.row_subarray = {}
        self.initializers = {}
        zero = np.zeros(self.geometry.row_bytes, dtype=np.uint8)
        for bank, groups in enumerate(groups_by_bank):
            usable = [g for g in groups if len(g) >= 2]
            if not usable:
                raise CharacterizationFailure(f"bank {bank}: no rows share a subarray")
            table: dict[int, SamtEntry] = {}
            for sa, group in enumerate(usable):
                init_row = max(group)
                init_pa = self._row_pa(bank, init_row)
                self.controller.write_row(init_pa, zero, at=self.controller.busy_until)
                self.initializers[(bank, sa)] = init_pa
                tuples = []
                for row in group:
                    self.row_subarray[(bank, row)] = sa
                    a, b = self._row_pa(bank, row), self.controller.dram_to_phys(row, bank, half)
                    self.irt[a // PAGE] = init_pa
                    self.irt[b // PAGE] = init_pa
                    if row != init_row:
                        tuples.append((a, b))
                table[sa] = SamtEntry(tuples)
            self.samt.append(table)
        self.cpu.advance_to(self.controller.to_cpu_cycles(self.controller.busy_until), "characterize")

    def grouping(self) -> list[list[list[int]]]:
        """Discovered rows per subarray id, per bank (includes initializer rows)."""
        out = []
        for bank in range(self.geometry.banks):
            by_sa: dict[int, list[int]] = {}
            for (b, row), sa in self.row_subarray.items():
                if b == bank:
                    by_sa.setdefault(sa, []).append(row)
            out.append([sorted(by_sa[sa]) for sa in sorted(by_sa)])
        return out

    # -- allocation --------------------------------------------------------

    def reset_allocations(self) -> None:
        """Return every alloc_align/malloc page to the SAMT (there is no per-array free)."""
        for table in self.samt:
            for entry in table.values():
                entry.next_free = 0
        self.ait = [dict() for _ in range(self.geometry.banks)]
        self.page_table.clear()
        self.allocations.clear()
        self._next_va = VA_BASE

    def _pick_subarray(self, bank: int, need: int) -> int:
        bound = set(self.ait[bank].values())
        table = self.samt[bank]
        candidates = [sa for sa in table if sa not in bound and table[sa].free_pairs >= need]
        if not candidates:
            candidates = [sa for sa in table if table[sa].free_pairs >= need]
        if not candidates:
            raise OutOfSubarrayCapacity(f"bank {bank}: no subarray has {need} free row pairs")
        return max(candidates, key=lambda sa: (table[sa].free_pairs, -sa))

    def _reserve_va(self, size: int) -> int:
        va = self._next_va
        self._next_va += size + PAGE  # unmapped guard page between arrays
        return va

    def alloc_align(self, size: int, alloc_id: int) -> int:
        """Allocate ``size`` bytes whose rows share one subarray per bank with every array of ``alloc_id``."""
        row_bytes = self.geometry.row_bytes
        if size <= 0 or size % row_bytes:
            raise InvalidSize(f"alloc_align size {size} is not a positive multiple of {row_bytes}")
        if not self.samt:
            raise UnknownBankState("subarray mapping table is not initialized")
        banks = self.geometry.banks
        rows = size // row_bytes
        need = [len(range(b, rows, banks)) for b in range(banks)]
        chosen: dict[int, int] = {}
        for bank in range(banks):
            if not need[bank]:
                continue
            sa = self.ait[bank].get(alloc_id)
            if sa is None:
                sa = self._pick_subarray(bank, need[bank])
            elif self.samt[bank][sa].free_pairs < need[bank]:
                raise OutOfSubarrayCapacity(
                    f"bank {bank} subarray {sa} bound to ID {alloc_id} has "
                    f"{self.samt[bank][sa].free_pairs} free pairs, need {need[bank]}")
            chosen[bank] = sa
        for bank, sa in chosen.items():
            self.ait[bank][alloc_id] = sa

        va = self._reserve_va(size)
        vpn0, half = va // PAGE, size // PAGE // 2
        alloc = Allocation(va, size, alloc_id)
        for j in range(rows):
            bank = j % banks
            pa0, pa1 = self.samt[bank][chosen[bank]].take()
            self.page_table.map(vpn0 + j, pa0 // PAGE, True, alloc_id)
            self.page_table.map(vpn0 + j + half, pa1 // PAGE, True, alloc_id)
            alloc.rows.append((bank, self.controller.phys_to_dram(pa0).row))
        self.allocations[va] = alloc
        return va

    def malloc(self, size: int) -> int:
        """Ordinary page-granular allocation with no placement guarantees."""
        pages = -(-size // PAGE)
        va = self._reserve_va(pages * PAGE)
        vpn0 = va // PAGE
        bound = {(b, sa) for b in range(self.geometry.banks) for sa in self.ait[b].values()}
        spare: list[int] = []
        for i in range(pages):
            if not spare:
                free = [(b, sa) for b, table in enumerate(self.samt) for sa, e in table.items()
                        if e.free_pairs and (b, sa) not in bound]
                if not free:
                    raise OutOfSubarrayCapacity("no free physical pages")
                b, sa = free[i % len(free)]
                spare = [p // PAGE for p in self.samt[b][sa].take()]
            self.page_table.map(vpn0 + i, spare.pop(0), False, None)
        self.allocations[va] = Allocation(va, pages * PAGE, None)
        return va

    # -- program memory access ---------------------------------------------

    def write(self, va: int, data: bytes) -> int:
        """CPU stores through the cache; returns cycles charged."""
        start = self.cpu.cycles
        line = self.cache.config.line
        pos = 0
        while pos < len(data):
            pa = self.page_table.translate(va + pos)
            n = min(line - pa % line, len(data) - pos)
            res = self.cache.access("store", pa, data[pos:pos + n], self.cpu.cycles)
            self.cpu.charge("program", res.cycles)
            pos += n
        return self.cpu.cycles - start

    def read(self, va: int, size: int) -> bytes:
        """CPU loads through the cache."""
        line = self.cache.config.line
        out = bytearray()
        pos = 0
        while pos < size:
            pa = self.page_table.translate(va + pos)
            off = pa % line
            n = min(line - off, size - pos)
            res = self.cache.access("load", pa - off, None, self.cpu.cycles)
            self.cpu.charge("program", res.cycles)
            out += res.data[off:off + n]
            pos += n
        return bytes(out)

    # -- rcc / rci -----------------------------------------------------------

    def _walk(self, va: int) -> PageTableEntry:
        self.cpu.charge("page_walk", self.cpu.model.page_walk)
        return self.page_table.lookup(va // PAGE)

    def _check_request(self, size: int, *vas: int) -> None:
        if size <= 0 or size % self.geometry.row_bytes:
            raise GranularityViolation(f"size {size} is not a multiple of the {self.geometry.row_bytes}-byte row")
        for va in vas:
            if va % PAGE:
                raise GranularityViolation(f"address {va:#x} is not page-aligned")

    def _row_of(self, entry: PageTableEntry) -> tuple[int, int, int]:
        d = self.controller.phys_to_dram(entry.ppn * PAGE)
        return d.bank, d.row, d.column

    def _collect_rows(self, va: int, size: int, walks: list[PageTableEntry]) -> list[tuple[int, int]]:
        """Rows covered by the range, in first-touch order; each must be covered in full."""
        halves: dict[tuple[int, int], set[int]] = {}
        for entry in walks:
            if entry.alloc_id is None:
                raise NotCoLocated(f"page {entry.ppn:#x} was not placed by alloc_align")
            bank, row, col = self._row_of(entry)
            halves.setdefault((bank, row), set()).add(col)
        for key, cols in halves.items():
            if len(cols) != 2:
                raise GranularityViolation(f"range covers only part of row {key[1]} in bank {key[0]}")
        return list(halves)

    def _flush_row(self, bank: int, row: int) -> None:
        for line in self._lines(bank, row):
            self.cpu.charge("clflush", self.cache.clflush(line, self.cpu.cycles))

    def rcc(self, dest: int, src: int, size: int, flush_mode: str = "none", on_row=None) -> int:
        """Copy ``size`` bytes from ``src`` to ``dest`` with one RowClone per row pair.

        ``on_row(src_row, dst_row)`` runs uncharged before each row is
        flushed and copied (benchmark preconditioning).
        """
        if flush_mode not in ("none", "full"):
            raise ValueError(f"unknown flush mode {flush_mode!r}")
        start = self.cpu.cycles
        self.cpu.charge("syscall", self.cpu.model.syscall)
        self._check_request(size, dest, src)
        pairs: dict[tuple[int, int], tuple[int, int]] = {}
        src_walks, dst_walks = [], []
        for off in range(0, size, PAGE):
            s, d = self._walk(src + off), self._walk(dest + off)
            src_walks.append(s)
            dst_walks.append(d)
            (sb, sr, sc), (db, dr, dc) = self._row_of(s), self._row_of(d)
            if sb != db:
                raise NotCoLocated(f"source bank {sb} and destination bank {db} differ")
            if sc != dc:
                raise GranularityViolation("source and destination pages occupy different row halves")
            if self.row_subarray.get((sb, sr)) != self.row_subarray.get((db, dr)) or (sb, sr) not in self.row_subarray:
                raise NotCoLocated(f"rows {sr} and {dr} of bank {sb} are not in one subarray")
            if pairs.setdefault((sb, sr), (db, dr)) != (db, dr):
                raise GranularityViolation(f"source row {sr} maps to two destination rows")
        src_rows = self._collect_rows(src, size, src_walks)
        self._collect_rows(dest, size, dst_walks)
        for bank, srow in src_rows:
            _, drow = pairs[(bank, srow)]
            if on_row is not None:
                on_row((bank, srow), (bank, drow))
            if flush_mode == "full":
                self._flush_row(bank, srow)
                self._flush_row(bank, drow)
            self.pumolib.rowclone(self._row_pa(bank, srow), self._row_pa(bank, drow))
        return self.cpu.cycles - start

    def rci(self, dest: int, size: int, flush_mode: str = "none", on_row=None) -> int:
        """Zero ``size`` bytes at ``dest`` by copying each row's subarray initializer row."""
        if flush_mode not in ("none", "full"):
            raise ValueError(f"unknown flush mode {flush_mode!r}")
        start = self.cpu.cycles
        self.cpu.charge("syscall", self.cpu.model.syscall)
        self._check_request(size, dest)
        walks = [self._walk(dest + off) for off in range(0, size, PAGE)]
        rows = self._collect_rows(dest, size, walks)
        for bank, row in rows:
            self.cpu.charge("irt_lookup", self.cpu.model.irt_lookup)
            ppn = self._row_pa(bank, row) // PAGE
            init_pa = self.irt.get(ppn)
            if init_pa is None:
                raise MissingInitializer(f"no initializer row for physical page {ppn:#x}")
            if on_row is not None:
                on_row(None, (bank, row))
            if flush_mode == "full":
                self._flush_row(bank, row)
            self.pumolib.rowclone(init_pa, self._row_pa(bank, row))
        return self.cpu.cycles - start

    # -- D-RaNGe cell characterization ---------------------------------------

    def characterize_trng_cells(self, block_phys: int, trials: int = 10_000,
                                band: tuple[float, float] = (0.40, 0.60), pattern: int = 0x00) -> list[int]:
        """Find the bits of a block that fail within ``band`` under reduced tRCD; program the CRF."""
        if trials < 1000:
            raise ValueError("TRNG characterization needs at least 1000 trials")
        lo, hi = band
        ctl = self.controller
        written = np.full(self.geometry.burst_bytes, pattern, dtype=np.uint8)
        res = ctl.demand_access("write", block_phys, data=written, at=self.cpu.now_ns)
        self.cpu.charge("characterize", res.cycles)
        ref_bits = np.unpackbits(written, bitorder="little")
        counts = np.zeros(ref_bits.size, dtype=np.int64)
        for _ in range(trials):
            got = np.frombuffer(self.pumolib.rd_rl(block_phys), dtype=np.uint8)
            counts += np.unpackbits(got, bitorder="little") != ref_bits
        rates = counts / trials
        qualifying = [int(i) for i in np.nonzero((rates >= lo) & (rates <= hi))[0]]
        if len(qualifying) < len(CRF_TRNG_BITS):
            raise NoTrngCells(f"only {len(qualifying)} cells of block {block_phys:#x} fail within [{lo}, {hi}]")
        best = sorted(qualifying, key=lambda i: (abs(rates[i] - 0.5), i))[:len(CRF_TRNG_BITS)]
        self.pumolib.write_crf(CRF_TRNG_ADDR, block_phys)
        for reg, bit in zip(CRF_TRNG_BITS, sorted(best)):
            self.pumolib.write_crf(reg, bit)
        return qualifying

    def configure_trng(self, period_ns: int) -> None:
        self.pumolib.write_crf(CRF_TRNG_PERIOD, period_ns)

    # -- table dumps -----------------------------------------------------------

    def dump_tables(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "samt.csv", out / "ait.csv", out / "irt.csv"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bank", "subarray", "free_pairs", "index", "pa_first_half", "pa_second_half"])
            for bank, table in enumerate(self.samt):
                for sa, entry in sorted(table.items()):
                    for i, (a, b) in enumerate(entry.tuples):
                        w.writerow([bank, sa, entry.free_pairs, i, f"{a:#010x}", f"{b:#010x}"])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bank", "alloc_id", "subarray"])
            for bank, table in enumerate(self.ait):
                for aid, sa in sorted(table.items()):
                    w.writerow([bank, aid, sa])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ppn", "initializer_pa"])
            for ppn, pa in sorted(self.irt.items()):
                w.writerow([f"{ppn:#x}", f"{pa:#010x}"])
        return paths
