"""Custom memory controller: address mapping, open-bank scheduler, CRF and periodic operations.

Times are nanoseconds on the controller's command clock (default 200 MHz,
5 ns ticks). Costs handed back to the CPU side are converted to CPU cycles
at the configured clock ratio.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dram import CommandKind, DramCommand, DramDevice, RowCloneEffect, TimingParams
from .errors import BufferUnderflow, IllegalCommand, MalformedInstruction, OperandBankMismatch, OutOfRange

OP_ROWCLONE = 0x01
OP_REDUCED_READ = 0x02

# CRF slot assignment; timings are stored in picoseconds
CRF_TRCD = 0
CRF_TRAS = 1
CRF_TRP = 2
CRF_TRNG_PERIOD = 3
CRF_TRNG_ADDR = 4
CRF_TRNG_BITS = (5, 6, 7, 8)
CRF_SIZE = 16

RANDOM_BUFFER_BITS = 8192


class DramAddress(NamedTuple):
    row: int
    bank: int
    column: int
    byte_offset: int


@dataclass(frozen=True)
class AddressLayout:
    """Bit widths of the physical address fields, lowest first: BO, column, bank, row."""

    byte_offset_bits: int = 6
    column_bits: int = 7
    bank_bits: int = 3
    row_bits: int = 14

    @classmethod
    def for_geometry(cls, geometry) -> AddressLayout:
        return cls(
            byte_offset_bits=geometry.burst_bytes.bit_length() - 1,
            column_bits=geometry.columns.bit_length() - 1,
            bank_bits=geometry.banks.bit_length() - 1,
            row_bits=geometry.rows_per_bank.bit_length() - 1,
        )

    @property
    def total_bits(self) -> int:
        return self.byte_offset_bits + self.column_bits + self.bank_bits + self.row_bits

    @property
    def capacity(self) -> int:
        return 1 << self.total_bits

    def phys_to_dram(self, addr: int) -> DramAddress:
        if not 0 <= addr < self.capacity:
            raise OutOfRange(f"physical address {addr:#x} outside DRAM window of {self.capacity:#x} bytes")
        bo = addr & ((1 << self.byte_offset_bits) - 1)
        addr >>= self.byte_offset_bits
        col = addr & ((1 << self.column_bits) - 1)
        addr >>= self.column_bits
        bank = addr & ((1 << self.bank_bits) - 1)
        row = addr >> self.bank_bits
        return DramAddress(row, bank, col, bo)

    def dram_to_phys(self, row: int, bank: int, column: int = 0, byte_offset: int = 0) -> int:
        if not (0 <= row < 1 << self.row_bits and 0 <= bank < 1 << self.bank_bits
                and 0 <= column < 1 << self.column_bits and 0 <= byte_offset < 1 << self.byte_offset_bits):
            raise OutOfRange(f"DRAM coordinate ({row}, {bank}, {column}, {byte_offset}) out of range")
        addr = row
        addr = (addr << self.bank_bits) | bank
        addr = (addr << self.column_bits) | column
        return (addr << self.byte_offset_bits) | byte_offset


def encode_instruction(opcode: int, operand_a: int = 0, operand_b: int = 0) -> int:
    """Pack a 128-bit POC instruction: opcode [127:120], A [119:90], B [89:60]."""
    if not 0 <= opcode < 1 << 8:
        raise MalformedInstruction(f"opcode {opcode:#x} does not fit 8 bits")
    for value in (operand_a, operand_b):
        if not 0 <= value < 1 << 30:
            raise MalformedInstruction(f"operand {value:#x} does not fit 30 bits")
    return (opcode << 120) | (operand_a << 90) | (operand_b << 60)


def decode_instruction(word: int) -> tuple[int, int, int]:
    if not 0 <= word < 1 << 128:
        raise MalformedInstruction("instruction wider than 128 bits")
    if word & ((1 << 60) - 1):
        raise MalformedInstruction("reserved instruction bits are nonzero")
    opcode = word >> 120
    if opcode not in (OP_ROWCLONE, OP_REDUCED_READ):
        raise MalformedInstruction(f"unknown opcode {opcode:#x}")
    return opcode, (word >> 90) & ((1 << 30) - 1), (word >> 60) & ((1 << 30) - 1)


class Crf:
    """Sixteen 32-bit configuration registers.

    Writes are staged and become visible when the scheduler calls
    :meth:`latch` at its next decision point.
    """

    def __init__(self) -> None:
        self._live = [0] * CRF_SIZE
        self._pending: dict[int, int] = {}
        self._live[CRF_TRCD] = 10_000
        self._live[CRF_TRAS] = 10_000
        self._live[CRF_TRP] = 10_000

    def write(self, index: int, value: int) -> None:
        if not 0 <= index < CRF_SIZE:
            raise IndexError(f"CRF has {CRF_SIZE} registers, not {index + 1}")
        if not 0 <= value < 1 << 32:
            raise ValueError(f"CRF value {value} does not fit 32 bits")
        self._pending[index] = value

    def read(self, index: int) -> int:
        """Architecturally visible value, including staged writes."""
        return self._pending.get(index, self._live[index])

    def latch(self) -> bool:
        """Apply staged writes; True if anything changed."""
        if not self._pending:
            return False
        for index, value in self._pending.items():
            self._live[index] = value
        self._pending.clear()
        return True

    def __getitem__(self, index: int) -> int:
        return self._live[index]

    def __len__(self) -> int:
        return CRF_SIZE


class RandomBuffer:
    """FIFO of random bits; generation stops while it is full."""

    def __init__(self, capacity_bits: int = RANDOM_BUFFER_BITS) -> None:
        self.capacity = capacity_bits
        self._bits: deque[int] = deque()
        self.produced = 0
        self.consumed = 0

    @property
    def occupancy_bits(self) -> int:
        return len(self._bits)

    @property
    def full(self) -> bool:
        return len(self._bits) >= self.capacity

    def push(self, bits) -> int:
        """Append as many bits as fit; returns the number accepted."""
        accepted = 0
        for bit in bits:
            if len(self._bits) >= self.capacity:
                break
            self._bits.append(int(bit) & 1)
            accepted += 1
        self.produced += accepted
        return accepted

    def words(self) -> int:
        return len(self._bits) // 32

    def pop_word(self) -> int:
        """Dequeue 32 bits; the oldest bit becomes bit 31."""
        if len(self._bits) < 32:
            raise BufferUnderflow(f"only {len(self._bits)} random bits buffered")
        word = 0
        for _ in range(32):
            word = (word << 1) | self._bits.popleft()
        self.consumed += 32
        return word


@dataclass(frozen=True)
class ScheduleEvent:
    kind: str  # demand_read | demand_write | pum | refresh | trng
    time_ns: float
    bank: int | None
    cycles: int


@dataclass
class AccessResult:
    data: np.ndarray | None
    cycles: int
    row_hit: bool
    done_ns: float


@dataclass
class PumCompletion:
    opcode: int
    accepted_ns: float
    finished_ns: float
    effect: RowCloneEffect | None = None
    data: np.ndarray | None = None


class MemoryController:
    def __init__(
        self,
        device: DramDevice,
        timing: TimingParams | None = None,
        dram_clock_mhz: float = 200.0,
        cpu_clock_mhz: float = 50.0,
        refresh: bool = True,
        trace: bool = False,
    ) -> None:
        self.device = device
        self.geometry = device.geometry
        self.layout = AddressLayout.for_geometry(device.geometry)
        self.timing = (timing or device.timing).nominal()
        self.tick_ns = 1000.0 / dram_clock_mhz
        self.cpu_ns = 1000.0 / cpu_clock_mhz
        self.crf = Crf()
        self.buffer = RandomBuffer()
        self.refresh_enabled = refresh
        self.tracing = trace
        self.trace: list[tuple[float, str, int | None, int | None, int | None, str]] = []
        self.events: list[ScheduleEvent] = []

        banks = self.geometry.banks
        self.busy_until = 0.0
        self._open: list[int | None] = [None] * banks
        self._act_at = [-math.inf] * banks
        self._pre_at = [-math.inf] * banks
        self._wr_end = [-math.inf] * banks
        self._last = [-math.inf] * banks
        self.next_refresh = self.timing.tREFI
        self._trng_period = 0
        self._trng_last: float | None = None
        self.next_trng: float | None = None
        self.trng_accesses = 0

    # -- clock helpers ---------------------------------------------------

    def _align(self, t: float) -> float:
        return math.ceil(t / self.tick_ns - 1e-9) * self.tick_ns

    def to_cpu_cycles(self, ns: float) -> int:
        return max(0, math.ceil(ns / self.cpu_ns - 1e-9))

    def _issue(self, kind: CommandKind, bank: int | None, at: float, row=None, column=None,
               data=None, bursts: int = 1, tag: str = "demand"):
        at = self._align(at)
        if bank is not None and at <= self._last[bank]:
            at = self._last[bank] + self.tick_ns
        res = self.device.issue(DramCommand(kind, bank if bank is not None else 0, row, column, data, bursts), at)
        if bank is not None:
            self._last[bank] = at + (bursts - 1) * self.timing.tBURST
        else:
            self._last = [at] * self.geometry.banks
        if self.tracing:
            self.trace.append((at, kind.value, bank, row, column, tag))
        return res, at

    def _record(self, event: ScheduleEvent) -> None:
        if self.tracing:
            self.events.append(event)

    def _close(self, bank: int, earliest: float, tag: str) -> float:
        """Precharge ``bank`` if open at nominal timing; returns when an ACT may follow."""
        t = self.timing
        if self._open[bank] is None:
            return max(earliest, self._pre_at[bank] + t.tRP)
        pre = max(earliest, self._act_at[bank] + t.tRAS, self._wr_end[bank] + t.tWR)
        _, pre = self._issue(CommandKind.PRE, bank, pre, tag=tag)
        self._open[bank] = None
        self._pre_at[bank] = pre
        return pre + t.tRP

    def _activate(self, bank: int, row: int, at: float, tag: str) -> float:
        _, at = self._issue(CommandKind.ACT, bank, at, row=row, tag=tag)
        self._open[bank] = row
        self._act_at[bank] = at
        return at

    # -- address mapping -------------------------------------------------

    def phys_to_dram(self, addr: int) -> DramAddress:
        return self.layout.phys_to_dram(addr)

    def dram_to_phys(self, row: int, bank: int, column: int = 0, byte_offset: int = 0) -> int:
        return self.layout.dram_to_phys(row, bank, column, byte_offset)

    # -- demand path -----------------------------------------------------

    def demand_access(self, kind: str, addr: int, data=None, at: float = 0.0, bursts: int = 1) -> AccessResult:
        """Serve a read or write of ``bursts`` consecutive bursts under the open-bank policy."""
        d = self.phys_to_dram(addr)
        if d.byte_offset or d.column + bursts > self.geometry.columns:
            raise OutOfRange(f"access {addr:#x}+{bursts} bursts is not burst-aligned within one row")
        if kind not in ("read", "write"):
            raise ValueError(f"unknown access kind {kind!r}")
        t = self.timing
        start = self._service_start(at)
        self.crf.latch()
        hit = self._open[d.bank] == d.row
        if hit:
            cmd_at = start
        else:
            act_at = self._activate(d.bank, d.row, self._close(d.bank, start, "demand"), "demand")
            cmd_at = act_at + t.tRCD
        ck = CommandKind.RD if kind == "read" else CommandKind.WR
        res, cmd_at = self._issue(ck, d.bank, cmd_at, column=d.column, data=data, bursts=bursts)
        latency = t.tCL if kind == "read" else t.tCWL
        done = cmd_at + latency + bursts * t.tBURST
        if kind == "write":
            self._wr_end[d.bank] = done
        self.busy_until = done
        cycles = self.to_cpu_cycles(done - at)
        self._record(ScheduleEvent(f"demand_{kind}", cmd_at, d.bank, cycles))
        return AccessResult(res.data, cycles, hit, done)

    def read_row(self, addr: int, at: float = 0.0) -> AccessResult:
        return self.demand_access("read", addr, at=at, bursts=self.geometry.columns)

    def write_row(self, addr: int, data, at: float = 0.0) -> AccessResult:
        return self.demand_access("write", addr, data=data, at=at, bursts=self.geometry.columns)

    def _service_start(self, at: float) -> float:
        start = max(at, self.busy_until)
        self.periodic_tick(start)
        return max(start, self.busy_until)

    # -- PuM path --------------------------------------------------------

    def execute_pum(self, instr: int, at: float = 0.0) -> PumCompletion:
        """Run one decoded PuM instruction atomically; periodic work waits until it finishes."""
        opcode, a, b = decode_instruction(instr)
        start = self._service_start(at)
        self.crf.latch()
        if opcode == OP_ROWCLONE:
            return self._rowclone(a, b, start)
        return self._reduced_read(a, start, tag="pum")

    def _rowclone(self, src_addr: int, dst_addr: int, start: float) -> PumCompletion:
        src, dst = self.phys_to_dram(src_addr), self.phys_to_dram(dst_addr)
        if src.bank != dst.bank:
            raise OperandBankMismatch(f"RowClone source in bank {src.bank}, destination in bank {dst.bank}")
        if src.column or src.byte_offset or dst.column or dst.byte_offset:
            raise MalformedInstruction("RowClone operands must be row-aligned")
        t = self.timing
        tras_v = self.crf[CRF_TRAS] / 1000.0
        trp_v = self.crf[CRF_TRP] / 1000.0
        bank = src.bank
        act0 = self._activate(bank, src.row, self._close(bank, start, "pum"), "pum")
        _, pre = self._issue(CommandKind.PRE, bank, act0 + tras_v, tag="pum")
        self._open[bank] = None
        res, act1 = self._issue(CommandKind.ACT, bank, pre + trp_v, row=dst.row, tag="pum")
        self._open[bank], self._act_at[bank] = dst.row, act1
        _, pre2 = self._issue(CommandKind.PRE, bank, act1 + t.tRAS, tag="pum")
        self._open[bank], self._pre_at[bank] = None, pre2
        done = pre2 + t.tRP
        self.busy_until = done
        self._record(ScheduleEvent("pum", act0, bank, self.to_cpu_cycles(done - start)))
        return PumCompletion(OP_ROWCLONE, start, done, effect=res.pum_effect)

    def _reduced_read(self, addr: int, start: float, tag: str) -> PumCompletion:
        d = self.phys_to_dram(addr)
        if d.byte_offset:
            raise MalformedInstruction("reduced-latency read address must be burst-aligned")
        t = self.timing
        trcd_v = self.crf[CRF_TRCD] / 1000.0
        act = self._activate(d.bank, d.row, self._close(d.bank, start, tag), tag)
        res, rd = self._issue(CommandKind.RD, d.bank, act + trcd_v, column=d.column, tag=tag)
        _, pre = self._issue(CommandKind.PRE, d.bank, max(act + t.tRAS, rd + t.tBURST), tag=tag)
        self._open[d.bank], self._pre_at[d.bank] = None, pre
        done = pre + t.tRP
        self.busy_until = done
        return PumCompletion(OP_REDUCED_READ, start, done, data=res.data)

    # -- periodic operations module ----------------------------------------

    def periodic_tick(self, now: float) -> list[ScheduleEvent]:
        """Issue every refresh and TRNG access due at or before ``now``."""
        emitted: list[ScheduleEvent] = []
        while True:
            self.crf.latch()
            if self._trng_period != self.crf[CRF_TRNG_PERIOD]:
                self._retime_trng(now)
            due_ref = self.next_refresh if self.refresh_enabled else math.inf
            due_trng = self.next_trng if self.next_trng is not None else math.inf
            due = min(due_ref, due_trng)
            if due > now:
                return emitted
            if due_ref <= due_trng:
                emitted.append(self._refresh(due_ref))
                self.next_refresh += self.timing.tREFI
            else:
                if not self.buffer.full:
                    emitted.append(self._trng_access(due_trng))
                self._trng_last = due_trng
                self.next_trng = due_trng + self._trng_period

    def _retime_trng(self, now: float) -> None:
        period = self.crf[CRF_TRNG_PERIOD]
        self._trng_period = period
        if period == 0:
            self.next_trng = None
            return
        base = self._trng_last if self._trng_last is not None else now
        self.next_trng = base + period

    def _refresh(self, due: float) -> ScheduleEvent:
        start = max(due, self.busy_until)
        ready = start
        for bank in range(self.geometry.banks):
            ready = max(ready, self._close(bank, start, "refresh"))
        ready = max(ready, max(self._last) + self.tick_ns)
        _, ref = self._issue(CommandKind.REF, None, ready, tag="refresh")
        self.busy_until = ref + self.timing.tRFC
        event = ScheduleEvent("refresh", ref, None, self.to_cpu_cycles(self.busy_until - start))
        self._record(event)
        return event

    def _trng_access(self, due: float) -> ScheduleEvent:
        start = max(due, self.busy_until)
        comp = self._reduced_read(self.crf[CRF_TRNG_ADDR], start, tag="trng")
        bits = np.unpackbits(comp.data, bitorder="little")
        self.buffer.push(int(bits[self.crf[i]]) for i in CRF_TRNG_BITS)
        self.trng_accesses += 1
        event = ScheduleEvent("trng", start, self.phys_to_dram(self.crf[CRF_TRNG_ADDR]).bank,
                              self.to_cpu_cycles(comp.finished_ns - start))
        self._record(event)
        return event

    def read_random_word(self, at: float = 0.0) -> int:
        self.periodic_tick(at)
        return self.buffer.pop_word()

    def buffer_occupancy(self, at: float = 0.0) -> int:
        self.periodic_tick(at)
        return self.buffer.words()

    # -- output ------------------------------------------------------------

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ns", "command", "bank", "row", "col", "kind"])
            for row in self.trace:
                writer.writerow(["" if v is None else v for v in row])


__all__ = [
    "AddressLayout", "DramAddress", "Crf", "RandomBuffer", "ScheduleEvent", "MemoryController",
    "PumCompletion", "AccessResult", "encode_instruction", "decode_instruction", "IllegalCommand",
]
