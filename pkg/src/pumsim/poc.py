"""PuM Operations Controller: memory-mapped instruction/data/flag registers.

The register file sits in an uncacheable window above DRAM. Every access
costs a fixed number of CPU cycles. Setting the start bit forwards the
instruction to the memory controller; the ack and finish bits then become
visible at the CPU cycles the controller reports.

Address map (offsets from the window base, 64-bit registers):

====== ===========================================
0x000  instruction bits [63:0]
0x008  instruction bits [127:64]
0x010  flag (bit0 start, bit1 ack, bit2 finish)
0x040  data register, eight 64-bit words (0x040-0x078)
0x080  random buffer occupancy in 32-bit words (read-only)
0x088  dequeue one 32-bit random word (read-only)
0x100  CRF register i at 0x100 + 8*i, i in [0, 16)
====== ===========================================
"""

from __future__ import annotations

import enum
import math

from .controller import CRF_SIZE, MemoryController, PumCompletion
from .errors import ProtocolViolation, UnmappedOffset

DEFAULT_BASE = 0x4000_0000

INSTR_LO = 0x000
INSTR_HI = 0x008
FLAG = 0x010
DATA = 0x040
DATA_WORDS = 8
RNG_COUNT = 0x080
RNG_DATA = 0x088
CRF_BASE = 0x100

START, ACK, FINISH = 0b001, 0b010, 0b100

MASK64 = (1 << 64) - 1


class HandshakeState(enum.Enum):
    IDLE = "idle"
    STARTED = "started"
    ACKED = "acked"
    FINISHED = "finished"


class Poc:
    def __init__(
        self,
        controller: MemoryController,
        base: int = DEFAULT_BASE,
        access_cycles: int = 5,
        latency_cycles: int = 28,
    ) -> None:
        self.controller = controller
        self.base = base
        self.access_cycles = access_cycles
        self.latency_cycles = latency_cycles
        self.instruction = 0
        self.data = bytes(64)
        self._started_at: int | None = None
        self._ack_at: int | None = None
        self._finish_at: int | None = None
        self._pending: PumCompletion | None = None
        self.last_completion: PumCompletion | None = None
        self.handshake_log: list[tuple[str, int]] = []

    @property
    def size(self) -> int:
        return CRF_BASE + 8 * CRF_SIZE

    def contains(self, phys: int) -> bool:
        return self.base <= phys < self.base + self.size

    # -- handshake state -------------------------------------------------

    def state(self, now: int) -> HandshakeState:
        if self._started_at is None:
            return HandshakeState.IDLE
        if now >= self._finish_at:
            return HandshakeState.FINISHED
        if now >= self._ack_at:
            return HandshakeState.ACKED
        return HandshakeState.STARTED

    def flag(self, now: int) -> int:
        state = self.state(now)
        return {
            HandshakeState.IDLE: 0,
            HandshakeState.STARTED: START,
            HandshakeState.ACKED: START | ACK,
            HandshakeState.FINISHED: START | ACK | FINISH,
        }[state]

    def ready_cycle(self, bit: int) -> int:
        """CPU cycle from which ``bit`` reads as set for the in-flight operation."""
        if self._started_at is None:
            raise ProtocolViolation("no PuM operation in flight")
        return {START: self._started_at, ACK: self._ack_at, FINISH: self._finish_at}[bit]

    def _start(self, now: int) -> None:
        if self._started_at is not None:
            raise ProtocolViolation(f"start set while handshake is {self.state(now).value}")
        arrival = now + self.access_cycles + self.latency_cycles
        cpu_ns = self.controller.cpu_ns
        completion = self.controller.execute_pum(self.instruction, at=arrival * cpu_ns)
        self._started_at = now + self.access_cycles
        self._ack_at = max(arrival, math.ceil(completion.accepted_ns / cpu_ns - 1e-9))
        self._finish_at = max(self._ack_at, math.ceil(completion.finished_ns / cpu_ns - 1e-9))
        if completion.data is not None:
            self.data = completion.data.tobytes()
        self.last_completion = completion
        self.handshake_log += [("start", self._started_at), ("ack", self._ack_at), ("finish", self._finish_at)]

    def _clear(self, now: int) -> None:
        if self._started_at is not None and now < self._finish_at:
            raise ProtocolViolation(f"flag cleared while handshake is {self.state(now).value}")
        self._started_at = self._ack_at = self._finish_at = None

    # -- MMIO --------------------------------------------------------------

    def _offset(self, addr: int) -> int:
        off = addr - self.base if addr >= self.base else addr
        if off % 8 or not 0 <= off < self.size:
            raise UnmappedOffset(f"no POC register at offset {off:#x}")
        if FLAG < off < DATA or DATA + 8 * DATA_WORDS <= off < RNG_COUNT or RNG_DATA < off < CRF_BASE:
            raise UnmappedOffset(f"no POC register at offset {off:#x}")
        return off

    def mmio_store(self, offset: int, value: int, now: int = 0) -> int:
        """Store a 64-bit value; returns the access cost in CPU cycles."""
        off = self._offset(offset)
        value &= MASK64
        if off == INSTR_LO:
            self.instruction = (self.instruction & ~MASK64) | value
        elif off == INSTR_HI:
            self.instruction = (self.instruction & MASK64) | (value << 64)
        elif off == FLAG:
            if value & START:
                self._start(now)
            elif value == 0:
                self._clear(now)
            else:
                raise ProtocolViolation("only the start bit is software-writable")
        elif off >= CRF_BASE:
            self.controller.crf.write((off - CRF_BASE) // 8, value)
        else:
            raise UnmappedOffset(f"POC register at {off:#x} is read-only")
        return self.access_cycles

    def mmio_load(self, offset: int, now: int = 0) -> tuple[int, int]:
        """Load a 64-bit value sampled at cycle ``now``; returns (value, cycles)."""
        off = self._offset(offset)
        at_ns = now * self.controller.cpu_ns
        if off == INSTR_LO:
            value = self.instruction & MASK64
        elif off == INSTR_HI:
            value = self.instruction >> 64
        elif off == FLAG:
            value = self.flag(now)
        elif DATA <= off < DATA + 8 * DATA_WORDS:
            i = off - DATA
            value = int.from_bytes(self.data[i:i + 8], "little")
        elif off == RNG_COUNT:
            value = self.controller.buffer_occupancy(at_ns)
        elif off == RNG_DATA:
            value = self.controller.read_random_word(at_ns)
        else:
            value = self.controller.crf.read((off - CRF_BASE) // 8)
        return value, self.access_cycles
