"""PuM operations library: wrappers that drive the POC handshake.

Everything here goes through POC register loads and stores; the library
never reaches into the controller or the device. Each wrapper charges the
CPU exactly the sum of its MMIO accesses and flag-poll waits.
"""

from __future__ import annotations

from .controller import CRF_SIZE, OP_REDUCED_READ, OP_ROWCLONE, encode_instruction
from .cycles import Cpu
from .poc import ACK, CRF_BASE, DATA, DATA_WORDS, FINISH, FLAG, INSTR_HI, INSTR_LO, RNG_COUNT, RNG_DATA, Poc

MASK64 = (1 << 64) - 1


class Pumolib:
    def __init__(self, poc: Poc, cpu: Cpu) -> None:
        self.poc = poc
        self.cpu = cpu

    def _store(self, offset: int, value: int) -> None:
        self.cpu.charge("mmio", self.poc.mmio_store(self.poc.base + offset, value, self.cpu.cycles))

    def _load(self, offset: int) -> int:
        value, cycles = self.poc.mmio_load(self.poc.base + offset, self.cpu.cycles)
        self.cpu.charge("mmio", cycles)
        return value

    def _poll(self, bit: int) -> None:
        # the flag is re-checked every cycle; only the load that observes the bit is exposed
        ready = self.poc.ready_cycle(bit)
        if ready > self.cpu.cycles:
            self.cpu.charge("poll_wait", ready - self.cpu.cycles)
        value = self._load(FLAG)
        assert value & bit

    def _execute(self, instr: int) -> None:
        self._store(INSTR_LO, instr & MASK64)
        self._store(INSTR_HI, instr >> 64)
        self._store(FLAG, 1)
        self._poll(ACK)
        self._poll(FINISH)
        self._store(FLAG, 0)

    def rowclone(self, src_phys: int, dst_phys: int) -> int:
        """Copy one DRAM row in place; returns the CPU cycles spent."""
        start = self.cpu.cycles
        self._execute(encode_instruction(OP_ROWCLONE, src_phys, dst_phys))
        return self.cpu.cycles - start

    def rd_rl(self, phys: int) -> bytes:
        """Reduced-tRCD read of the 64-byte block at ``phys``."""
        self._execute(encode_instruction(OP_REDUCED_READ, phys))
        words = [self._load(DATA + 8 * i) for i in range(DATA_WORDS)]
        return b"".join(w.to_bytes(8, "little") for w in words)

    def buf_sz(self) -> int:
        return self._load(RNG_COUNT)

    def rand_dram(self) -> int:
        return self._load(RNG_DATA)

    def write_crf(self, index: int, value: int) -> None:
        if not 0 <= index < CRF_SIZE:
            raise IndexError(f"CRF index {index} out of range")
        self._store(CRF_BASE + 8 * index, value)

    def read_crf(self, index: int) -> int:
        return self._load(CRF_BASE + 8 * index)
