"""Functional DDR3 device model with the two timing-violation behaviors PuM needs.

The device keeps ground-truth cell contents, subarray boundaries and a
sparse map of weak cells. Commands carry an issue time in nanoseconds; the
device compares the gaps between commands on a bank with its *nominal*
timings to decide whether a sequence is an ordinary access, an in-DRAM row
copy (ACT -> PRE -> ACT with both gaps short) or an activation-failure read
(RD issued before tRCD has elapsed).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IllegalCommand


@dataclass(frozen=True)
class DeviceGeometry:
    banks: int = 8
    rows_per_bank: int = 16384
    row_bytes: int = 8192
    rows_per_subarray: int = 512
    burst_bytes: int = 64

    def __post_init__(self) -> None:
        for name in ("banks", "rows_per_bank", "row_bytes", "rows_per_subarray", "burst_bytes"):
            value = getattr(self, name)
            if value <= 0 or value & (value - 1):
                raise ValueError(f"{name} must be a positive power of two, got {value}")
        if self.rows_per_bank % self.rows_per_subarray:
            raise ValueError("rows_per_subarray must divide rows_per_bank")
        if self.row_bytes % self.burst_bytes:
            raise ValueError("row_bytes must be a multiple of burst_bytes")

    @property
    def capacity(self) -> int:
        return self.banks * self.rows_per_bank * self.row_bytes

    @property
    def columns(self) -> int:
        """Bursts per row."""
        return self.row_bytes // self.burst_bytes

    @property
    def subarrays_per_bank(self) -> int:
        return self.rows_per_bank // self.rows_per_subarray


@dataclass(frozen=True)
class TimingParams:
    """Applied DDR3 timings in nanoseconds plus the nominal values they are judged against.

    Only tRCD, tRAS and tRP may be violated; the remaining fields are the
    fixed standard values the scheduler uses for ordinary traffic.
    """

    tRCD: float = 13.75
    tRAS: float = 35.0
    tRP: float = 13.75
    nominal_tRCD: float = 13.75
    nominal_tRAS: float = 35.0
    nominal_tRP: float = 13.75
    tCL: float = 13.75
    tCWL: float = 10.0
    tBURST: float = 10.0
    tWR: float = 15.0
    tRFC: float = 160.0
    tREFI: float = 7800.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"timing {name} must be strictly positive, got {value}")

    def violated(self, name: str) -> bool:
        return getattr(self, name) < getattr(self, f"nominal_{name}")

    def nominal(self) -> TimingParams:
        return replace(self, tRCD=self.nominal_tRCD, tRAS=self.nominal_tRAS, tRP=self.nominal_tRP)


class CommandKind(enum.Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"


@dataclass(frozen=True)
class DramCommand:
    """One DRAM command; RD/WR may cover ``bursts`` consecutive columns."""

    kind: CommandKind
    bank: int = 0
    row: int | None = None
    column: int | None = None
    data: np.ndarray | bytes | None = None
    bursts: int = 1


@dataclass(frozen=True)
class RowCloneEffect:
    bank: int
    src_row: int
    dst_row: int
    succeeded: bool


@dataclass
class CommandResult:
    data: np.ndarray | None = None
    pum_effect: RowCloneEffect | None = None


@dataclass
class BankState:
    open_row: int | None = None
    act_time: float | None = None
    last_time: float = float("-inf")
    # (kind, time, row) of the three most recent commands
    history: deque = field(default_factory=lambda: deque(maxlen=3))


@dataclass
class WeakCellMap:
    """Sparse activation-failure probabilities keyed by (bank, row, column).

    Each value is a pair of arrays: bit positions within the burst and their
    failure probabilities. Unlisted cells never fail.
    """

    cells: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]]
    trng_blocks: dict[int, tuple[int, int]]

    @classmethod
    def generate(
        cls,
        geometry: DeviceGeometry,
        seed: int = 0,
        density: float = 1e-7,
        trng_cells: int = 4,
        trng_blocks: dict[int, tuple[int, int]] | None = None,
        weak_range: tuple[float, float] = (0.01, 0.30),
    ) -> WeakCellMap:
        rng = np.random.default_rng(seed)
        bits_per_burst = geometry.burst_bytes * 8
        total_bits = geometry.capacity * 8
        n = int(rng.binomial(total_bits, density)) if density > 0 else 0
        banks = rng.integers(0, geometry.banks, n)
        rows = rng.integers(0, geometry.rows_per_bank, n)
        cols = rng.integers(0, geometry.columns, n)
        bits = rng.integers(0, bits_per_burst, n)
        probs = rng.uniform(weak_range[0], weak_range[1], n)

        if trng_blocks is None:
            trng_blocks = {
                b: (int(rng.integers(0, geometry.rows_per_bank)), int(rng.integers(0, geometry.columns)))
                for b in range(geometry.banks)
            }
        reserved = {(b, r, c) for b, (r, c) in trng_blocks.items()}

        grouped: dict[tuple[int, int, int], dict[int, float]] = {}
        for b, r, c, bit, p in zip(banks.tolist(), rows.tolist(), cols.tolist(), bits.tolist(), probs.tolist()):
            if (b, r, c) in reserved:
                continue
            grouped.setdefault((b, r, c), {})[bit] = p
        for b, (r, c) in sorted(trng_blocks.items()):
            chosen = rng.choice(bits_per_burst, size=trng_cells, replace=False)
            grouped[(b, r, c)] = {int(bit): 0.5 for bit in chosen}

        cells = {
            key: (np.array(sorted(v), dtype=np.int64), np.array([v[k] for k in sorted(v)], dtype=np.float64))
            for key, v in grouped.items()
        }
        return cls(cells=cells, trng_blocks=dict(trng_blocks))

    def probability(self, bank: int, row: int, column: int, bit: int) -> float:
        entry = self.cells.get((bank, row, column))
        if entry is None:
            return 0.0
        hits = np.nonzero(entry[0] == bit)[0]
        return float(entry[1][hits[0]]) if hits.size else 0.0

    def trng_bits(self, bank: int) -> list[int]:
        row, col = self.trng_blocks[bank]
        bits, probs = self.cells[(bank, row, col)]
        return [int(b) for b, p in zip(bits, probs) if p == 0.5]


@dataclass(frozen=True)
class GroundTruth:
    rows_per_subarray: int
    weak_cells: WeakCellMap

    def subarray_of(self, row: int) -> int:
        return row // self.rows_per_subarray


class DramDevice:
    """Single-rank DDR3 device.

    Contents are stored sparsely per row and read back as zeros when never
    written. All randomness (activation failures) comes from ``rng``.
    """

    def __init__(
        self,
        geometry: DeviceGeometry | None = None,
        timing: TimingParams | None = None,
        weak_seed: int = 0,
        weak_density: float = 1e-7,
        trng_cells: int = 4,
        trng_blocks: dict[int, tuple[int, int]] | None = None,
        rng_seed: int = 0,
    ) -> None:
        self.geometry = geometry or DeviceGeometry()
        self.timing = (timing or TimingParams()).nominal()
        self.weak_cells = WeakCellMap.generate(
            self.geometry, seed=weak_seed, density=weak_density, trng_cells=trng_cells, trng_blocks=trng_blocks
        )
        self.weak_seed = weak_seed
        self.rng = np.random.default_rng(rng_seed)
        self.banks = [BankState() for _ in range(self.geometry.banks)]
        self._rows: dict[tuple[int, int], np.ndarray] = {}
        self.rowclone_log: list[RowCloneEffect] = []

    # -- storage ---------------------------------------------------------

    def _row(self, bank: int, row: int) -> np.ndarray:
        data = self._rows.get((bank, row))
        if data is None:
            data = np.zeros(self.geometry.row_bytes, dtype=np.uint8)
            self._rows[(bank, row)] = data
        return data

    def _store_row(self, bank: int, row: int, data: np.ndarray) -> None:
        if data.any():
            self._rows[(bank, row)] = data
        else:
            self._rows.pop((bank, row), None)

    def peek_row(self, bank: int, row: int) -> np.ndarray:
        """Copy of a row's contents, bypassing the command interface (oracle access)."""
        data = self._rows.get((bank, row))
        if data is None:
            return np.zeros(self.geometry.row_bytes, dtype=np.uint8)
        return data.copy()

    def poke_row(self, bank: int, row: int, data: np.ndarray | bytes) -> None:
        """Overwrite a row directly (benchmark pattern setup, oracle access)."""
        arr = np.frombuffer(bytes(data), dtype=np.uint8).copy() if isinstance(data, bytes) else np.array(data, dtype=np.uint8)
        if arr.size != self.geometry.row_bytes:
            raise ValueError("row data has wrong length")
        self._store_row(bank, row, arr)

    @property
    def resident_rows(self) -> int:
        return len(self._rows)

    # -- command interface -----------------------------------------------

    def _check_bank(self, bank: int) -> BankState:
        if not 0 <= bank < self.geometry.banks:
            raise IllegalCommand(f"bank {bank} out of range")
        return self.banks[bank]

    def issue(self, cmd: DramCommand, at: float) -> CommandResult:
        """Apply one command issued at time ``at`` (ns)."""
        if cmd.kind is CommandKind.REF:
            return self._refresh(at)
        state = self._check_bank(cmd.bank)
        if at <= state.last_time:
            raise IllegalCommand(
                f"{cmd.kind.value} on bank {cmd.bank} at {at} ns is not after previous command at {state.last_time} ns"
            )
        if cmd.kind is CommandKind.ACT:
            return self._activate(cmd, state, at)
        if cmd.kind is CommandKind.PRE:
            state.open_row = None
            state.act_time = None
            state.history.append((CommandKind.PRE, at, None))
            state.last_time = at
            return CommandResult()
        return self._column(cmd, state, at)

    def _activate(self, cmd: DramCommand, state: BankState, at: float) -> CommandResult:
        if state.open_row is not None:
            raise IllegalCommand(f"ACT to bank {cmd.bank} while row {state.open_row} is open")
        if cmd.row is None or not 0 <= cmd.row < self.geometry.rows_per_bank:
            raise IllegalCommand(f"ACT with invalid row {cmd.row}")
        state.history.append((CommandKind.ACT, at, cmd.row))
        state.open_row = cmd.row
        state.act_time = at
        state.last_time = at
        result = CommandResult()
        pair = self.detect_rowclone(cmd.bank, at)
        if pair is not None:
            src, dst = pair
            ok = src // self.geometry.rows_per_subarray == dst // self.geometry.rows_per_subarray
            if ok and src != dst:
                self._store_row(cmd.bank, dst, self._row(cmd.bank, src).copy())
            effect = RowCloneEffect(cmd.bank, src, dst, ok)
            self.rowclone_log.append(effect)
            result.pum_effect = effect
        return result

    def _column(self, cmd: DramCommand, state: BankState, at: float) -> CommandResult:
        if state.open_row is None:
            raise IllegalCommand(f"{cmd.kind.value} to bank {cmd.bank} with no open row")
        col, n = cmd.column, cmd.bursts
        if col is None or n < 1 or col < 0 or col + n > self.geometry.columns:
            raise IllegalCommand(f"{cmd.kind.value} with invalid column range {col}+{n}")
        bb = self.geometry.burst_bytes
        row = state.open_row
        end = at + (n - 1) * self.timing.tBURST
        state.history.append((cmd.kind, at, row))
        state.last_time = end
        if cmd.kind is CommandKind.WR:
            if cmd.data is None:
                raise IllegalCommand("WR without data")
            payload = np.frombuffer(bytes(cmd.data), dtype=np.uint8) if isinstance(cmd.data, bytes) else np.asarray(cmd.data, dtype=np.uint8)
            if payload.size != n * bb:
                raise IllegalCommand(f"WR data is {payload.size} bytes, expected {n * bb}")
            data = self._row(cmd.bank, row)
            data[col * bb:(col + n) * bb] = payload
            if n == self.geometry.columns:
                self._store_row(cmd.bank, row, data)
            return CommandResult()
        stored = self._rows.get((cmd.bank, row))
        if stored is None:
            out = np.zeros(n * bb, dtype=np.uint8)
        else:
            out = stored[col * bb:(col + n) * bb].copy()
        for i in range(n):
            if at + i * self.timing.tBURST - state.act_time < self.timing.nominal_tRCD:
                out[i * bb:(i + 1) * bb] = self._apply_failures(cmd.bank, row, col + i, out[i * bb:(i + 1) * bb], self.rng)
            else:
                break
        return CommandResult(data=out)

    def _refresh(self, at: float) -> CommandResult:
        for b, state in enumerate(self.banks):
            if state.open_row is not None:
                raise IllegalCommand(f"REF while bank {b} has row {state.open_row} open")
            if at <= state.last_time:
                raise IllegalCommand(f"REF at {at} ns is not after bank {b}'s previous command")
        for state in self.banks:
            state.history.append((CommandKind.REF, at, None))
            state.last_time = at
        return CommandResult()

    # -- timing-violation behaviors --------------------------------------

    def detect_rowclone(self, bank: int, at: float) -> tuple[int, int] | None:
        """(src, dst) if the bank's last three commands form a violated ACT->PRE->ACT."""
        hist = self.banks[bank].history
        if len(hist) < 3:
            return None
        (k0, t0, src), (k1, t1, _), (k2, t2, dst) = hist
        if (k0, k1, k2) != (CommandKind.ACT, CommandKind.PRE, CommandKind.ACT) or t2 != at:
            return None
        if t1 - t0 < self.timing.nominal_tRAS and t2 - t1 < self.timing.nominal_tRP:
            return src, dst
        return None

    def _apply_failures(self, bank: int, row: int, column: int, burst: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        entry = self.weak_cells.cells.get((bank, row, column))
        if entry is None:
            return burst
        bits, probs = entry
        flips = bits[rng.random(bits.size) < probs]
        if flips.size:
            burst = burst.copy()
            # bit k of the burst is bit (k % 8) of byte k // 8
            np.bitwise_xor.at(burst, flips // 8, (1 << (flips % 8)).astype(np.uint8))
        return burst

    def reduced_trcd_read(self, bank: int, row: int, column: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Stored burst with each weak bit flipped according to its failure probability."""
        bb = self.geometry.burst_bytes
        stored = self._rows.get((bank, row))
        burst = np.zeros(bb, dtype=np.uint8) if stored is None else stored[column * bb:(column + 1) * bb].copy()
        return self._apply_failures(bank, row, column, burst, rng if rng is not None else self.rng)

    def ground_truth(self) -> GroundTruth:
        """Subarray boundaries and weak-cell placement. Tests and oracles only."""
        return GroundTruth(self.geometry.rows_per_subarray, self.weak_cells)
