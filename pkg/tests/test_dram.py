from __future__ import annotations

import math

import numpy as np
import pytest

from pumsim.dram import CommandKind, DeviceGeometry, DramCommand, DramDevice, TimingParams, WeakCellMap
from pumsim.errors import IllegalCommand

from .conftest import SMALL

ACT, PRE, RD, WR = CommandKind.ACT, CommandKind.PRE, CommandKind.RD, CommandKind.WR


def row_of(value: int, geometry=SMALL) -> np.ndarray:
    return np.full(geometry.row_bytes, value, dtype=np.uint8)


@pytest.fixture
def device() -> DramDevice:
    return DramDevice(SMALL, weak_seed=3, rng_seed=1)


def rowclone_sequence(dev: DramDevice, bank: int, src: int, dst: int, t0: float = 100.0, gap: float = 10.0):
    dev.issue(DramCommand(ACT, bank, row=src), t0)
    dev.issue(DramCommand(PRE, bank), t0 + gap)
    res = dev.issue(DramCommand(ACT, bank, row=dst), t0 + 2 * gap)
    dev.issue(DramCommand(PRE, bank), t0 + 2 * gap + 35)
    return res.pum_effect


class TestGeometry:
    def test_default_is_one_gibibyte(self):
        g = DeviceGeometry()
        assert g.capacity == 1 << 30
        assert g.columns == 128
        assert g.subarrays_per_bank == 32

    @pytest.mark.parametrize("field", ["banks", "rows_per_bank", "row_bytes", "rows_per_subarray", "burst_bytes"])
    def test_rejects_non_power_of_two(self, field):
        with pytest.raises(ValueError, match=field):
            DeviceGeometry(**{field: 3})

    def test_subarray_must_divide_bank(self):
        with pytest.raises(ValueError):
            DeviceGeometry(rows_per_bank=256, rows_per_subarray=512)


class TestTiming:
    def test_violation_is_relative_to_nominal(self):
        t = TimingParams(tRAS=10.0, tRP=10.0)
        assert t.violated("tRAS") and t.violated("tRP") and not t.violated("tRCD")
        assert not t.nominal().violated("tRAS")

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            TimingParams(tRCD=0.0)


class TestCommands:
    def test_write_then_read_round_trips(self, device):
        data = np.arange(64, dtype=np.uint8)
        device.issue(DramCommand(ACT, 0, row=3), 0.0)
        device.issue(DramCommand(WR, 0, column=5, data=data), 20.0)
        out = device.issue(DramCommand(RD, 0, column=5), 40.0).data
        assert np.array_equal(out, data)

    def test_act_on_open_bank_is_illegal(self, device):
        device.issue(DramCommand(ACT, 0, row=1), 0.0)
        with pytest.raises(IllegalCommand):
            device.issue(DramCommand(ACT, 0, row=2), 50.0)

    def test_read_without_open_row_is_illegal(self, device):
        with pytest.raises(IllegalCommand):
            device.issue(DramCommand(RD, 1, column=0), 0.0)

    def test_time_must_advance_per_bank(self, device):
        device.issue(DramCommand(ACT, 0, row=1), 10.0)
        with pytest.raises(IllegalCommand):
            device.issue(DramCommand(PRE, 0), 10.0)

    def test_refresh_requires_all_banks_closed(self, device):
        device.issue(DramCommand(ACT, 1, row=0), 0.0)
        with pytest.raises(IllegalCommand):
            device.issue(DramCommand(CommandKind.REF), 100.0)

    def test_unwritten_rows_read_as_zero_and_zero_rows_are_dropped(self, device):
        device.poke_row(0, 7, row_of(9))
        assert device.resident_rows == 1
        device.poke_row(0, 7, row_of(0))
        assert device.resident_rows == 0
        assert not device.peek_row(0, 7).any()


class TestRowClone:
    def test_same_subarray_copy(self, device):
        device.poke_row(0, 5, row_of(0xAB))
        effect = rowclone_sequence(device, 0, 5, 9)
        assert effect.succeeded
        assert np.array_equal(device.peek_row(0, 9), row_of(0xAB))

    def test_cross_subarray_is_flagged_and_leaves_destination(self, device):
        device.poke_row(0, 5, row_of(0xAB))
        effect = rowclone_sequence(device, 0, 5, 5 + SMALL.rows_per_subarray)
        assert not effect.succeeded
        assert not device.peek_row(0, 5 + SMALL.rows_per_subarray).any()
        assert device.rowclone_log[-1] == effect

    def test_nominal_gaps_are_an_ordinary_reactivation(self, device):
        device.poke_row(0, 5, row_of(0xAB))
        assert rowclone_sequence(device, 0, 5, 9, gap=40.0) is None
        assert not device.peek_row(0, 9).any()

    def test_only_both_gaps_short_trigger_copy(self, device):
        device.poke_row(0, 5, row_of(0xAB))
        device.issue(DramCommand(ACT, 0, row=5), 0.0)
        device.issue(DramCommand(PRE, 0), 10.0)  # tRAS violated
        device.issue(DramCommand(ACT, 0, row=9), 30.0)  # tRP honoured
        assert not device.peek_row(0, 9).any()


class TestWeakCells:
    def test_trng_block_has_exactly_four_fair_cells(self):
        wc = WeakCellMap.generate(SMALL, seed=11)
        for bank in range(SMALL.banks):
            assert len(wc.trng_bits(bank)) == 4

    def test_ground_truth_subarrays(self, device):
        gt = device.ground_truth()
        assert gt.subarray_of(63) == 0 and gt.subarray_of(64) == 1

    def test_strong_block_reads_exactly(self):
        dev = DramDevice(SMALL, weak_density=0.0, trng_blocks={0: (0, 0), 1: (0, 0)})
        dev.poke_row(1, 3, row_of(0x5A))
        assert np.array_equal(dev.reduced_trcd_read(1, 3, 0), row_of(0x5A)[:64])

    def test_flip_rate_converges_to_configured_probability(self, device):
        """Empirical flip rate of every weak cell in the TRNG block lies in the 99% binomial interval."""
        row, col = device.weak_cells.trng_blocks[0]
        bits, probs = device.weak_cells.cells[(0, row, col)]
        n = 10_000
        rng = np.random.default_rng(5)
        flips = np.zeros(bits.size)
        for _ in range(n):
            burst = device.reduced_trcd_read(0, row, col, rng)
            unpacked = np.unpackbits(burst, bitorder="little")
            flips += unpacked[bits]
        for f, p in zip(flips / n, probs):
            half_width = 2.576 * math.sqrt(p * (1 - p) / n)
            assert abs(f - p) <= half_width

    def test_read_before_trcd_flips_only_weak_bits(self):
        blocks = {0: (2, 3), 1: (4, 5)}
        dev = DramDevice(SMALL, trng_blocks=blocks, weak_density=0.0, rng_seed=0)
        dev.issue(DramCommand(ACT, 0, row=2), 0.0)
        out = dev.issue(DramCommand(RD, 0, column=3), 10.0).data
        flipped = set(np.nonzero(np.unpackbits(out, bitorder="little"))[0].tolist())
        assert flipped <= set(dev.weak_cells.trng_bits(0))

    def test_weak_cells_are_seeded(self):
        a = WeakCellMap.generate(SMALL, seed=4, density=1e-5)
        b = WeakCellMap.generate(SMALL, seed=4, density=1e-5)
        assert a.trng_blocks == b.trng_blocks and a.cells.keys() == b.cells.keys()
