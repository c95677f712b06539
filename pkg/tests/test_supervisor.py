from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pumsim.errors import (
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
from pumsim.supervisor import PAGE, PageTable
from pumsim.system import System

from .conftest import SMALL, small_config

ROW = SMALL.row_bytes


def truth_grouping(geometry):
    per = geometry.rows_per_subarray
    return [[list(range(s, s + per)) for s in range(0, geometry.rows_per_bank, per)] for _ in range(geometry.banks)]


def location(system, va):
    pa = system.supervisor.page_table.translate(va)
    d = system.controller.phys_to_dram(pa)
    return d.bank, d.row, d.column


class TestPageTable:
    def test_injective(self):
        pt = PageTable()
        pt.map(1, 10)
        with pytest.raises(ValueError):
            pt.map(2, 10)
        with pytest.raises(ValueError):
            pt.map(1, 11)

    def test_unmapped(self):
        with pytest.raises(UnmappedAddress):
            PageTable().translate(0x5000)


class TestCharacterization:
    def test_recovers_ground_truth(self, ready):
        assert ready.supervisor.grouping() == truth_grouping(SMALL)

    def test_leaves_no_test_data_behind(self, ready):
        assert ready.device.resident_rows == 0

    def test_cross_subarray_pair_never_grouped(self):
        system = System()  # default geometry, no characterization needed
        assert not system.supervisor._rowclone_ok(0, 5, 600, 1, set())
        assert system.device.rowclone_log[-1].succeeded is False

    def test_more_trials_same_grouping(self):
        system = System(small_config())
        system.characterize(trials=3, window=128)
        assert system.supervisor.grouping() == truth_grouping(SMALL)

    def test_non_default_subarray_size(self):
        from pumsim.dram import DeviceGeometry

        geo = DeviceGeometry(banks=2, rows_per_bank=128, rows_per_subarray=32)
        system = System(small_config(geometry=geo))
        system.characterize(trials=1, window=64)
        assert system.supervisor.grouping() == truth_grouping(geo)

    def test_initializer_rows_are_zero_and_reserved(self, ready):
        sup = ready.supervisor
        handed_out = {a for table in sup.samt for e in table.values() for pair in e.tuples for a in pair}
        for init_pa in set(sup.irt.values()):
            d = ready.controller.phys_to_dram(init_pa)
            assert d.row % SMALL.rows_per_subarray == SMALL.rows_per_subarray - 1  # highest row
            assert not ready.device.peek_row(d.bank, d.row).any()
            assert init_pa not in handed_out

    def test_samt_tuples_are_row_halves(self, ready):
        for table in ready.supervisor.samt:
            for entry in table.values():
                assert entry.free_pairs == len(entry.tuples) == SMALL.rows_per_subarray - 1
                for a, b in entry.tuples:
                    da, db = ready.controller.phys_to_dram(a), ready.controller.phys_to_dram(b)
                    assert (da.bank, da.row, da.column) == (db.bank, db.row, 0)
                    assert db.column == 64

    def test_cache_file_round_trip(self, tmp_path):
        path = tmp_path / "groups.json"
        first = System(small_config())
        first.characterize(trials=1, window=128, cache_path=path)
        assert path.exists()
        second = System(small_config())
        second.characterize(trials=1, window=128, cache_path=path)
        assert second.device.rowclone_log == []
        assert second.supervisor.grouping() == first.supervisor.grouping()

    def test_cache_keyed_by_device_seed(self, tmp_path):
        path = tmp_path / "groups.json"
        System(small_config()).characterize(trials=1, window=128, cache_path=path)
        other = System(small_config(weak_seed=99))
        other.characterize(trials=1, window=128, cache_path=path)
        assert other.device.rowclone_log  # re-measured, not loaded

    def test_window_too_small_finds_nothing(self):
        system = System(small_config())
        system.supervisor._rowclone_ok = lambda *a, **k: False
        with pytest.raises(CharacterizationFailure):
            system.characterize(trials=1, window=4)


class TestAllocAlign:
    def test_two_single_row_arrays_share_subarray(self, ready):
        sup = ready.supervisor
        a, b = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 0)
        (ba, ra, _), (bb, rb, _) = location(ready, a), location(ready, b)
        assert ba == bb and ra != rb
        assert ra // SMALL.rows_per_subarray == rb // SMALL.rows_per_subarray

    def test_siblings_and_round_robin(self, ready):
        va = ready.supervisor.alloc_align(2 * ROW, 1)
        locs = [location(ready, va + i * PAGE) for i in range(4)]
        assert locs[0][:2] == locs[2][:2] and (locs[0][2], locs[2][2]) == (0, 64)
        assert locs[1][:2] == locs[3][:2] and (locs[1][2], locs[3][2]) == (0, 64)
        assert locs[1][0] == locs[0][0] + 1

    @pytest.mark.parametrize("size", [4096, 0, -ROW, ROW + 64])
    def test_invalid_size(self, ready, size):
        with pytest.raises(InvalidSize):
            ready.supervisor.alloc_align(size, 2)

    def test_uninitialized(self, system):
        with pytest.raises(UnknownBankState):
            system.supervisor.alloc_align(ROW, 0)

    def test_exhaustion_does_not_spill(self, ready):
        sup = ready.supervisor
        per = SMALL.rows_per_subarray - 1
        sup.alloc_align(per * ROW * SMALL.banks, 0)
        free_before = [[e.free_pairs for e in t.values()] for t in sup.samt]
        with pytest.raises(OutOfSubarrayCapacity):
            sup.alloc_align(ROW, 0)
        assert [[e.free_pairs for e in t.values()] for t in sup.samt] == free_before

    def test_distinct_ids_prefer_distinct_subarrays(self, ready):
        sup = ready.supervisor
        sup.alloc_align(ROW, 0)
        sup.alloc_align(ROW, 1)
        assert sup.ait[0][0] != sup.ait[0][1]

    def test_reset_reclaims_everything(self, ready):
        sup = ready.supervisor
        sup.alloc_align(4 * ROW, 0)
        sup.malloc(3 * PAGE)
        sup.reset_allocations()
        assert len(sup.page_table) == 0 and all(not t for t in sup.ait)
        assert all(e.next_free == 0 for t in sup.samt for e in t.values())

    def test_malloc_pages_unpinned(self, ready):
        va = ready.supervisor.malloc(5000)
        entries = [ready.supervisor.page_table.lookup(va // PAGE + i) for i in range(2)]
        assert all(not e.pinned and e.alloc_id is None for e in entries)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.tuples(st.integers(1, 12), st.integers(0, 3)), min_size=1, max_size=25))
def test_allocator_invariants(ready, requests):
    """Mapping, alignment, sibling, conservation and injectivity over random alloc_align sequences."""
    sup = ready.supervisor
    sup.reset_allocations()
    handed = 0
    for rows, aid in requests:
        try:
            va = sup.alloc_align(rows * ROW, aid)
        except OutOfSubarrayCapacity:
            continue
        handed += rows
        half = rows * ROW // 2
        for off in range(0, half, PAGE):
            b0, r0, c0 = location(ready, va + off)
            b1, r1, c1 = location(ready, va + off + half)
            assert (b0, r0, c0, c1) == (b1, r1, 0, 64)
            assert sup.page_table.lookup((va + off) // PAGE).pinned
    used = sum(e.next_free for t in sup.samt for e in t.values())
    assert used == handed
    ppns = [e.ppn for e in sup.page_table.entries.values()]
    assert len(ppns) == len(set(ppns))
    gt = ready.device.ground_truth()
    for bank in range(SMALL.banks):
        for aid, sa in sup.ait[bank].items():
            assert sa in sup.samt[bank]
            rows = {r for a in sup.allocations.values() if a.alloc_id == aid for b, r in a.rows if b == bank}
            assert len({gt.subarray_of(r) for r in rows}) <= 1


def fill(system, va, size, seed):
    data = np.random.default_rng(seed).integers(0, 256, size, dtype=np.uint8).tobytes()
    system.supervisor.write(va, data)
    return data


class TestRcc:
    def test_no_flush_copy_of_data_in_dram(self, ready):
        sup = ready.supervisor
        src, dst = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 0)
        data = fill(ready, src, ROW, 1)
        ready.cache.flush_all()
        before = len(ready.device.rowclone_log)
        sup.rcc(dst, src, ROW, "none")
        assert len(ready.device.rowclone_log) == before + 1
        assert sup.read(dst, ROW) == data

    def test_dirty_source_with_full_flush(self, ready):
        sup = ready.supervisor
        src, dst = sup.alloc_align(2 * ROW, 0), sup.alloc_align(2 * ROW, 0)
        sup.read(dst, 2 * ROW)  # destination lines resident and about to go stale
        data = fill(ready, src, 2 * ROW, 2)  # source lines dirty in the cache
        sup.rcc(dst, src, 2 * ROW, "full")
        assert sup.read(dst, 2 * ROW) == data

    def test_costs_syscall_walks_and_handshakes(self, ready):
        sup, m = ready.supervisor, ready.model
        src, dst = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 0)
        ready.cache.flush_all()
        cycles = sup.rcc(dst, src, ROW, "none")
        assert cycles == m.syscall + 4 * m.page_walk + 58

    def test_granularity(self, ready):
        sup = ready.supervisor
        src, dst = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 0)
        with pytest.raises(GranularityViolation):
            sup.rcc(dst, src, PAGE, "none")
        with pytest.raises(GranularityViolation):
            sup.rcc(dst + 64, src, ROW, "none")

    def test_different_ids_not_colocated(self, ready):
        sup = ready.supervisor
        src, dst = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 1)
        with pytest.raises(NotCoLocated):
            sup.rcc(dst, src, ROW, "none")

    def test_unmapped(self, ready):
        sup = ready.supervisor
        src = sup.alloc_align(ROW, 0)
        with pytest.raises(UnmappedAddress):
            sup.rcc(src + 16 * ROW, src, ROW, "none")

    def test_bad_flush_mode(self, ready):
        with pytest.raises(ValueError):
            ready.supervisor.rcc(0, 0, ROW, "partial")


class TestRci:
    def test_zeroes(self, ready):
        sup = ready.supervisor
        va = sup.alloc_align(2 * ROW, 0)
        fill(ready, va, 2 * ROW, 3)
        sup.rci(va, 2 * ROW, "full")
        assert sup.read(va, 2 * ROW) == bytes(2 * ROW)

    def test_rci_then_rcc_composes(self, ready):
        sup = ready.supervisor
        a, b = sup.alloc_align(ROW, 0), sup.alloc_align(ROW, 0)
        fill(ready, a, ROW, 4)
        fill(ready, b, ROW, 5)
        sup.rci(a, ROW, "full")
        sup.rcc(b, a, ROW, "full")
        assert sup.read(b, ROW) == bytes(ROW)

    def test_initializer_untouched(self, ready):
        sup = ready.supervisor
        va = sup.alloc_align(ROW, 0)
        fill(ready, va, ROW, 6)
        sup.rci(va, ROW, "full")
        for init_pa in set(sup.irt.values()):
            d = ready.controller.phys_to_dram(init_pa)
            assert not ready.device.peek_row(d.bank, d.row).any()

    def test_malloc_memory_rejected(self, ready):
        va = ready.supervisor.malloc(ROW)
        with pytest.raises((NotCoLocated, UnmappedAddress)):
            ready.supervisor.rci(va, ROW, "none")

    def test_missing_initializer(self, ready):
        sup = ready.supervisor
        va = sup.alloc_align(ROW, 0)
        del sup.irt[sup.page_table.lookup(va // PAGE).ppn]
        with pytest.raises(MissingInitializer):
            sup.rci(va, ROW, "none")

    def test_costs(self, ready):
        sup, m = ready.supervisor, ready.model
        va = sup.alloc_align(ROW, 0)
        ready.cache.flush_all()
        assert sup.rci(va, ROW, "none") == m.syscall + 2 * m.page_walk + m.irt_lookup + 58


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_rcc_end_to_end(ready, rows, seed, touched):
    """rcc with full flushing makes the destination equal the CPU-visible source, dirty lines included."""
    sup = ready.supervisor
    sup.reset_allocations()
    ready.cache.flush_all()  # lines from earlier examples would otherwise shadow the poked rows
    size = rows * ROW
    src, dst = sup.alloc_align(size, 7), sup.alloc_align(size, 7)
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size, dtype=np.uint8)
    for bank, row in sup.allocations[src].rows:
        ready.device.poke_row(bank, row, rng.integers(0, 256, ROW, dtype=np.uint8))
    expected = bytearray(sup.read(src, size))
    n = int(touched * size // 64)
    for off in rng.choice(size // 64, n, replace=False) * 64:
        patch = base[off:off + 64].tobytes()
        sup.write(src + int(off), patch)
        expected[off:off + 64] = patch
    sup.rcc(dst, src, size, "full")
    assert sup.read(dst, size) == bytes(expected)


class TestTrngCells:
    def _block(self, system):
        row, col = system.device.weak_cells.trng_blocks[0]
        return system.controller.dram_to_phys(row, 0, col)

    def test_finds_ground_truth_cells(self, system):
        found = system.supervisor.characterize_trng_cells(self._block(system), 10_000)
        assert sorted(found) == sorted(system.device.weak_cells.trng_bits(0))
        from pumsim.controller import CRF_TRNG_ADDR, CRF_TRNG_BITS

        assert system.controller.crf.read(CRF_TRNG_ADDR) == self._block(system)
        assert sorted(system.controller.crf.read(r) for r in CRF_TRNG_BITS) == sorted(found)

    def test_strong_block(self, system):
        blocks = system.device.weak_cells.trng_blocks
        row = (blocks[1][0] + 1) % SMALL.rows_per_bank
        pa = system.controller.dram_to_phys(row, 1, 0)
        assert (1, row, 0) not in system.device.weak_cells.cells
        with pytest.raises(NoTrngCells):
            system.supervisor.characterize_trng_cells(pa, 1000)

    def test_degenerate_band(self, system):
        found = system.supervisor.characterize_trng_cells(self._block(system), 1000, band=(0.0, 1.0))
        assert len(found) == 512

    def test_needs_enough_trials(self, system):
        with pytest.raises(ValueError):
            system.supervisor.characterize_trng_cells(self._block(system), 999)


def test_dump_tables(ready, tmp_path):
    sup = ready.supervisor
    sup.alloc_align(ROW, 3)
    paths = sup.dump_tables(tmp_path)
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == SMALL.banks * (SMALL.rows_per_bank // SMALL.rows_per_subarray) * (SMALL.rows_per_subarray - 1)
    with open(paths[1]) as fh:
        assert list(csv.reader(fh))[1] == ["0", "3", str(sup.ait[0][3])]
    assert len(paths[2].read_text().splitlines()) == 1 + len(sup.irt)
