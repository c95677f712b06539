from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumsim.cache import Cache, CacheConfig
from pumsim.controller import MemoryController
from pumsim.dram import DramDevice

from .conftest import SMALL

LINE = 64
SET_STRIDE = 64 * LINE  # addresses this far apart share a set


def make_cache(seed: int = 0) -> Cache:
    return Cache(MemoryController(DramDevice(SMALL), refresh=False), CacheConfig(seed=seed))


def dram_line(cache: Cache, pa: int) -> bytes:
    d = cache.controller.phys_to_dram(pa)
    return cache.controller.device.peek_row(d.bank, d.row)[d.column * 64:(d.column + 1) * 64].tobytes()


class TestGeometry:
    def test_default_shape(self):
        cfg = CacheConfig()
        assert (cfg.capacity, cfg.associativity, cfg.line, cfg.sets) == (16384, 4, 64, 64)

    def test_rejects_bad_capacity(self):
        with pytest.raises(ValueError):
            CacheConfig(capacity=1000)


class TestAccess:
    def test_miss_then_hit(self):
        cache = make_cache()
        first = cache.access("load", 0x1000)
        second = cache.access("load", 0x1000)
        assert not first.hit and second.hit
        assert second.cycles == 1 and first.cycles > 1

    def test_store_is_write_back(self):
        cache = make_cache()
        cache.access("store", 0x40, b"\x07" * 8)
        assert cache.is_dirty(0x40)
        assert dram_line(cache, 0x40) == bytes(64)

    def test_eviction_writes_back_dirty_victim(self):
        cache = make_cache()
        cache.access("store", 0, b"\x01")
        i = 1
        while cache.contains(0):  # random replacement: keep missing in set 0 until line 0 is the victim
            cache.access("load", i * SET_STRIDE)
            i += 1
        assert i > 4
        assert cache.writebacks == 1
        assert dram_line(cache, 0)[0] == 1

    def test_store_must_fit_line(self):
        with pytest.raises(ValueError):
            make_cache().access("store", 60, b"\x00" * 8)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_cache().access("prefetch", 0)


class TestClflush:
    def test_costs(self):
        cache = make_cache()
        cache.access("store", 0, b"\x05")
        cache.access("load", 64)
        assert cache.clflush(0) == 45
        assert cache.clflush(64) == 6
        assert cache.clflush(128) == 6  # absent line costs the same as clean

    def test_flush_writes_back_and_invalidates(self):
        cache = make_cache()
        cache.access("store", 0, b"\x05")
        cache.clflush(0)
        assert not cache.contains(0)
        assert dram_line(cache, 0)[0] == 5

    def test_install_respects_associativity(self):
        cache = make_cache()
        for i in range(4):
            cache.install(i * SET_STRIDE, bytes(64))
        with pytest.raises(ValueError):
            cache.install(4 * SET_STRIDE, bytes(64))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["load", "store", "clflush"]), st.integers(0, 11), st.integers(0, 255)),
        max_size=120,
    ),
    st.integers(0, 3),
)
def test_write_back_conservation(ops, seed):
    """Loads always see the latest store, and after flushing every store has reached DRAM exactly."""
    cache = make_cache(seed)
    shadow: dict[int, int] = {}
    lines = [(i % 3) * LINE + (i // 3) * SET_STRIDE for i in range(12)]  # 12 lines over 3 sets
    for kind, idx, value in ops:
        pa = lines[idx]
        if kind == "store":
            cache.access("store", pa, bytes([value]))
            shadow[pa] = value
        elif kind == "load":
            assert cache.access("load", pa).data[0] == shadow.get(pa, 0)
        else:
            cache.clflush(pa)
        assert cache.resident_lines <= 12
    dirty_before = sum(cache.is_dirty(pa) for pa in lines)
    wb = cache.writebacks
    assert cache.flush_all() == dirty_before
    assert cache.writebacks == wb + dirty_before
    assert cache.resident_lines == 0
    for pa in lines:
        assert dram_line(cache, pa)[0] == shadow.get(pa, 0)


def test_trace_csv(tmp_path):
    cache = make_cache()
    cache.tracing = True
    cache.access("load", 0)
    cache.access("load", 0)
    cache.write_trace_csv(tmp_path / "c.csv")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "addr,kind,hit_miss,cycles"
    assert [r.split(",")[2] for r in rows[1:]] == ["miss", "hit"]
