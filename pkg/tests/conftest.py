from __future__ import annotations

import pytest

from pumsim.config import SystemConfig
from pumsim.dram import DeviceGeometry
from pumsim.system import System

# 2 banks x 256 rows x 8 KiB, 64 rows per subarray: 4 MiB, characterizes in well under a second.
SMALL = DeviceGeometry(banks=2, rows_per_bank=256, rows_per_subarray=64)
# 64 MiB, enough room for two 8 MiB arrays under one allocation ID.
MEDIUM = DeviceGeometry(rows_per_bank=1024)


def small_config(**overrides) -> SystemConfig:
    overrides.setdefault("geometry", SMALL)
    return SystemConfig(**overrides)


@pytest.fixture
def system() -> System:
    """Fresh, uncharacterized system on the small geometry."""
    return System(small_config())


@pytest.fixture
def ready() -> System:
    """Small system with subarrays characterized and tables built."""
    s = System(small_config())
    s.characterize(trials=1, window=128)
    return s


@pytest.fixture(scope="session")
def char_cache(tmp_path_factory):
    """Shared characterization cache file for benchmark tests on the default device."""
    return str(tmp_path_factory.mktemp("char") / "groups.json")


# Acceptance criterion id -> one-line verdict, printed in the terminal summary.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
