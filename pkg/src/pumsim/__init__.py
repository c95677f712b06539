"""Simulator of a processing-using-memory system: DDR3 device with RowClone and
D-RaNGe behaviors, a custom memory controller, a memory-mapped PuM operations
controller, an L1 cache, supervisor software and an evaluation harness."""

from .config import SystemConfig, load_config, parse_config
from .cycles import CycleModel
from .dram import DeviceGeometry, TimingParams
from .system import System

__all__ = ["CycleModel", "DeviceGeometry", "System", "SystemConfig", "TimingParams", "load_config", "parse_config"]
__version__ = "0.1.0"
