"""Assembles one complete simulated system from a configuration."""

from __future__ import annotations

from .cache import Cache, CacheConfig
from .config import SystemConfig
from .controller import MemoryController
from .cycles import Cpu, CycleModel
from .dram import DramDevice
from .poc import Poc
from .pumolib import Pumolib
from .supervisor import Supervisor


class System:
    """Device, controller, POC, cache, CPU clock, pumolib and supervisor wired together.

    Every random stream derives from ``config.seed`` except the weak-cell
    placement, which follows ``config.weak_seed`` so that a characterized
    device can be re-created under different run seeds.
    """

    def __init__(self, config: SystemConfig | None = None, model: CycleModel | None = None) -> None:
        self.config = config = config or SystemConfig()
        self.model = model or config.model
        self.geometry = config.geometry
        self.device = DramDevice(
            config.geometry,
            config.timing,
            weak_seed=config.weak_seed,
            weak_density=config.weak_density,
            trng_cells=config.trng_cells,
            trng_blocks=config.trng_blocks,
            rng_seed=config.seed,
        )
        self.controller = MemoryController(self.device, config.timing, cpu_clock_mhz=self.model.cpu_mhz,
                                           refresh=config.refresh)
        self.poc = Poc(self.controller, config.poc_base, self.model.mmio_access, self.model.poc_latency)
        self.cache = Cache(
            self.controller,
            CacheConfig(seed=config.cache_seed + config.seed),
            hit_cycles=self.model.cache_hit,
            dirty_flush_cycles=self.model.dirty_flush,
            clean_flush_cycles=self.model.clean_flush,
        )
        self.cpu = Cpu(self.model)
        self.pumolib = Pumolib(self.poc, self.cpu)
        self.supervisor = Supervisor(self.controller, self.cache, self.pumolib, self.cpu, seed=config.seed)

    def characterize(self, trials: int | None = None, window: int | None = None, cache_path=None):
        return self.supervisor.characterize_subarrays(
            trials or self.config.char_trials, window or self.config.char_window, cache_path
        )
