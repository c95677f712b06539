"""Plain-text ``key=value`` configuration for a simulated system.

Blank lines and ``#`` comments are ignored. Recognized keys::

    banks, rows_per_bank, row_bytes, rows_per_subarray, burst_bytes
    tRCD, tRAS, tRP, tCL, tCWL, tBURST, tWR, tRFC, tREFI   (nominal, ns)
    weak_seed, weak_density, trng_cells, trng_block.<bank>=<row>,<column>
    seed, refresh, poc_base, cache_seed, char_trials, char_window
    any CycleModel field (word_copy, syscall, ...)
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cycles import CycleModel
from .dram import DeviceGeometry, TimingParams
from .errors import ConfigError

GEOMETRY_KEYS = {f.name for f in fields(DeviceGeometry)}
TIMING_KEYS = {"tRCD", "tRAS", "tRP", "tCL", "tCWL", "tBURST", "tWR", "tRFC", "tREFI"}
MODEL_KEYS = {f.name for f in fields(CycleModel)}


@dataclass(frozen=True)
class SystemConfig:
    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    model: CycleModel = field(default_factory=CycleModel)
    weak_seed: int = 0
    weak_density: float = 1e-7
    trng_cells: int = 4
    trng_blocks: dict[int, tuple[int, int]] | None = None
    seed: int = 0
    refresh: bool = True
    poc_base: int = 0x4000_0000
    cache_seed: int = 0
    char_trials: int = 1
    char_window: int = 1024

    def with_seed(self, seed: int) -> SystemConfig:
        return replace(self, seed=seed)


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}", key)


def _number(key: str, raw: str, kind):
    try:
        return kind(raw, 0) if kind is int else kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}", key) from None


def parse_config(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse configuration text; unknown keys and malformed values raise ConfigError naming the key."""
    base = base or SystemConfig()
    geometry: dict = {}
    timing: dict = {}
    model: dict = {}
    scalars: dict = {}
    trng_blocks: dict[int, tuple[int, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}", line)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in GEOMETRY_KEYS:
            geometry[key] = _number(key, raw, int)
        elif key in TIMING_KEYS:
            value = _number(key, raw, float)
            if key in ("tRCD", "tRAS", "tRP"):
                timing[key] = timing[f"nominal_{key}"] = value
            else:
                timing[key] = value
        elif key in MODEL_KEYS:
            model[key] = raw
        elif key.startswith("trng_block."):
            try:
                bank = int(key.split(".", 1)[1])
                row, col = (int(v, 0) for v in raw.split(","))
            except ValueError:
                raise ConfigError(f"{key}: expected trng_block.<bank>=<row>,<column>", key) from None
            trng_blocks[bank] = (row, col)
        elif key in ("weak_seed", "trng_cells", "seed", "poc_base", "cache_seed", "char_trials", "char_window"):
            scalars[key] = _number(key, raw, int)
        elif key == "weak_density":
            scalars[key] = _number(key, raw, float)
        elif key == "refresh":
            scalars[key] = _parse_bool(key, raw)
        else:
            raise ConfigError(f"unknown configuration key {key!r}", key)

    try:
        geo = replace(base.geometry, **geometry)
        tim = replace(base.timing, **timing)
    except ValueError as exc:
        bad = next(iter(geometry or timing), None)
        raise ConfigError(f"{bad}: {exc}", bad) from exc
    cm = CycleModel.from_mapping({**{f.name: str(getattr(base.model, f.name)) for f in fields(CycleModel)}, **model})
    if trng_blocks:
        for bank, (row, col) in trng_blocks.items():
            if not (0 <= bank < geo.banks and 0 <= row < geo.rows_per_bank and 0 <= col < geo.columns):
                raise ConfigError(f"trng_block.{bank}: coordinates outside the device", f"trng_block.{bank}")
        missing = set(range(geo.banks)) - set(trng_blocks)
        if missing:
            key = f"trng_block.{min(missing)}"
            raise ConfigError(f"{key}: every bank needs a TRNG block once any is given", key)
    return replace(base, geometry=geo, timing=tim, model=cm, trng_blocks=trng_blocks or base.trng_blocks, **scalars)


def load_config(path) -> SystemConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {p}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {p}: {exc}") from None
    return parse_config(text)
