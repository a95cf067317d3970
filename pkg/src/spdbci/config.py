"""Experiment configuration: defaults, the flat key=value file format,
and round-tripping to the snapshot stored in model bundles."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .filterbank import DEFAULT_BANDS, BandSpec


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    filter_order: int = 4
    stopband_atten_db: float = 40.0
    window_len: int = 125
    m: int = 5
    k_heads: int = 4
    reeig_epsilon: float = 1e-4
    shrinkage_scale: float = 1e-4  # epsilon = scale * trace / M
    bimap_layers: int = 2
    karcher_iterations: int = 10
    rbn_momentum: float = 0.9
    conv_out: int = 64
    selection_max_iters: int = 20
    selection_tol: float = 1e-6
    channel_scoring: str = "row-norm"
    std_divisor: str = "population"  # or "sample"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.m < 1 or self.k_heads < 1 or self.window_len < 1:
            raise ConfigError("m, k_heads, window_len must be positive")
        if self.reeig_epsilon <= 0 or self.shrinkage_scale < 0:
            raise ConfigError("reeig_epsilon > 0 and shrinkage_scale >= 0 required")
        if self.std_divisor not in ("population", "sample"):
            raise ConfigError("std_divisor must be 'population' or 'sample'")

    def band_spec(self) -> BandSpec:
        return BandSpec(self.bands, self.filter_order, self.stopband_atten_db)


def _parse_bands(text: str) -> tuple[tuple[float, float], ...]:
    bands = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split("-")
        if len(parts) != 2:
            raise ConfigError(f"band {chunk!r} must look like '8-12'")
        bands.append((float(parts[0]), float(parts[1])))
    if not bands:
        raise ConfigError("bands must list at least one band")
    return tuple(bands)


def _format_bands(bands) -> str:
    return ";".join(f"{lo:g}-{hi:g}" for lo, hi in bands)


def config_from_mapping(items: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from string key=value pairs; unknown keys error."""
    known = {f.name: f for f in fields(TrainConfig)}
    kwargs = {}
    for key, value in items.items():
        if key.startswith("_"):
            continue  # bundle-internal metadata
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "bands":
            kwargs[key] = _parse_bands(value)
        elif known[key].type in ("int", int):
            kwargs[key] = int(value)
        elif known[key].type in ("float", float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return TrainConfig(**kwargs)


def config_to_mapping(config: TrainConfig) -> dict[str, str]:
    out = {}
    for f in fields(TrainConfig):
        value = getattr(config, f.name)
        out[f.name] = _format_bands(value) if f.name == "bands" else str(value)
    return out


def load_config(path) -> TrainConfig:
    """Parse a flat UTF-8 ``key = value`` file.

    Blank lines and lines starting with ``#`` are ignored; unknown keys
    are errors.
    """
    items: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in items:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            items[key] = value
    return config_from_mapping(items)
