"""Pipeline configuration: TOML file with env-var overrides.

Precedence is CLI flags > environment > file > defaults. Every tunable
constant lives here so a single config reproduces a full run.
"""

import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import filters, targets, tiling


@dataclass
class PipelineConfig:
    manifest: str = ""
    out_dir: str = "out"
    cache_dir: str = "cache"

    window: int = tiling.TILE_SIZE
    stride: int = tiling.DEFAULT_STRIDE
    min_component_area: int = tiling.MIN_COMPONENT_AREA
    min_clip_fraction: float = tiling.MIN_CLIP_FRACTION
    promote_classes: list = field(default_factory=lambda: list(tiling.DEFAULT_PROMOTE_CLASSES))

    eps: float = targets.DEFAULT_EPS
    min_pts: int = targets.DEFAULT_MIN_PTS
    relation_max_dist: float = targets.DEFAULT_RELATION_MAX_DIST
    achromatic_dominance: float = targets.ACHROMATIC_DOMINANCE
    chromatic_dominance: float = targets.CHROMATIC_DOMINANCE

    gamma: float = filters.DEFAULT_GAMMA
    contrast: float = filters.DEFAULT_CONTRAST
    grain_sigma: float = filters.DEFAULT_GRAIN_SIGMA
    noise_high: float = filters.DEFAULT_NOISE_HIGH
    p_filter: float = filters.DEFAULT_P_FILTER

    enhancer_url: str = ""
    enhancer_model: str = ""
    enhancer_key: str = ""
    enhancer_concurrency: int = 4

    test_fraction: float = 0.265
    seed: int = 0
    workers: int = 1

    def validate(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if not 0.0 <= self.p_filter <= 1.0:
            raise ConfigError("p_filter must be in [0, 1]")
        for name in ("achromatic_dominance", "chromatic_dominance"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1]")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.window < 1 or self.stride < 1:
            raise ConfigError("window and stride must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


class ConfigError(ValueError):
    pass


_ENV_PREFIX = "FORGE_"


def load_config(path: str = None, overrides: dict = None) -> PipelineConfig:
    """Build a config from file, then FORGE_* env vars, then overrides."""
    cfg = PipelineConfig()
    values = {}
    if path:
        with open(path, "rb") as f:
            values.update(tomllib.load(f))
    for f_ in fields(PipelineConfig):
        env = os.environ.get(_ENV_PREFIX + f_.name.upper())
        if env is not None:
            values[f_.name] = env
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    valid_names = {f_.name for f_ in fields(PipelineConfig)}
    for key, value in values.items():
        if key not in valid_names:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = str(value).lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif isinstance(current, list) and isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        setattr(cfg, key, value)
    return cfg.validate()
