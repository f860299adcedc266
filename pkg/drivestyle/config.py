"""Settings loading for DriveStyle.

Packaged defaults live in ``config.yaml`` next to this module. A user file
passed with ``--config`` is merged over them key by key.
"""

import logging
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from drivestyle.errors import InputError

logger = logging.getLogger(__name__)

CONFIG_PATH = Path(__file__).parent / "config.yaml"

PriorPair = tuple[float, float]


class InferenceDefaults(BaseModel):
    """Sampler defaults; turned into an InferenceConfig per model kind."""

    model_config = {"extra": "forbid"}

    l_max: int = Field(20, ge=1)
    d_max: int = Field(500, ge=1)
    n_iters: int = Field(1000, ge=1)
    burn_in: int = Field(500, ge=0)
    resample_hypers: bool = True
    gamma_prior: PriorPair = (1.0, 1.0)
    alpha_prior: PriorPair = (1.0, 1.0)
    kappa_prior: PriorPair = (100.0, 1.0)
    duration_prior: PriorPair = (1.0, 1.0)
    kappa0: float = Field(0.25, gt=0)
    scale_fraction: float = Field(0.75, gt=0)
    occupancy_floor: float = Field(0.01, ge=0, lt=1)
    emission_mode: Literal["learned-mean", "fixed-zero-mean"] = "learned-mean"


class ExtractionRules(BaseModel):
    """Predicates that define a car-following event in a raw log."""

    model_config = {"extra": "forbid"}

    rate_hz: float = Field(10.0, gt=0)
    max_range_m: float = 120.0
    min_speed_mps: float = 5.0
    min_duration_s: float = 50.0
    max_gap_frames: float = Field(1.5, gt=1.0)


class SyntheticBenchmark(BaseModel):
    """Ground-truth HSMM used by ``synth`` and the acceptance benchmarks."""

    model_config = {"extra": "forbid"}

    n_states: int = Field(4, ge=1)
    n_events: int = Field(20, ge=1)
    n_frames: int = Field(600, ge=1)
    duration_rate: float = Field(49.0, gt=0)
    separation: float = Field(3.0, gt=0)
    d_max: int = Field(500, ge=1)
    rate_hz: float = Field(10.0, gt=0)
    driver_id: str = "synthetic"
    physical_offset: tuple[float, float, float] = (40.0, 0.0, 0.0)
    physical_scale: tuple[float, float, float] = (8.0, 0.4, 0.08)


class ThresholdSpec(BaseModel):
    """Percentiles at which each variable is cut into semantic levels."""

    model_config = {"extra": "forbid"}

    range_percentiles: tuple[float, float] = (30.0, 85.0)
    rate_percentiles: tuple[float, float, float, float] = (15.0, 40.0, 60.0, 85.0)
    accel_percentiles: tuple[float, float, float, float] = (20.0, 40.0, 60.0, 80.0)
    min_samples: int = Field(1000, ge=10)

    @model_validator(mode="after")
    def _check_ascending(self) -> "ThresholdSpec":
        for name in ("range_percentiles", "rate_percentiles", "accel_percentiles"):
            values: tuple[float, ...] = getattr(self, name)
            if any(not 0 < p < 100 for p in values):
                raise ValueError(f"{name} must lie in (0, 100)")
            if any(b <= a for a, b in zip(values, values[1:], strict=False)):
                raise ValueError(f"{name} must be strictly ascending")
        return self


class StyleSettings(BaseModel):
    model_config = {"extra": "forbid"}

    kl_epsilon: float = Field(1e-6, gt=0)


class EvaluationSettings(BaseModel):
    model_config = {"extra": "forbid"}

    k: int = Field(10, ge=2)
    batch_size: int = Field(4, ge=1)
    predictive: Literal["map", "sampled"] = "map"


class Settings(BaseModel):
    """All tunables of the pipeline."""

    model_config = {"extra": "forbid"}

    inference: InferenceDefaults = InferenceDefaults()
    extraction: ExtractionRules = ExtractionRules()
    synthetic: SyntheticBenchmark = SyntheticBenchmark()
    thresholds: ThresholdSpec = ThresholdSpec()
    styles: StyleSettings = StyleSettings()
    evaluation: EvaluationSettings = EvaluationSettings()


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)  # type: ignore[arg-type]
        else:
            merged[key] = value
    return merged


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            content = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise InputError(f"Cannot read config {path}: {e}") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise InputError(f"Config {path} must be a mapping at the top level")
    return content  # type: ignore[return-value]


def load_settings(path: Path | None = None) -> Settings:
    """Load packaged defaults, optionally merged with a user override file.

    Args:
        path: Optional YAML file whose keys override the packaged defaults

    Returns:
        Validated Settings
    """
    raw = _read_yaml(CONFIG_PATH)
    if path is not None:
        logger.info(f"Loading config overrides from {path}")
        raw = _deep_merge(raw, _read_yaml(path))
    try:
        return Settings.model_validate(raw)
    except ValidationError as e:
        raise InputError(f"Invalid configuration: {e}") from e
