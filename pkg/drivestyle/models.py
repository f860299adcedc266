"""Pydantic models for configuration and every serialized record."""

from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from drivestyle.config import InferenceDefaults

SCHEMA_VERSION = 1


class ModelKind(StrEnum):
    """The three nonparametric segmentation models."""

    HDP_HMM = "hdp-hmm"
    STICKY_HDP_HMM = "sticky-hdp-hmm"
    HDP_HSMM = "hdp-hsmm"

    @property
    def is_sticky(self) -> bool:
        return self is ModelKind.STICKY_HDP_HMM

    @property
    def is_semi_markov(self) -> bool:
        return self is ModelKind.HDP_HSMM


class EmissionMode(StrEnum):
    """How Gaussian emission means are treated."""

    LEARNED_MEAN = "learned-mean"
    FIXED_ZERO_MEAN = "fixed-zero-mean"


class InferenceConfig(BaseModel):
    """Settings of one Gibbs chain."""

    model_config = {"extra": "forbid", "frozen": True}

    model_kind: ModelKind = ModelKind.HDP_HSMM
    l_max: int = Field(20, ge=1)
    d_max: int = Field(500, ge=1)
    n_iters: int = Field(1000, ge=1)
    burn_in: int = Field(500, ge=0)
    gamma_prior: tuple[float, float] = (1.0, 1.0)
    alpha_prior: tuple[float, float] = (1.0, 1.0)
    kappa_prior: tuple[float, float] = (100.0, 1.0)
    duration_prior: tuple[float, float] = (1.0, 1.0)
    resample_hypers: bool = True
    emission_mode: EmissionMode = EmissionMode.LEARNED_MEAN
    kappa0: float = Field(0.25, gt=0)
    scale_fraction: float = Field(0.75, gt=0)
    occupancy_floor: float = Field(0.01, ge=0, lt=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "InferenceConfig":
        if self.burn_in >= self.n_iters:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than n_iters ({self.n_iters})")
        for name in ("gamma_prior", "alpha_prior", "kappa_prior", "duration_prior"):
            shape, rate = getattr(self, name)
            if shape <= 0 or rate <= 0:
                raise ValueError(f"{name} must have positive shape and rate")
        return self

    @classmethod
    def from_defaults(cls, defaults: InferenceDefaults, kind: ModelKind, seed: int = 0, **overrides: object):
        """Build a chain config from the settings block plus explicit overrides."""
        values: dict[str, object] = defaults.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate({**values, "model_kind": kind, "seed": seed})


class ThresholdTable(BaseModel):
    """Cut points of the 3 x 5 x 5 semantic lattice, in physical units."""

    model_config = {"extra": "forbid", "frozen": True}

    schema_version: int = SCHEMA_VERSION
    units: dict[str, str] = {"range_cuts": "m", "rate_cuts": "m/s", "accel_cuts": "m/s^2"}
    range_cuts: tuple[float, float]
    rate_cuts: tuple[float, float, float, float]
    accel_cuts: tuple[float, float, float, float]
    source: str = "fitted"
    notes: list[str] = []

    @model_validator(mode="after")
    def _check_ascending(self) -> "ThresholdTable":
        for name in ("range_cuts", "rate_cuts", "accel_cuts"):
            cuts: tuple[float, ...] = getattr(self, name)
            if any(b <= a for a, b in zip(cuts, cuts[1:], strict=False)):
                raise ValueError(f"{name} must be strictly ascending, got {cuts}")
        return self


class NormalizationStats(BaseModel):
    """Pooled per-feature statistics used to standardize a driver's events."""

    model_config = {"extra": "forbid"}

    mean: list[float]
    std: list[float]


class DatasetManifest(BaseModel):
    """Index file written next to a directory of event CSVs."""

    model_config = {"extra": "forbid"}

    schema_version: int = SCHEMA_VERSION
    driver_id: str
    rate_hz: float
    files: list[str]
    normalization: NormalizationStats | None = None


class SegmentRecord(BaseModel):
    model_config = {"extra": "forbid"}

    state: int
    start: int
    duration: int


class TruthRecord(BaseModel):
    """Generating parameters and true segmentations of a synthetic dataset."""

    model_config = {"extra": "forbid"}

    schema_version: int = SCHEMA_VERSION
    kind: Literal["drivestyle-truth"] = "drivestyle-truth"
    seed: int
    rate_hz: float
    init: list[float]
    trans: list[list[float]]
    means: list[list[float]]
    covs: list[list[list[float]]]
    durations: list[float]
    d_max: int
    events: dict[str, list[SegmentRecord]]


class EmissionPriorRecord(BaseModel):
    """Normal-inverse-Wishart hyperparameters the chain was run with."""

    model_config = {"extra": "forbid"}

    mean0: list[float]
    kappa0: float
    n0: float
    S0: list[list[float]]


class CheckpointRecord(BaseModel):
    """Self-describing snapshot of a fitted chain."""

    model_config = {"extra": "forbid"}

    schema_version: int = SCHEMA_VERSION
    kind: Literal["drivestyle-checkpoint"] = "drivestyle-checkpoint"
    config: InferenceConfig
    seed: int
    iteration: int
    concentrations: dict[str, float]
    beta: list[float]
    init: list[float]
    trans: list[list[float]]
    means: list[list[float]]
    covs: list[list[list[float]]]
    durations: list[float] | None = None
    d_max: int
    prior: EmissionPriorRecord
    normalization: NormalizationStats
    occupied_states: list[int]
    loglik_trace: list[float]


class FoldPlan(BaseModel):
    """Seeded partition of a dataset's events into k folds."""

    model_config = {"extra": "forbid", "frozen": True}

    k: int = Field(10, ge=2)
    assignment: dict[str, int]
    seed: int

    def fold(self, index: int) -> list[str]:
        """Event ids held out in fold ``index``, in dataset order."""
        return [event_id for event_id, f in self.assignment.items() if f == index]

    def sizes(self) -> list[int]:
        return [len(self.fold(i)) for i in range(self.k)]


class ModelSummary(BaseModel):
    """Per-fold metrics of one model kind."""

    model_config = {"extra": "forbid"}

    kind: ModelKind
    training_loglik: list[float | None]
    predictive_loglik: list[float | None]
    errors: list[str | None]
    training_mean: float | None = None
    training_std: float | None = None
    predictive_mean: float | None = None
    predictive_std: float | None = None
    short_segment_fraction: float | None = None
    mean_duration_s: float | None = None
    duration_histogram: list[float] = []


class ComparisonReport(BaseModel):
    """Cross-validated comparison of the three model kinds."""

    model_config = {"extra": "forbid"}

    schema_version: int = SCHEMA_VERSION
    k: int
    seed: int
    n_iters: int
    predictive: Literal["map", "sampled"] = "map"
    training_checksums: list[str]
    models: list[ModelSummary]
    notes: list[str] = [
        "training_loglik is log p(training data | final parameters) with states marginalized",
        "predictive_loglik is the duration log-likelihood of non-censored MAP segments per test frame",
        "HMM kinds use the geometric duration law with success probability 1 - pi_ii",
    ]

    def summary(self, kind: ModelKind) -> ModelSummary:
        for model in self.models:
            if model.kind is kind:
                return model
        raise KeyError(kind)
