"""Driving-style analytics over labeled segments.

Frequency matrices are stored in preference-index order: row r holds range
rate level j = r - 2 (RCI ... RFB) and column c holds acceleration level
i = c - 2 (AA ... AD).
"""

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr

from drivestyle.distributions import FloatArray
from drivestyle.errors import ContractError, InputError, ParameterDomainError
from drivestyle.markov import Segmentation
from drivestyle.semantics import (
    ACCEL_INDEX,
    RATE_INDEX,
    AccelLevel,
    DistanceLevel,
    LabeledSegment,
    PrimitivePattern,
    RateLevel,
)

logger = logging.getLogger(__name__)

DEFAULT_KL_EPSILON = 1e-6

# Lower-inclusive duration bins in seconds
DURATION_EDGES_S = (0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, float("inf"))
DURATION_BIN_LABELS = (
    "< 1.0",
    "[1.0, 5.0)",
    "[5.0, 10.0)",
    "[10.0, 15.0)",
    "[15.0, 20.0)",
    "[20.0, 25.0)",
    "[25.0, 30.0)",
    ">= 30.0",
)

# Levels along each grid axis, in index order
GRID_RATES = tuple(sorted(RateLevel, key=lambda level: RATE_INDEX[level]))
GRID_ACCELS = tuple(sorted(AccelLevel, key=lambda level: ACCEL_INDEX[level]))


def grid_cell(pattern: PrimitivePattern) -> tuple[int, int]:
    """(row, column) of a pattern in its distance level's 5 x 5 grid."""
    return RATE_INDEX[pattern.rate] + 2, ACCEL_INDEX[pattern.accel] + 2


def cell_pattern(distance: DistanceLevel, row: int, col: int) -> PrimitivePattern:
    return PrimitivePattern(distance, GRID_RATES[row], GRID_ACCELS[col])


@dataclass(frozen=True)
class FrequencyDistribution:
    """Pattern counts of one driver, one 5 x 5 grid per distance level."""

    driver_id: str
    counts: Mapping[DistanceLevel, FloatArray]

    def __post_init__(self):
        for level in DistanceLevel:
            grid = self.counts.get(level)
            if grid is None or grid.shape != (5, 5):
                raise InputError(f"counts for {level} must be a 5x5 grid")
            if np.any(grid < 0) or not np.all(np.isfinite(grid)):
                raise InputError(f"counts for {level} must be finite and nonnegative")

    @classmethod
    def from_counts(cls, driver_id: str, counts: Mapping[DistanceLevel, Sequence[Sequence[float]]]):
        grids = {level: np.zeros((5, 5)) for level in DistanceLevel}
        for level, grid in counts.items():
            grids[DistanceLevel(level)] = np.asarray(grid, dtype=np.float64)
        return cls(driver_id, grids)

    @property
    def n_segments(self) -> float:
        return float(sum(grid.sum() for grid in self.counts.values()))

    def is_empty(self, level: DistanceLevel) -> bool:
        return bool(self.counts[level].sum() == 0)

    def matrix(self, level: DistanceLevel) -> FloatArray | None:
        """Normalized frequencies at ``level``, or None when it has no segments."""
        grid = self.counts[level]
        total = grid.sum()
        if total == 0:
            return None
        return grid / total


def frequency_distribution(
    driver_id: str, labeled: Iterable[LabeledSegment | PrimitivePattern]
) -> FrequencyDistribution:
    """Count patterns per distance level."""
    grids = {level: np.zeros((5, 5)) for level in DistanceLevel}
    n = 0
    for item in labeled:
        pattern = item.pattern if isinstance(item, LabeledSegment) else item
        row, col = grid_cell(pattern)
        grids[pattern.distance][row, col] += 1
        n += 1
    if n == 0:
        raise InputError(f"driver {driver_id} has no labeled segments")
    empty = [str(level) for level in DistanceLevel if grids[level].sum() == 0]
    if empty:
        logger.info(f"Driver {driver_id}: no segments at {', '.join(empty)}")
    return FrequencyDistribution(driver_id, grids)


def frequency_grid(f: FrequencyDistribution, level: DistanceLevel) -> FloatArray:
    """Normalized grid as rendered in heatmaps; zeros for an empty level."""
    matrix = f.matrix(level)
    return np.zeros((5, 5)) if matrix is None else matrix


@dataclass(frozen=True)
class Preference:
    """Most frequent pattern(s) of one driver at one distance level."""

    distance: DistanceLevel
    indices: tuple[tuple[int, int], ...]
    patterns: tuple[PrimitivePattern, ...]
    probability: float

    @property
    def is_tie(self) -> bool:
        return len(self.indices) > 1

    def format_indices(self) -> str:
        return " or ".join(f"({i},{j})" for i, j in self.indices)


def preferred_pattern(f: FrequencyDistribution, level: DistanceLevel) -> Preference:
    """Argmax cell(s) at ``level`` mapped to (i, j); every tied cell is returned."""
    grid = f.counts[level]
    if grid.sum() == 0:
        raise ContractError(f"driver {f.driver_id} has no segments at {level}")
    rows, cols = np.nonzero(grid == grid.max())
    indices = tuple((int(c) - 2, int(r) - 2) for r, c in zip(rows, cols, strict=True))
    patterns = tuple(cell_pattern(level, int(r), int(c)) for r, c in zip(rows, cols, strict=True))
    return Preference(level, indices, patterns, float(grid.max() / grid.sum()))


def _smoothed(matrix: FloatArray, epsilon: float) -> FloatArray:
    p = matrix + epsilon
    return p / p.sum()


def kl_divergence(
    f_a: FrequencyDistribution,
    f_b: FrequencyDistribution,
    level: DistanceLevel,
    epsilon: float = DEFAULT_KL_EPSILON,
) -> float:
    """D(f_a || f_b) in nats over the 25 cells at ``level``, after epsilon smoothing."""
    if not epsilon > 0:
        raise ParameterDomainError(f"epsilon must be positive, got {epsilon}")
    a = f_a.matrix(level)
    b = f_b.matrix(level)
    if a is None or b is None:
        empty = f_a.driver_id if a is None else f_b.driver_id
        raise ContractError(f"driver {empty} has no segments at {level}")
    return float(rel_entr(_smoothed(a, epsilon), _smoothed(b, epsilon)).sum())


def kl_matrix(
    distributions: Sequence[FrequencyDistribution], epsilon: float = DEFAULT_KL_EPSILON
) -> dict[DistanceLevel, FloatArray]:
    """Pairwise divergences per distance level.

    Entry (a, b) is D(f_a || f_b). Rows and columns of a driver with no
    segments at a level are NaN.
    """
    m = len(distributions)
    if m < 2:
        raise InputError(f"KL comparison needs at least 2 drivers, got {m}")
    result: dict[DistanceLevel, FloatArray] = {}
    for level in DistanceLevel:
        matrix = np.full((m, m), np.nan)
        for a, f_a in enumerate(distributions):
            if f_a.is_empty(level):
                continue
            for b, f_b in enumerate(distributions):
                if f_b.is_empty(level):
                    continue
                matrix[a, b] = 0.0 if a == b else kl_divergence(f_a, f_b, level, epsilon)
        result[level] = matrix
    return result


@dataclass(frozen=True)
class Distinctness:
    driver_id: str
    distance: DistanceLevel
    # mean D(self || other) and mean D(other || self)
    divergence_to_others: float
    divergence_from_others: float


def _mean_or_nan(values: FloatArray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float("nan")


def driver_distinctness(
    kl: Mapping[DistanceLevel, FloatArray], driver_ids: Sequence[str]
) -> list[Distinctness]:
    """How far each driver's patterns sit from everyone else's, per level."""
    rows: list[Distinctness] = []
    for level in DistanceLevel:
        matrix = kl[level]
        if matrix.shape != (len(driver_ids), len(driver_ids)):
            raise InputError(f"KL matrix at {level} does not match {len(driver_ids)} drivers")
        off_diagonal = ~np.eye(len(driver_ids), dtype=bool)
        for d, driver_id in enumerate(driver_ids):
            rows.append(
                Distinctness(
                    driver_id,
                    level,
                    _mean_or_nan(matrix[d][off_diagonal[d]]),
                    _mean_or_nan(matrix[:, d][off_diagonal[:, d]]),
                )
            )
    return rows


@dataclass(frozen=True)
class DurationStats:
    fractions: tuple[float, ...]
    counts: tuple[int, ...]
    mean_s: float
    std_s: float
    n_segments: int
    labels: tuple[str, ...] = field(default=DURATION_BIN_LABELS)

    @property
    def short_fraction(self) -> float:
        """Fraction of segments shorter than one second."""
        return self.fractions[0]


def summarize_durations(seconds: Sequence[float] | FloatArray) -> DurationStats:
    """Bin segment durations (seconds) into the lower-inclusive duration bins."""
    x = np.asarray(seconds, dtype=np.float64).ravel()
    if x.size == 0:
        raise InputError("no segment durations to summarize")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise InputError("segment durations must be positive and finite")
    bins = np.searchsorted(np.asarray(DURATION_EDGES_S[1:-1]), x, side="right")
    counts = np.bincount(bins, minlength=len(DURATION_BIN_LABELS))
    return DurationStats(
        fractions=tuple(float(c) for c in counts / x.size),
        counts=tuple(int(c) for c in counts),
        mean_s=float(x.mean()),
        std_s=float(x.std()),
        n_segments=int(x.size),
    )


def duration_stats(segmentations: Iterable[Segmentation], rate_hz: float) -> DurationStats:
    if rate_hz <= 0:
        raise ParameterDomainError(f"rate_hz must be positive, got {rate_hz}")
    frames = [seg.duration for segmentation in segmentations for seg in segmentation.segments]
    return summarize_durations(np.asarray(frames, dtype=np.float64) / rate_hz)
