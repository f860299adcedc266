"""Semantic lattice of primitive car-following patterns.

Each segment is reduced to its centroid in physical units and labeled on
three axes: range (3 levels), range rate (5) and acceleration (5), giving 75
patterns. Level enums are declared from the lowest value band to the highest.
"""

import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import ValidationError

from drivestyle.config import ThresholdSpec
from drivestyle.distributions import Family, FittedDist, FloatArray, fit_distribution, percentile
from drivestyle.errors import ContractError, EventFileError, FitError, InputError
from drivestyle.markov import Segment
from drivestyle.models import ThresholdTable

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS_PATH = Path(__file__).parent / "data" / "default_thresholds.json"


class DistanceLevel(StrEnum):
    CD = "CD"
    ND = "ND"
    LD = "LD"


class RateLevel(StrEnum):
    RCI = "RCI"
    CI = "CI"
    KE = "KE"
    FB = "FB"
    RFB = "RFB"


class AccelLevel(StrEnum):
    AD = "AD"
    GD = "GD"
    NA = "NA"
    GA = "GA"
    AA = "AA"


class Variable(StrEnum):
    RANGE = "range"
    RATE = "rate"
    ACCEL = "accel"


Level = DistanceLevel | RateLevel | AccelLevel

_LEVELS: dict[Variable, list[Level]] = {
    Variable.RANGE: list(DistanceLevel),
    Variable.RATE: list(RateLevel),
    Variable.ACCEL: list(AccelLevel),
}

DISTANCE_PHRASES = {
    DistanceLevel.CD: "close distance",
    DistanceLevel.ND: "normal distance",
    DistanceLevel.LD: "long distance",
}
RATE_PHRASES = {
    RateLevel.RCI: "rapidly closing in",
    RateLevel.CI: "closing in",
    RateLevel.KE: "keeping",
    RateLevel.FB: "falling behind",
    RateLevel.RFB: "rapidly falling behind",
}
ACCEL_PHRASES = {
    AccelLevel.AD: "aggressive deceleration",
    AccelLevel.GD: "gentle deceleration",
    AccelLevel.NA: "no acceleration",
    AccelLevel.GA: "gentle acceleration",
    AccelLevel.AA: "aggressive acceleration",
}
VARIABLE_NAMES = {
    Variable.RANGE: "Range [m]",
    Variable.RATE: "Range rate [m/s]",
    Variable.ACCEL: "Acceleration [m/s^2]",
}

# Preference indices: i runs over acceleration (AA = -2 ... AD = 2), j over range rate (RCI = -2 ... RFB = 2)
ACCEL_INDEX = {AccelLevel.AA: -2, AccelLevel.GA: -1, AccelLevel.NA: 0, AccelLevel.GD: 1, AccelLevel.AD: 2}
RATE_INDEX = {RateLevel.RCI: -2, RateLevel.CI: -1, RateLevel.KE: 0, RateLevel.FB: 1, RateLevel.RFB: 2}

# Families fitted per variable for threshold selection
THRESHOLD_FAMILIES = {Variable.RANGE: Family.GAMMA, Variable.RATE: Family.STUDENT_T, Variable.ACCEL: Family.STUDENT_T}


@dataclass(frozen=True, order=True)
class PrimitivePattern:
    distance: DistanceLevel
    rate: RateLevel
    accel: AccelLevel

    @property
    def code(self) -> str:
        """Compact ``RATE-ACCEL-DISTANCE`` code, e.g. ``KE-AD-LD``."""
        return f"{self.rate}-{self.accel}-{self.distance}"

    @classmethod
    def from_code(cls, code: str) -> "PrimitivePattern":
        try:
            rate, accel, distance = code.split("-")
            return cls(DistanceLevel(distance), RateLevel(rate), AccelLevel(accel))
        except ValueError as e:
            raise InputError(f"invalid pattern code {code!r}") from e


@dataclass(frozen=True)
class LabeledSegment:
    event_id: str
    segment: Segment
    representative: FloatArray
    pattern: PrimitivePattern


def all_patterns() -> list[PrimitivePattern]:
    """The full 3 x 5 x 5 lattice."""
    return [PrimitivePattern(d, r, a) for d, r, a in itertools.product(DistanceLevel, RateLevel, AccelLevel)]


# ============================================================================
# THRESHOLDS
# ============================================================================


def default_thresholds() -> ThresholdTable:
    """The bundled default table."""
    try:
        return ThresholdTable.model_validate_json(DEFAULT_THRESHOLDS_PATH.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise EventFileError(str(DEFAULT_THRESHOLDS_PATH), f"bundled thresholds unreadable: {e}") from e


def load_thresholds(path: Path) -> ThresholdTable:
    try:
        return ThresholdTable.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read thresholds {path}: {e}") from e
    except ValidationError as e:
        raise EventFileError(str(path), f"invalid threshold table: {e}") from e


def _check_pooled(name: str, data: npt.ArrayLike, spec: ThresholdSpec) -> FloatArray:
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < spec.min_samples:
        raise InputError(f"need at least {spec.min_samples} pooled {name} samples, got {x.size}")
    return x


def compute_thresholds(
    range_data: npt.ArrayLike,
    rate_data: npt.ArrayLike,
    accel_data: npt.ArrayLike,
    spec: ThresholdSpec | None = None,
) -> ThresholdTable:
    """Fit each variable's family and cut it at the configured percentiles.

    Range uses a Gamma fit; range rate and acceleration use Student-t fits.
    """
    spec = spec or ThresholdSpec()
    pooled = {
        Variable.RANGE: _check_pooled("range", range_data, spec),
        Variable.RATE: _check_pooled("range rate", rate_data, spec),
        Variable.ACCEL: _check_pooled("acceleration", accel_data, spec),
    }
    percentiles = {
        Variable.RANGE: spec.range_percentiles,
        Variable.RATE: spec.rate_percentiles,
        Variable.ACCEL: spec.accel_percentiles,
    }
    cuts: dict[Variable, tuple[float, ...]] = {}
    for variable, data in pooled.items():
        dist = fit_distribution(data, THRESHOLD_FAMILIES[variable])
        cuts[variable] = tuple(percentile(dist, p) for p in percentiles[variable])
        logger.info(f"{variable} thresholds from {dist.family} fit: {[round(c, 3) for c in cuts[variable]]}")

    return ThresholdTable.model_validate(
        {
            "range_cuts": cuts[Variable.RANGE],
            "rate_cuts": cuts[Variable.RATE],
            "accel_cuts": cuts[Variable.ACCEL],
            "source": "fitted",
            "notes": [
                f"range: gamma fit, percentiles {list(spec.range_percentiles)}",
                f"rate: student-t fit, percentiles {list(spec.rate_percentiles)}",
                f"accel: student-t fit, percentiles {list(spec.accel_percentiles)}",
            ],
        }
    )


def family_report(
    range_data: npt.ArrayLike, rate_data: npt.ArrayLike, accel_data: npt.ArrayLike
) -> dict[Variable, list[FittedDist]]:
    """Fit all four families to each variable, best log-likelihood first.

    Families that fail to fit are skipped with a warning.
    """
    report: dict[Variable, list[FittedDist]] = {}
    for variable, data in ((Variable.RANGE, range_data), (Variable.RATE, rate_data), (Variable.ACCEL, accel_data)):
        fits: list[FittedDist] = []
        for family in Family:
            try:
                fits.append(fit_distribution(data, family))
            except FitError as e:
                logger.warning(f"{variable}: {family} fit failed ({e})")
        report[variable] = sorted(fits, key=lambda f: f.loglik, reverse=True)
    return report


def cuts_for(variable: Variable, table: ThresholdTable) -> tuple[float, ...]:
    match variable:
        case Variable.RANGE:
            return table.range_cuts
        case Variable.RATE:
            return table.rate_cuts
        case Variable.ACCEL:
            return table.accel_cuts


def threshold_rows(table: ThresholdTable) -> list[tuple[str, str, float, float]]:
    """(variable, level, lower, upper) rows, highest level first.

    Each level covers [lower, upper); the outer levels are unbounded.
    """
    rows: list[tuple[str, str, float, float]] = []
    for variable in Variable:
        edges = [-np.inf, *cuts_for(variable, table), np.inf]
        levels = _LEVELS[variable]
        for k in range(len(levels) - 1, -1, -1):
            rows.append((VARIABLE_NAMES[variable], str(levels[k]), float(edges[k]), float(edges[k + 1])))
    return rows


# ============================================================================
# LABELING
# ============================================================================


def label_value(value: float, variable: Variable, table: ThresholdTable) -> Level:
    """Level whose half-open interval [lower, upper) contains ``value``."""
    if not np.isfinite(value):
        raise InputError(f"cannot label non-finite {variable} value {value}")
    index = int(np.searchsorted(np.asarray(cuts_for(variable, table)), value, side="right"))
    return _LEVELS[variable][index]


def segment_representative(frames: FloatArray, segment: Segment) -> FloatArray:
    """Centroid of the segment's frames (one-cluster K-means)."""
    if segment.start < 0 or segment.duration < 1 or segment.end > frames.shape[0]:
        raise ContractError(
            f"segment [{segment.start}, {segment.end}) lies outside an event of {frames.shape[0]} frames"
        )
    return frames[segment.start : segment.end].mean(axis=0)


def label_segment(representative: npt.ArrayLike, table: ThresholdTable) -> PrimitivePattern:
    rep = np.asarray(representative, dtype=np.float64)
    if rep.shape != (3,) or not np.all(np.isfinite(rep)):
        raise InputError(f"representative must be a finite (delta_d, delta_v, a_x) vector, got {rep.tolist()}")
    distance = label_value(float(rep[0]), Variable.RANGE, table)
    rate = label_value(float(rep[1]), Variable.RATE, table)
    accel = label_value(float(rep[2]), Variable.ACCEL, table)
    return PrimitivePattern(DistanceLevel(distance), RateLevel(rate), AccelLevel(accel))


def label_event(
    event_id: str, frames: FloatArray, segments: Sequence[Segment], table: ThresholdTable
) -> list[LabeledSegment]:
    """Label every segment of one event; ``frames`` must be in physical units."""
    labeled: list[LabeledSegment] = []
    for segment in segments:
        rep = segment_representative(frames, segment)
        labeled.append(LabeledSegment(event_id, segment, rep, label_segment(rep, table)))
    return labeled


def semantic_sentence(pattern: PrimitivePattern) -> str:
    return (
        f"The driver is {RATE_PHRASES[pattern.rate]} the lead vehicle by "
        f"{ACCEL_PHRASES[pattern.accel]} in a {DISTANCE_PHRASES[pattern.distance]}."
    )


def preference_index(pattern: PrimitivePattern) -> tuple[int, int]:
    """(i, j) lattice coordinates: acceleration index and range-rate index."""
    return ACCEL_INDEX[pattern.accel], RATE_INDEX[pattern.rate]


def describe_event(labeled: Sequence[LabeledSegment], rate_hz: float) -> list[str]:
    """Time-stamped narrative of one event, one sentence per segment."""
    lines: list[str] = []
    for item in labeled:
        start = item.segment.start / rate_hz
        end = item.segment.end / rate_hz
        lines.append(f"[{start:.1f}-{end:.1f} s] {semantic_sentence(item.pattern)}")
    return lines
