"""ABOUTME: Event file ingestion, car-following event extraction and normalization.
ABOUTME: Also generates synthetic ground-truth datasets and reads/writes checkpoints.
"""

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from drivestyle.config import ExtractionRules, SyntheticBenchmark
from drivestyle.distributions import FloatArray, NIWPrior, make_rng
from drivestyle.errors import ContractError, EventFileError, InputError, MissingPathError, ParameterDomainError
from drivestyle.inference import Concentrations, FitResult, ModelState
from drivestyle.markov import HmmParams, HsmmParams, Segment, Segmentation, duration_logpmf
from drivestyle.models import (
    SCHEMA_VERSION,
    CheckpointRecord,
    DatasetManifest,
    EmissionPriorRecord,
    NormalizationStats,
    SegmentRecord,
    TruthRecord,
)

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["t", "delta_d", "delta_v", "a_x"]
FEATURE_COLUMNS = EVENT_COLUMNS[1:]
RAW_COLUMNS = ["t", "lead_present", "same_lane", "delta_d", "v1", "cut_in", "delta_v", "a_x"]
BOOLEAN_COLUMNS = ["lead_present", "same_lane", "cut_in"]
MANIFEST_NAME = "manifest.json"
DEFAULT_RATE_HZ = 10.0
# Tolerance on timestamp spacing, in seconds
SPACING_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EventSeries:
    """One car-following event: T frames of (delta_d, delta_v, a_x)."""

    event_id: str
    frames: FloatArray
    rate_hz: float = DEFAULT_RATE_HZ
    t0: float = 0.0

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InputError(f"event {self.event_id} needs a non-empty T x D frame matrix")
        if not np.all(np.isfinite(self.frames)):
            raise InputError(f"event {self.event_id} contains non-finite values")
        if self.rate_hz <= 0:
            raise InputError(f"event {self.event_id} has non-positive rate {self.rate_hz}")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.rate_hz

    def times(self) -> FloatArray:
        return self.t0 + np.arange(self.n_frames) / self.rate_hz


@dataclass(frozen=True)
class DriverDataset:
    """All events of one driver, optionally standardized with pooled statistics."""

    driver_id: str
    events: tuple[EventSeries, ...]
    norm_mean: FloatArray | None = None
    norm_std: FloatArray | None = None
    normalized: bool = False
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        ids = [e.event_id for e in self.events]
        if len(set(ids)) != len(ids):
            raise InputError(f"duplicate event ids in dataset {self.driver_id}")

    def frames(self) -> list[FloatArray]:
        return [e.frames for e in self.events]

    def event(self, event_id: str) -> EventSeries:
        for e in self.events:
            if e.event_id == event_id:
                return e
        raise InputError(f"unknown event {event_id} in dataset {self.driver_id}")

    def subset(self, event_ids: Sequence[str]) -> "DriverDataset":
        wanted = set(event_ids)
        return replace(self, events=tuple(e for e in self.events if e.event_id in wanted))


@dataclass(frozen=True)
class SyntheticTruth:
    params: HsmmParams
    segmentations: dict[str, Segmentation] = field(default_factory=dict)
    seed: int = 0


def pooled_frames(dataset: DriverDataset) -> FloatArray:
    """All frames of all events stacked in event order."""
    if not dataset.events:
        raise InputError(f"dataset {dataset.driver_id} has no events")
    return np.vstack(dataset.frames())


# ============================================================================
# READ FUNCTIONS - Event files, raw logs, manifests
# ============================================================================


def _read_manifest(directory: Path) -> DatasetManifest | None:
    path = directory / MANIFEST_NAME
    if not path.exists():
        return None
    try:
        return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise EventFileError(str(path), f"invalid manifest: {e}") from e


def _read_csv(path: Path, columns: list[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise EventFileError(str(path), f"malformed CSV: {e}") from e
    if list(df.columns) != columns:
        raise EventFileError(str(path), f"expected header {','.join(columns)}, got {','.join(df.columns)}", line=1)

    values = df.apply(pd.to_numeric, errors="coerce")
    # float("nan") and "inf" parse as numbers, so test finiteness too
    bad = ~np.isfinite(values.to_numpy(dtype=np.float64)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise EventFileError(str(path), f"non-numeric or non-finite value in row {df.iloc[row].tolist()}", line=row + 2)
    return values.astype(np.float64)


def _round_trip_floats(path: Path, columns: list[str]) -> pd.DataFrame:
    """Re-read a validated file with round-trip float parsing."""
    return pd.read_csv(path, dtype=np.float64, float_precision="round_trip", encoding="utf-8")[columns]


def _infer_rate(t: FloatArray) -> float:
    if t.size < 2:
        return DEFAULT_RATE_HZ
    return round(float(1.0 / np.median(np.diff(t))), 9)


def _check_spacing(path: Path, t: FloatArray, rate_hz: float) -> None:
    steps = np.diff(t)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise EventFileError(str(path), "timestamps must be strictly increasing", line=row + 2)
    off = np.abs(steps - 1.0 / rate_hz) > SPACING_TOLERANCE * max(1.0, float(np.max(np.abs(t))))
    if np.any(off):
        row = int(np.flatnonzero(off)[0]) + 1
        raise EventFileError(str(path), f"timestamp spacing does not match {rate_hz} Hz", line=row + 2)


def load_event_file(path: Path, rate_hz: float | None = None) -> EventSeries:
    """Parse and validate one event CSV."""
    _read_csv(path, EVENT_COLUMNS)
    df = _round_trip_floats(path, EVENT_COLUMNS)
    if df.empty:
        raise EventFileError(str(path), "event file has no rows")
    t = df["t"].to_numpy()
    rate = rate_hz if rate_hz is not None else _infer_rate(t)
    _check_spacing(path, t, rate)
    return EventSeries(event_id=path.stem, frames=df[FEATURE_COLUMNS].to_numpy(), rate_hz=rate, t0=float(t[0]))


def load_events(path: Path, driver_id: str | None = None) -> DriverDataset:
    """Load a directory of per-event CSV files.

    Args:
        path: Directory of ``<event_id>.csv`` files, optionally with a manifest
        driver_id: Overrides the manifest driver id (defaults to the directory name)

    Returns:
        Unnormalized DriverDataset
    """
    directory = Path(path)
    if not directory.is_dir():
        raise MissingPathError(f"data directory not found: {directory}")

    manifest = _read_manifest(directory)
    if manifest is not None:
        files = [directory / name for name in manifest.files]
        missing = [f.name for f in files if not f.exists()]
        if missing:
            raise EventFileError(str(directory / MANIFEST_NAME), f"listed files missing: {', '.join(missing)}")
    else:
        files = sorted(directory.glob("*.csv"))
    if not files:
        raise EventFileError(str(directory), "no event CSV files found")

    rate = manifest.rate_hz if manifest is not None else None
    events = [load_event_file(f, rate) for f in files]
    rates = {e.rate_hz for e in events}
    if manifest is None and len(rates) > 1 and np.ptp(list(rates)) > 1e-6:
        raise EventFileError(str(directory), f"events disagree on sampling rate: {sorted(rates)}")

    name = driver_id or (manifest.driver_id if manifest is not None else directory.name)
    logger.info(f"Loaded {len(events)} events for driver {name} from {directory}")
    return DriverDataset(driver_id=name, events=tuple(events), rate_hz=events[0].rate_hz)


def load_raw_log(path: Path) -> pd.DataFrame:
    """Parse a raw drive log with lead/lane/cut-in flags."""
    df = _read_csv(Path(path), RAW_COLUMNS)
    for column in BOOLEAN_COLUMNS:
        if not df[column].isin([0.0, 1.0]).all():
            row = int(np.flatnonzero(~df[column].isin([0.0, 1.0]).to_numpy())[0])
            raise EventFileError(str(path), f"column {column} must be 0 or 1", line=row + 2)
        df[column] = df[column].astype(bool)
    return df


def load_truth(path: Path) -> SyntheticTruth:
    try:
        record = TruthRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise EventFileError(str(path), f"invalid truth file: {e}") from e
    params = HsmmParams(
        init=np.array(record.init),
        trans=np.array(record.trans),
        means=np.array(record.means),
        covs=np.array(record.covs),
        durations=np.array(record.durations),
        d_max=record.d_max,
    )
    segmentations = {
        event_id: Segmentation(tuple(Segment(s.state, s.start, s.duration) for s in segs))
        for event_id, segs in record.events.items()
    }
    return SyntheticTruth(params=params, segmentations=segmentations, seed=record.seed)


def load_checkpoint(path: Path) -> tuple[ModelState, CheckpointRecord]:
    """Restore the parameters of a fitted chain.

    Assignments are not stored; the returned state has none.
    """
    try:
        record = CheckpointRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read checkpoint {path}: {e}") from e
    except ValidationError as e:
        raise EventFileError(str(path), f"invalid checkpoint: {e}") from e
    if record.schema_version != SCHEMA_VERSION:
        raise EventFileError(str(path), f"unsupported checkpoint schema {record.schema_version}")

    means = np.array(record.means)
    covs = np.array(record.covs)
    if record.durations is not None:
        params: HmmParams | HsmmParams = HsmmParams(
            np.array(record.init), np.array(record.trans), means, covs, np.array(record.durations), record.d_max
        )
    else:
        params = HmmParams(np.array(record.init), np.array(record.trans), means, covs)
    prior = record.prior
    state = ModelState(
        config=record.config,
        beta=np.array(record.beta),
        concentrations=Concentrations(**record.concentrations),
        params=params,
        prior=NIWPrior(np.array(prior.mean0), prior.kappa0, prior.n0, np.array(prior.S0)),
        assignments=(),
        iteration=record.iteration,
    )
    return state, record


# ============================================================================
# WRITE FUNCTIONS - Event files, manifests, truth, checkpoints
# ============================================================================


def _format_float(value: float) -> str:
    return repr(float(value))


def write_events(dataset: DriverDataset, directory: Path) -> list[Path]:
    """Write one CSV per event plus a manifest; values round-trip exactly.

    Normalized datasets are written in physical units, and only they carry
    normalization stats in the manifest.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    physical = denormalize(dataset) if dataset.normalized else dataset

    written: list[Path] = []
    for event in physical.events:
        df = pd.DataFrame(event.frames, columns=FEATURE_COLUMNS)
        df.insert(0, "t", event.times())
        path = out / f"{event.event_id}.csv"
        df.to_csv(path, index=False, float_format=None, lineterminator="\n")
        written.append(path)

    stats = None
    if dataset.normalized and dataset.norm_mean is not None and dataset.norm_std is not None:
        stats = NormalizationStats(mean=dataset.norm_mean.tolist(), std=dataset.norm_std.tolist())
    manifest = DatasetManifest(
        driver_id=dataset.driver_id, rate_hz=dataset.rate_hz, files=[p.name for p in written], normalization=stats
    )
    (out / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(written)} events to {out}")
    return written


def write_truth(truth: SyntheticTruth, path: Path, rate_hz: float) -> None:
    p = truth.params
    record = TruthRecord(
        seed=truth.seed,
        rate_hz=rate_hz,
        init=p.init.tolist(),
        trans=p.trans.tolist(),
        means=p.means.tolist(),
        covs=p.covs.tolist(),
        durations=p.durations.tolist(),
        d_max=p.d_max,
        events={
            event_id: [SegmentRecord(state=s.state, start=s.start, duration=s.duration) for s in seg.segments]
            for event_id, seg in truth.segmentations.items()
        },
    )
    Path(path).write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")


def checkpoint_record(result: FitResult, dataset: DriverDataset) -> CheckpointRecord:
    state = result.final
    if dataset.norm_mean is None or dataset.norm_std is None:
        raise ContractError("checkpoints require a normalized dataset")
    params = state.params
    conc = state.concentrations
    return CheckpointRecord(
        config=result.config,
        seed=result.config.seed,
        iteration=state.iteration,
        concentrations={"gamma": conc.gamma, "alpha": conc.alpha, "kappa": conc.kappa},
        beta=state.beta.tolist(),
        init=params.init.tolist(),
        trans=params.trans.tolist(),
        means=params.means.tolist(),
        covs=params.covs.tolist(),
        durations=params.durations.tolist() if isinstance(params, HsmmParams) else None,
        d_max=params.d_max if isinstance(params, HsmmParams) else result.config.d_max,
        normalization=NormalizationStats(mean=dataset.norm_mean.tolist(), std=dataset.norm_std.tolist()),
        prior=EmissionPriorRecord(
            mean0=state.prior.mean0.tolist(),
            kappa0=state.prior.kappa0,
            n0=state.prior.n0,
            S0=state.prior.S0.tolist(),
        ),
        occupied_states=result.occupied_states,
        loglik_trace=result.loglik_trace,
    )


def write_checkpoint(result: FitResult, dataset: DriverDataset, path: Path) -> CheckpointRecord:
    record = checkpoint_record(result, dataset)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(record.model_dump_json() + "\n", encoding="utf-8")
    logger.info(f"Wrote checkpoint to {path}")
    return record


# ============================================================================
# TRANSFORMS - Extraction and normalization
# ============================================================================


def extract_events(
    raw: pd.DataFrame, rules: ExtractionRules | None = None, prefix: str = "event"
) -> list[EventSeries]:
    """Cut a raw log into car-following events.

    A frame qualifies when a lead vehicle is present in the same lane, the
    range is below ``max_range_m``, subject speed exceeds ``min_speed_mps``
    and no cut-in is flagged. Maximal runs of qualifying frames without a
    timestamp gap wider than ``max_gap_frames`` frame periods become events
    when they last longer than ``min_duration_s``.
    """
    rules = rules or ExtractionRules()
    missing = [c for c in RAW_COLUMNS if c not in raw.columns]
    if missing:
        raise InputError(f"raw log is missing columns: {', '.join(missing)}")
    t = raw["t"].to_numpy(dtype=np.float64)
    if t.size and np.any(np.diff(t) <= 0):
        raise InputError("raw log timestamps must be strictly increasing")

    ok = (
        raw["lead_present"].astype(bool).to_numpy()
        & raw["same_lane"].astype(bool).to_numpy()
        & (raw["delta_d"].to_numpy(dtype=np.float64) < rules.max_range_m)
        & (raw["v1"].to_numpy(dtype=np.float64) > rules.min_speed_mps)
        & ~raw["cut_in"].astype(bool).to_numpy()
    )
    breaks = np.zeros(t.size, dtype=bool)
    if t.size > 1:
        breaks[1:] = np.diff(t) > rules.max_gap_frames / rules.rate_hz

    features = raw[FEATURE_COLUMNS].to_numpy(dtype=np.float64)
    events: list[EventSeries] = []
    start: int | None = None
    for i in range(t.size + 1):
        run_continues = i < t.size and ok[i] and not (breaks[i] and start is not None)
        if start is not None and not run_continues:
            n = i - start
            if n / rules.rate_hz > rules.min_duration_s:
                events.append(
                    EventSeries(
                        event_id=f"{prefix}_{len(events):04d}",
                        frames=features[start:i].copy(),
                        rate_hz=rules.rate_hz,
                        t0=float(t[start]),
                    )
                )
            start = None
        if i < t.size and ok[i] and start is None:
            start = i
    logger.info(f"Extracted {len(events)} car-following events from {t.size} frames")
    return events


def apply_normalization(dataset: DriverDataset, mean: FloatArray, std: FloatArray) -> DriverDataset:
    """Standardize every event with the given statistics."""
    if dataset.normalized:
        raise ContractError(f"dataset {dataset.driver_id} is already normalized")
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise InputError(f"normalization std must be positive, got {std.tolist()}")
    events = tuple(replace(e, frames=(e.frames - mean) / std) for e in dataset.events)
    return replace(dataset, events=events, norm_mean=mean, norm_std=std, normalized=True)


def normalize(dataset: DriverDataset) -> DriverDataset:
    """Standardize with the driver's pooled per-feature mean and std."""
    pooled = pooled_frames(dataset)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    if np.any(std == 0):
        zero = [FEATURE_COLUMNS[i] if i < len(FEATURE_COLUMNS) else str(i) for i in np.flatnonzero(std == 0)]
        raise InputError(f"zero pooled variance in {', '.join(zero)} for driver {dataset.driver_id}")
    return apply_normalization(dataset, mean, std)


def denormalize(dataset: DriverDataset) -> DriverDataset:
    """Map a normalized dataset back to physical units."""
    if not dataset.normalized or dataset.norm_mean is None or dataset.norm_std is None:
        raise ContractError(f"dataset {dataset.driver_id} is not normalized")
    mean, std = dataset.norm_mean, dataset.norm_std
    events = tuple(replace(e, frames=e.frames * std + mean) for e in dataset.events)
    return replace(dataset, events=events, normalized=False)


# ============================================================================
# SYNTHETIC DATA
# ============================================================================


def default_benchmark_params(spec: SyntheticBenchmark | None = None) -> HsmmParams:
    """Ground-truth HSMM of the synthetic benchmark.

    States sit at (+-s, +-s, 0) with unit covariance, share the duration rate
    and jump uniformly to any other state.
    """
    spec = spec or SyntheticBenchmark()
    L = spec.n_states
    corners = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
    means = np.zeros((L, 3))
    for i in range(L):
        sx, sy = corners[i % 4]
        # more than four states continue on a wider ring
        ring = 1 + i // 4
        means[i] = (ring * spec.separation * sx, ring * spec.separation * sy, 0.0)
    trans = np.zeros((L, L)) if L == 1 else (np.ones((L, L)) - np.eye(L)) / (L - 1)
    return HsmmParams(
        init=np.full(L, 1.0 / L),
        trans=trans,
        means=means,
        covs=np.tile(np.eye(3), (L, 1, 1)),
        durations=np.full(L, spec.duration_rate),
        d_max=spec.d_max,
    )


def generate_synthetic(
    params: HsmmParams,
    n_events: int,
    n_frames: int,
    seed: int,
    rate_hz: float = DEFAULT_RATE_HZ,
    driver_id: str = "synthetic",
) -> tuple[DriverDataset, SyntheticTruth]:
    """Sample events from the HSMM generative process and record the truth.

    Durations follow the truncated shifted-Poisson law; the last segment of
    each event is cut at ``n_frames``.
    """
    if n_events < 1 or n_frames < 1:
        raise InputError("synthetic data needs at least one event of one frame")
    rng = make_rng(seed)
    L = params.n_states
    dim = params.means.shape[1]
    chols = np.linalg.cholesky(params.covs)
    duration_p = np.exp(duration_logpmf(params.durations, params.d_max))

    events: list[EventSeries] = []
    truth: dict[str, Segmentation] = {}
    for e in range(n_events):
        event_id = f"event_{e:04d}"
        segments: list[Segment] = []
        t = 0
        state = int(rng.choice(L, p=params.init))
        while t < n_frames:
            if L == 1:
                duration = n_frames
            else:
                duration = int(rng.choice(params.d_max, p=duration_p[state])) + 1
            duration = min(duration, n_frames - t)
            segments.append(Segment(state, t, duration))
            t += duration
            if L > 1:
                state = int(rng.choice(L, p=params.trans[state]))

        segmentation = Segmentation(tuple(segments))
        labels = segmentation.states()
        noise = rng.standard_normal((n_frames, dim))
        frames = params.means[labels] + np.einsum("tij,tj->ti", chols[labels], noise)
        events.append(EventSeries(event_id=event_id, frames=frames, rate_hz=rate_hz))
        truth[event_id] = segmentation

    dataset = DriverDataset(driver_id=driver_id, events=tuple(events), rate_hz=rate_hz)
    logger.info(f"Generated {n_events} synthetic events of {n_frames} frames with {L} states")
    return dataset, SyntheticTruth(params=params, segmentations=truth, seed=seed)


def to_physical(dataset: DriverDataset, offset: Sequence[float], scale: Sequence[float]) -> DriverDataset:
    """Affine map of benchmark units onto car-following magnitudes."""
    off = np.asarray(offset, dtype=np.float64)
    sc = np.asarray(scale, dtype=np.float64)
    return replace(dataset, events=tuple(replace(e, frames=e.frames * sc + off) for e in dataset.events))


def write_segments(directory: Path, event: EventSeries, segmentation: Segmentation) -> Path:
    """Write ``event_id,seg_idx,state,start_s,duration_s`` rows for one event."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "event_id": event.event_id,
            "seg_idx": k,
            "state": s.state,
            "start_s": s.start / event.rate_hz,
            "duration_s": s.duration / event.rate_hz,
        }
        for k, s in enumerate(segmentation.segments)
    ]
    path = out / f"{event.event_id}.csv"
    pd.DataFrame(rows, columns=["event_id", "seg_idx", "state", "start_s", "duration_s"]).to_csv(
        path, index=False, lineterminator="\n"
    )
    return path


def load_segments(path: Path, rate_hz: float) -> tuple[str, Segmentation]:
    """Read one segments CSV back into frame units."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise EventFileError(str(path), f"malformed segments file: {e}") from e
    expected = ["event_id", "seg_idx", "state", "start_s", "duration_s"]
    if list(df.columns) != expected or df.empty:
        raise EventFileError(str(path), f"expected header {','.join(expected)}", line=1)
    segments = tuple(
        Segment(int(row.state), round(row.start_s * rate_hz), round(row.duration_s * rate_hz))  # type: ignore[arg-type]
        for row in df.itertuples(index=False)
    )
    try:
        return str(df["event_id"].iloc[0]), Segmentation(segments)
    except ParameterDomainError as e:
        raise EventFileError(str(path), str(e)) from e


def dumps_json(payload: dict[str, object]) -> str:
    """Compact, key-sorted JSON line for machine-readable summaries."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))
