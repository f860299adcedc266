"""Cross-validated comparison of the three segmentation models.

Every (fold, model kind) cell is an independent job with its own random
stream derived from (seed, fold, kind), so results do not depend on how the
jobs are scheduled.
"""

import asyncio
import hashlib
import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import linear_sum_assignment
from tqdm.asyncio import tqdm

from drivestyle.dataio import DriverDataset, apply_normalization, denormalize, normalize
from drivestyle.distributions import FloatArray, RngStream, make_rng
from drivestyle.errors import ContractError, DriveStyleError, InputError
from drivestyle.inference import FitResult, fit
from drivestyle.markov import (
    HmmParams,
    HsmmParams,
    Segmentation,
    duration_logpmf,
    emission_loglik,
    geometric_logpmf,
    map_segmentation,
    sample_states,
)
from drivestyle.models import ComparisonReport, FoldPlan, InferenceConfig, ModelKind, ModelSummary
from drivestyle.styles import summarize_durations

logger = logging.getLogger(__name__)

SHORT_SEGMENT_S = 1.0
KIND_ORDER = (ModelKind.HDP_HMM, ModelKind.STICKY_HDP_HMM, ModelKind.HDP_HSMM)

Predictive = Literal["map", "sampled"]


def kfold_split(dataset: DriverDataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded random partition of the events into k folds of near-equal size."""
    ids = [e.event_id for e in dataset.events]
    if k < 2:
        raise InputError(f"k must be at least 2, got {k}")
    if len(ids) < k:
        raise InputError(f"cannot split {len(ids)} events into {k} folds")
    order = make_rng(seed).permutation(len(ids))
    folds = np.empty(len(ids), dtype=np.int64)
    folds[order] = np.arange(len(ids)) % k
    return FoldPlan(k=k, assignment={event_id: int(f) for event_id, f in zip(ids, folds, strict=True)}, seed=seed)


def training_checksum(dataset: DriverDataset) -> str:
    """sha256 over the event ids and raw frame bytes of a dataset."""
    digest = hashlib.sha256()
    for event in dataset.events:
        digest.update(event.event_id.encode("utf-8"))
        digest.update(np.ascontiguousarray(event.frames, dtype=np.float64).tobytes())
    return digest.hexdigest()


def _params_of(model: FitResult | HmmParams | HsmmParams) -> HmmParams | HsmmParams:
    return model.final.params if isinstance(model, FitResult) else model


def _segment_logliks(params: HmmParams | HsmmParams, segmentation: Segmentation, final: bool) -> FloatArray:
    segments = segmentation.segments if final else segmentation.complete_segments
    if not segments:
        return np.zeros(0)
    states = np.array([s.state for s in segments])
    durations = np.array([s.duration for s in segments])
    if isinstance(params, HsmmParams):
        # a single state's final segment can run past d_max
        return duration_logpmf(params.durations, params.d_max)[states, np.minimum(durations, params.d_max) - 1]
    return geometric_logpmf(np.diag(params.trans)[states], durations)


def predictive_duration_loglik(
    model: FitResult | HmmParams | HsmmParams,
    test: Sequence[FloatArray],
    score_final_segment: bool = False,
    rng: RngStream | None = None,
) -> float:
    """Duration log-likelihood of the decoded test segments per test frame.

    Each test event is decoded with the MAP segmentation, or with one
    posterior draw when ``rng`` is given. HSMM kinds score segment lengths
    with the state's duration pmf; HMM kinds use the geometric law with
    success probability 1 - pi_ii. The final, right-censored segment is only
    scored when ``score_final_segment`` is set.
    """
    if not test:
        raise InputError("predictive log-likelihood needs at least one test event")
    params = _params_of(model)
    total = 0.0
    n_frames = 0
    for frames in test:
        obs = emission_loglik(params, frames)
        segmentation = map_segmentation(obs, params) if rng is None else sample_states(obs, params, rng)[0]
        total += float(_segment_logliks(params, segmentation, score_final_segment).sum())
        n_frames += obs.shape[0]
    return total / n_frames


def frame_accuracy(truth: Sequence[Segmentation], inferred: Sequence[Segmentation]) -> float:
    """Share of frames labeled correctly after the best one-to-one state matching."""
    if len(truth) != len(inferred):
        raise InputError(f"{len(truth)} true segmentations but {len(inferred)} inferred")
    if not truth:
        raise InputError("frame accuracy needs at least one event")
    for a, b in zip(truth, inferred, strict=True):
        if a.n_frames != b.n_frames:
            raise InputError(f"segmentations cover {a.n_frames} and {b.n_frames} frames")
    y_true = np.concatenate([s.states() for s in truth])
    y_pred = np.concatenate([s.states() for s in inferred])
    confusion = np.zeros((int(y_true.max()) + 1, int(y_pred.max()) + 1))
    np.add.at(confusion, (y_true, y_pred), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / y_true.size)


def segment_durations_s(segmentations: Sequence[Segmentation], rate_hz: float) -> list[float]:
    return [seg.duration / rate_hz for segmentation in segmentations for seg in segmentation.segments]


def short_segment_fraction(
    segmentations: Sequence[Segmentation], rate_hz: float, threshold_s: float = SHORT_SEGMENT_S
) -> float:
    """Fraction of segments lasting less than ``threshold_s`` seconds."""
    durations = segment_durations_s(segmentations, rate_hz)
    if not durations:
        raise InputError("no segments to measure")
    return float(np.mean(np.asarray(durations) < threshold_s))


# ============================================================================
# CROSS-VALIDATION CELLS
# ============================================================================


@dataclass(frozen=True)
class CellJob:
    fold: int
    kind: ModelKind
    config: InferenceConfig
    train: DriverDataset
    test: DriverDataset
    seed: int
    predictive: Predictive = "map"


@dataclass(frozen=True)
class CellResult:
    fold: int
    kind: ModelKind
    checksum: str
    training_loglik: float | None = None
    predictive_loglik: float | None = None
    durations_s: list[float] = field(default_factory=list)
    error: str | None = None


def _run_cell(job: CellJob) -> CellResult:
    """Fit on the training folds and score the held-out fold.

    Normalization statistics come from the training events only.
    """
    checksum = training_checksum(job.train)
    try:
        train = normalize(job.train)
        if train.norm_mean is None or train.norm_std is None:
            raise ContractError(f"fold {job.fold} training data lost its normalization statistics")
        test = apply_normalization(job.test, train.norm_mean, train.norm_std)
        rng = make_rng(job.seed, job.fold, KIND_ORDER.index(job.kind))
        result = fit(job.config, train.frames(), rng)
        score_rng = rng.spawn(1)[0] if job.predictive == "sampled" else None
        predictive = predictive_duration_loglik(result, test.frames(), rng=score_rng)
        params = result.final.params
        decoded = [map_segmentation(emission_loglik(params, frames), params) for frames in test.frames()]
        return CellResult(
            fold=job.fold,
            kind=job.kind,
            checksum=checksum,
            training_loglik=result.loglik_trace[-1],
            predictive_loglik=predictive,
            durations_s=segment_durations_s(decoded, job.test.rate_hz),
        )
    except (DriveStyleError, ValueError, ArithmeticError) as e:
        logger.warning(f"Fold {job.fold} {job.kind} failed: {e}")
        return CellResult(fold=job.fold, kind=job.kind, checksum=checksum, error=f"{type(e).__name__}: {e}")


def build_jobs(
    dataset: DriverDataset,
    configs: Mapping[ModelKind, InferenceConfig],
    plan: FoldPlan,
    seed: int,
    predictive: Predictive = "map",
) -> list[CellJob]:
    """One job per (fold, kind), folds outermost."""
    jobs: list[CellJob] = []
    for fold in range(plan.k):
        held_out = set(plan.fold(fold))
        train_ids = [e.event_id for e in dataset.events if e.event_id not in held_out]
        train = dataset.subset(train_ids)
        test = dataset.subset(sorted(held_out))
        for kind in KIND_ORDER:
            if kind in configs:
                jobs.append(CellJob(fold, kind, configs[kind], train, test, seed, predictive))
    return jobs


def _mean_std(values: Sequence[float | None]) -> tuple[float | None, float | None]:
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if present.size == 0:
        return None, None
    return float(present.mean()), float(present.std())


def aggregate(results: Sequence[CellResult], plan: FoldPlan, seed: int, n_iters: int, predictive: Predictive):
    """Collect cell results into a ComparisonReport."""
    checksums: dict[int, str] = {}
    for r in results:
        if checksums.setdefault(r.fold, r.checksum) != r.checksum:
            raise ContractError(f"fold {r.fold} cells saw different training data")

    summaries: list[ModelSummary] = []
    for kind in KIND_ORDER:
        cells = sorted((r for r in results if r.kind is kind), key=lambda r: r.fold)
        if not cells:
            continue
        training = [r.training_loglik for r in cells]
        scores = [r.predictive_loglik for r in cells]
        train_mean, train_std = _mean_std(training)
        pred_mean, pred_std = _mean_std(scores)
        durations = [d for r in cells for d in r.durations_s]
        stats = summarize_durations(durations) if durations else None
        summaries.append(
            ModelSummary(
                kind=kind,
                training_loglik=training,
                predictive_loglik=scores,
                errors=[r.error for r in cells],
                training_mean=train_mean,
                training_std=train_std,
                predictive_mean=pred_mean,
                predictive_std=pred_std,
                short_segment_fraction=stats.short_fraction if stats else None,
                mean_duration_s=stats.mean_s if stats else None,
                duration_histogram=list(stats.fractions) if stats else [],
            )
        )
    return ComparisonReport(
        k=plan.k,
        seed=seed,
        n_iters=n_iters,
        predictive=predictive,
        training_checksums=[checksums[f] for f in sorted(checksums)],
        models=summaries,
    )


async def compare_models_async(
    dataset: DriverDataset,
    configs: Mapping[ModelKind, InferenceConfig],
    k: int = 10,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 4,
    predictive: Predictive = "map",
    progress: bool = False,
) -> ComparisonReport:
    """Run every (fold, kind) cell and aggregate.

    With ``threads`` > 1 cells run in a process pool, ``batch_size`` at a
    time; otherwise they run inline.
    """
    if not configs:
        raise InputError("no model configurations to compare")
    physical = denormalize(dataset) if dataset.normalized else dataset
    plan = kfold_split(physical, k, seed)
    jobs = build_jobs(physical, configs, plan, seed, predictive)
    logger.info(f"Comparing {len(configs)} models over {k} folds ({len(jobs)} cells, {threads} workers)")

    results: list[CellResult] = []
    with tqdm(total=len(jobs), desc="Cross-validating", unit="cell", disable=not progress) as pbar:
        if threads <= 1:
            for job in jobs:
                results.append(_run_cell(job))
                pbar.update(1)
        else:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=threads) as pool:
                step = max(batch_size, threads)
                for i in range(0, len(jobs), step):
                    batch = jobs[i : i + step]
                    outcomes = await asyncio.gather(
                        *(loop.run_in_executor(pool, _run_cell, job) for job in batch), return_exceptions=True
                    )
                    for job, outcome in zip(batch, outcomes, strict=True):
                        if isinstance(outcome, BaseException):
                            logger.error(f"Fold {job.fold} {job.kind} crashed: {outcome}")
                            outcome = CellResult(
                                fold=job.fold,
                                kind=job.kind,
                                checksum=training_checksum(job.train),
                                error=f"{type(outcome).__name__}: {outcome}",
                            )
                        results.append(outcome)
                        pbar.update(1)

    failed = sum(r.error is not None for r in results)
    if failed:
        logger.warning(f"{failed} of {len(results)} cells failed")
    n_iters = max(c.n_iters for c in configs.values())
    return aggregate(results, plan, seed, n_iters, predictive)


def compare_models(
    dataset: DriverDataset,
    configs: Mapping[ModelKind, InferenceConfig],
    k: int = 10,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 4,
    predictive: Predictive = "map",
    progress: bool = False,
) -> ComparisonReport:
    return asyncio.run(
        compare_models_async(dataset, configs, k, seed, threads, batch_size, predictive, progress)
    )
