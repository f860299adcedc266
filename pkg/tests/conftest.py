"""Shared fixtures and brute-force oracles for the segmentation tests."""

import itertools
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp

from drivestyle.config import SyntheticBenchmark
from drivestyle.dataio import DriverDataset, EventSeries, default_benchmark_params, generate_synthetic
from drivestyle.distributions import make_rng
from drivestyle.markov import HmmParams, HsmmParams, Segment, duration_logpmf, duration_logsf


def random_stochastic(rng: np.random.Generator, n: int, zero_diagonal: bool = False) -> np.ndarray:
    m = rng.random((n, n)) + 0.1
    if zero_diagonal:
        np.fill_diagonal(m, 0.0)
    return m / m.sum(axis=1, keepdims=True)


def random_hmm(rng: np.random.Generator, n_states: int = 3, dim: int = 2) -> HmmParams:
    init = rng.random(n_states) + 0.1
    return HmmParams(
        init=init / init.sum(),
        trans=random_stochastic(rng, n_states),
        means=rng.normal(size=(n_states, dim)),
        covs=np.tile(np.eye(dim), (n_states, 1, 1)),
    )


def random_hsmm(rng: np.random.Generator, n_states: int = 3, dim: int = 2, d_max: int = 4) -> HsmmParams:
    init = rng.random(n_states) + 0.1
    return HsmmParams(
        init=init / init.sum(),
        trans=random_stochastic(rng, n_states, zero_diagonal=True),
        means=rng.normal(size=(n_states, dim)),
        covs=np.tile(np.eye(dim), (n_states, 1, 1)),
        durations=rng.uniform(0.5, 3.0, size=n_states),
        d_max=d_max,
    )


def hmm_path_scores(obs: np.ndarray, params: HmmParams) -> dict[tuple[int, ...], float]:
    """Joint log probability of every state path."""
    T, L = obs.shape
    with np.errstate(divide="ignore"):
        log_init = np.log(params.init)
        log_trans = np.log(params.trans)
    scores = {}
    for path in itertools.product(range(L), repeat=T):
        score = log_init[path[0]] + obs[0, path[0]]
        for t in range(1, T):
            score += log_trans[path[t - 1], path[t]] + obs[t, path[t]]
        scores[path] = float(score)
    return scores


def _compositions(T: int, d_max: int):
    if T == 0:
        yield ()
        return
    for d in range(1, min(d_max, T) + 1):
        for rest in _compositions(T - d, d_max):
            yield (d, *rest)


def hsmm_segmentation_scores(obs: np.ndarray, params: HsmmParams) -> dict[tuple[Segment, ...], float]:
    """Joint log probability of every segmentation; the last segment is censored."""
    T, L = obs.shape
    logpmf = duration_logpmf(params.durations, params.d_max)
    logsf = duration_logsf(logpmf)
    with np.errstate(divide="ignore"):
        log_init = np.log(params.init)
        log_trans = np.log(params.trans)
    scores = {}
    for durations in _compositions(T, params.d_max):
        for states in itertools.product(range(L), repeat=len(durations)):
            score = log_init[states[0]]
            segments = []
            start = 0
            for k, (s, d) in enumerate(zip(states, durations, strict=True)):
                if k > 0:
                    score += log_trans[states[k - 1], s]
                score += obs[start : start + d, s].sum()
                score += logsf[s, d - 1] if k == len(durations) - 1 else logpmf[s, d - 1]
                segments.append(Segment(s, start, d))
                start += d
            if np.isfinite(score):
                scores[tuple(segments)] = float(score)
    return scores


def oracle_evidence(scores: dict) -> float:
    return float(logsumexp(list(scores.values())))


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_dataset():
    """Three short events of one driver in benchmark units."""
    gen = make_rng(7)
    events = tuple(
        EventSeries(event_id=f"event_{i:04d}", frames=gen.normal(size=(12 + i, 3)), rate_hz=10.0) for i in range(3)
    )
    return DriverDataset(driver_id="d1", events=events, rate_hz=10.0)


def make_dataset(n_events: int, n_frames: int = 8, seed: int = 0, driver_id: str = "d1") -> DriverDataset:
    gen = make_rng(seed)
    events = tuple(
        EventSeries(event_id=f"event_{i:04d}", frames=gen.normal(size=(n_frames, 3)), rate_hz=10.0)
        for i in range(n_events)
    )
    return DriverDataset(driver_id=driver_id, events=events, rate_hz=10.0)


def contaminated_benchmark(
    seed: int, n_events: int, n_frames: int, share: float = 0.03
) -> tuple[DriverDataset, HsmmParams]:
    """Benchmark events where a ``share`` of frames come from another state's emission.

    The swapped frames sit far from their segment's mean, which a geometric
    duration model pays for with one-frame segments.
    """
    spec = SyntheticBenchmark(n_events=n_events, n_frames=n_frames, d_max=150)
    params = default_benchmark_params(spec)
    dataset, truth = generate_synthetic(params, n_events, n_frames, seed=seed)
    gen = make_rng(seed, 1)
    L = params.n_states
    events = []
    for event in dataset.events:
        labels = truth.segmentations[event.event_id].states()
        frames = event.frames.copy()
        for t in np.flatnonzero(gen.random(n_frames) < share):
            other = (labels[t] + gen.integers(1, L)) % L
            frames[t] = params.means[other] + gen.standard_normal(frames.shape[1])
        events.append(replace(event, frames=frames))
    return replace(dataset, events=tuple(events)), params
