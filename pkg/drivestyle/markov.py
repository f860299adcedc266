"""Weak-limit HMM and explicit-duration HSMM: messages, samplers and MAP decoding.

All recursions run in log space. Observation log-likelihoods are a T x L
matrix; HSMM segment scores use cumulative sums of that matrix so a segment
score is a single subtraction.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from scipy import linalg, stats
from scipy.special import logsumexp

from drivestyle.distributions import FloatArray, IntArray, RngStream, sample_categorical
from drivestyle.errors import EmissionError, ParameterDomainError

logger = logging.getLogger(__name__)

BoolArray = npt.NDArray[np.bool_]

LOG_2PI = float(np.log(2.0 * np.pi))
ROW_TOLERANCE = 1e-10


def _log(x: FloatArray) -> FloatArray:
    with np.errstate(divide="ignore"):
        return np.log(x)


# ============================================================================
# PARAMETER AND SEGMENTATION TYPES
# ============================================================================


def _check_simplex_rows(matrix: FloatArray, what: str) -> None:
    if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=-1), 1.0, atol=ROW_TOLERANCE, rtol=0.0):
        raise ParameterDomainError(f"{what} must be nonnegative and sum to 1")


@dataclass(frozen=True)
class HmmParams:
    """Finite HMM: initial distribution, transition matrix and Gaussian emissions."""

    init: FloatArray
    trans: FloatArray
    means: FloatArray
    covs: FloatArray

    def __post_init__(self):
        n = self.init.shape[0]
        if self.trans.shape != (n, n) or self.means.shape[0] != n or self.covs.shape[0] != n:
            raise ParameterDomainError("inconsistent HMM parameter shapes")
        _check_simplex_rows(self.init, "init")
        _check_simplex_rows(self.trans, "transition rows")

    @property
    def n_states(self) -> int:
        return int(self.init.shape[0])


@dataclass(frozen=True)
class HsmmParams:
    """Explicit-duration HSMM with zero-diagonal transitions and shifted-Poisson durations."""

    init: FloatArray
    trans: FloatArray
    means: FloatArray
    covs: FloatArray
    durations: FloatArray
    d_max: int

    def __post_init__(self):
        n = self.init.shape[0]
        if (
            self.trans.shape != (n, n)
            or self.means.shape[0] != n
            or self.covs.shape[0] != n
            or self.durations.shape != (n,)
        ):
            raise ParameterDomainError("inconsistent HSMM parameter shapes")
        if self.d_max < 1:
            raise ParameterDomainError(f"d_max must be >= 1, got {self.d_max}")
        if np.any(np.diag(self.trans) != 0.0):
            raise ParameterDomainError("HSMM transition diagonal must be exactly zero")
        if np.any(self.durations <= 0):
            raise ParameterDomainError("duration rates must be positive")
        _check_simplex_rows(self.init, "init")
        # a single state never transitions, so its all-zero row is allowed
        if n > 1:
            _check_simplex_rows(self.trans, "transition rows")

    @property
    def n_states(self) -> int:
        return int(self.init.shape[0])


class Segment(NamedTuple):
    state: int
    start: int
    duration: int

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass(frozen=True)
class Segmentation:
    """Ordered segments tiling [0, n_frames)."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        position = 0
        for seg in self.segments:
            if seg.start != position or seg.duration < 1:
                raise ParameterDomainError(f"segments must tile the event, broken at frame {position}")
            position = seg.end

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def complete_segments(self) -> tuple[Segment, ...]:
        """All segments except the final, right-censored one."""
        return self.segments[:-1]

    def states(self) -> IntArray:
        """Frame-level state sequence."""
        return np.repeat(
            np.array([s.state for s in self.segments], dtype=np.int64),
            np.array([s.duration for s in self.segments], dtype=np.int64),
        )

    @classmethod
    def from_states(cls, states: Sequence[int] | IntArray) -> "Segmentation":
        """Run-length encode a frame-level state sequence."""
        x = np.asarray(states, dtype=np.int64)
        if x.size == 0:
            return cls(())
        starts = np.concatenate([[0], np.flatnonzero(np.diff(x)) + 1])
        ends = np.concatenate([starts[1:], [x.size]])
        return cls(tuple(Segment(int(x[s]), int(s), int(e - s)) for s, e in zip(starts, ends, strict=True)))


# ============================================================================
# EMISSIONS AND DURATIONS
# ============================================================================


def emission_loglik(params: HmmParams | HsmmParams, frames: FloatArray) -> FloatArray:
    """T x L matrix of Gaussian log densities of each frame under each state."""
    y = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    dim = params.means.shape[1]
    if y.shape[1] != dim:
        raise ParameterDomainError(f"frames have {y.shape[1]} features, emissions expect {dim}")

    out = np.empty((y.shape[0], params.n_states))
    for i in range(params.n_states):
        try:
            chol = np.linalg.cholesky(params.covs[i])
        except np.linalg.LinAlgError as e:
            raise EmissionError(i, f"covariance is singular or indefinite ({e})") from e
        solved = linalg.solve_triangular(chol, (y - params.means[i]).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, i] = -0.5 * (dim * LOG_2PI + logdet + np.sum(solved**2, axis=0))
        if not np.all(np.isfinite(out[:, i])):
            raise EmissionError(i, "log density is not finite")
    return out


def duration_logpmf(rates: FloatArray, d_max: int) -> FloatArray:
    """L x d_max log pmf of 1 + Poisson(rate), renormalized on [1, d_max]."""
    d = np.arange(d_max)
    raw = stats.poisson.logpmf(d[None, :], np.asarray(rates, dtype=np.float64)[:, None])
    return raw - logsumexp(raw, axis=1, keepdims=True)


def duration_logsf(logpmf: FloatArray) -> FloatArray:
    """log P(D >= d) for d = 1..d_max under the truncated law."""
    return np.logaddexp.accumulate(logpmf[:, ::-1], axis=1)[:, ::-1]


def geometric_logpmf(self_prob: FloatArray, durations: IntArray) -> FloatArray:
    """Log pmf of run lengths implied by self-transition probabilities."""
    p = np.clip(self_prob, 1e-12, 1.0 - 1e-12)
    return (durations - 1) * np.log(p) + np.log1p(-p)


# ============================================================================
# HMM
# ============================================================================


@dataclass(frozen=True)
class HmmMessages:
    log_alpha: FloatArray
    log_beta: FloatArray
    log_evidence: float


def hmm_forward_backward(obs: FloatArray, params: HmmParams) -> tuple[HmmMessages, float]:
    """Log-space forward and backward messages and the log evidence."""
    T, L = obs.shape
    log_a = _log(params.trans)
    log_alpha = np.empty((T, L))
    log_beta = np.zeros((T, L))

    log_alpha[0] = _log(params.init) + obs[0]
    for t in range(1, T):
        log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + log_a, axis=0) + obs[t]
    for t in range(T - 2, -1, -1):
        log_beta[t] = logsumexp(log_a + (obs[t + 1] + log_beta[t + 1])[None, :], axis=1)

    log_evidence = float(logsumexp(log_alpha[-1]))
    return HmmMessages(log_alpha, log_beta, log_evidence), log_evidence


def hmm_sample_states(obs: FloatArray, params: HmmParams, rng: RngStream) -> Segmentation:
    """Exact posterior draw of the state path by backward sampling."""
    messages, _ = hmm_forward_backward(obs, params)
    return _hmm_draw(messages, params, rng)


def _hmm_viterbi(obs: FloatArray, params: HmmParams) -> Segmentation:
    T, L = obs.shape
    log_a = _log(params.trans)
    delta = _log(params.init) + obs[0]
    backpointers = np.empty((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_a
        # argmax keeps the first maximum: ties go to the lower state index
        backpointers[t] = np.argmax(scores, axis=0)
        delta = scores[backpointers[t], np.arange(L)] + obs[t]

    states = np.empty(T, dtype=np.int64)
    states[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        states[t - 1] = backpointers[t, states[t]]
    return Segmentation.from_states(states)


# ============================================================================
# HSMM
# ============================================================================


@dataclass(frozen=True)
class HsmmMessages:
    """Backward messages at segment boundaries.

    log_beta[t, i]: log p(y[t:] | a segment of state i ended at t)
    log_betastar[t, j]: log p(y[t:] | a segment of state j starts at t)
    """

    log_beta: FloatArray
    log_betastar: FloatArray
    cumulative: FloatArray
    logpmf: FloatArray
    logsf: FloatArray
    absorbing: BoolArray
    log_evidence: float


def _absorbing_states(trans: FloatArray) -> BoolArray:
    """States whose transition row is all zero (a single-state model)."""
    return ~np.any(trans > 0, axis=1)


def _segment_scores(messages: HsmmMessages, t: int, d_max: int) -> tuple[FloatArray, IntArray]:
    """Scores of a segment starting at t, one row per candidate duration.

    Durations run 1..min(d_max, T - t). An absorbing state cannot hand the
    tail to anyone, so when more than d_max frames remain it also gets one
    final segment covering all of them, censored at d_max.
    """
    T = messages.cumulative.shape[0] - 1
    horizon = min(d_max, T - t)
    ends = t + np.arange(1, horizon + 1)
    scores = messages.cumulative[ends] - messages.cumulative[t]
    tail = messages.logpmf[:, :horizon].T.copy()
    inner = ends < T
    tail[inner] += messages.log_beta[ends[inner]]
    if not inner[-1]:
        tail[-1] = messages.logsf[:, horizon - 1]
    durations = np.arange(1, horizon + 1)
    if T - t > d_max and messages.absorbing.any():
        overlong = messages.cumulative[T] - messages.cumulative[t]
        overlong = np.where(messages.absorbing, overlong + messages.logsf[:, d_max - 1], -np.inf)
        return np.vstack([scores + tail, overlong]), np.append(durations, T - t)
    return scores + tail, durations


def hsmm_messages(obs: FloatArray, params: HsmmParams) -> tuple[HsmmMessages, float]:
    """Backward messages with durations truncated at d_max.

    The final segment is right-censored and scored with the truncated
    survival function, so with d_max = 1 the evidence equals the HMM evidence
    under the zero-diagonal transition matrix.
    A single-state model covers the whole event with one segment even when
    it is longer than d_max.
    """
    T, L = obs.shape
    logpmf = duration_logpmf(params.durations, params.d_max)
    logsf = duration_logsf(logpmf)
    cumulative = np.vstack([np.zeros((1, L)), np.cumsum(obs, axis=0)])
    log_trans = _log(params.trans)

    messages = HsmmMessages(
        log_beta=np.full((T + 1, L), -np.inf),
        log_betastar=np.full((T, L), -np.inf),
        cumulative=cumulative,
        logpmf=logpmf,
        logsf=logsf,
        absorbing=_absorbing_states(params.trans),
        log_evidence=-np.inf,
    )
    for t in range(T - 1, -1, -1):
        messages.log_betastar[t] = logsumexp(_segment_scores(messages, t, params.d_max)[0], axis=0)
        messages.log_beta[t] = logsumexp(log_trans + messages.log_betastar[t][None, :], axis=1)

    log_evidence = float(logsumexp(_log(params.init) + messages.log_betastar[0]))
    if not np.isfinite(log_evidence):
        raise ParameterDomainError(
            f"no segmentation of {T} frames has positive probability with {L} state(s) and d_max={params.d_max}"
        )
    messages = replace(messages, log_evidence=log_evidence)
    return messages, log_evidence


def hsmm_sample_states(obs: FloatArray, params: HsmmParams, rng: RngStream) -> Segmentation:
    """Exact posterior draw of segment states and durations, sampled forward."""
    messages, _ = hsmm_messages(obs, params)
    return _hsmm_draw(messages, params, rng, obs.shape[0])


def _hsmm_viterbi(obs: FloatArray, params: HsmmParams) -> Segmentation:
    T, L = obs.shape
    logpmf = duration_logpmf(params.durations, params.d_max)
    logsf = duration_logsf(logpmf)
    cumulative = np.vstack([np.zeros((1, L)), np.cumsum(obs, axis=0)])
    log_trans = _log(params.trans)

    # Max-product analogue of hsmm_messages
    best = HsmmMessages(
        log_beta=np.full((T + 1, L), -np.inf),
        log_betastar=np.full((T, L), -np.inf),
        cumulative=cumulative,
        logpmf=logpmf,
        logsf=logsf,
        absorbing=_absorbing_states(params.trans),
        log_evidence=-np.inf,
    )
    best_duration = np.zeros((T, L), dtype=np.int64)
    best_next = np.zeros((T + 1, L), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        scores, durations = _segment_scores(best, t, params.d_max)
        # first maximum along durations: ties go to the shorter segment
        best_duration[t] = durations[np.argmax(scores, axis=0)]
        best.log_betastar[t] = np.max(scores, axis=0)
        candidates = log_trans + best.log_betastar[t][None, :]
        best_next[t] = np.argmax(candidates, axis=1)
        best.log_beta[t] = np.max(candidates, axis=1)

    segments: list[Segment] = []
    state = int(np.argmax(_log(params.init) + best.log_betastar[0]))
    t = 0
    while t < T:
        duration = int(best_duration[t, state])
        segments.append(Segment(state, t, duration))
        t += duration
        if t < T:
            state = int(best_next[t, state])
    return Segmentation(tuple(segments))


def map_segmentation(obs: FloatArray, params: HmmParams | HsmmParams) -> Segmentation:
    """Maximizing state path (HMM) or maximizing segmentation (HSMM)."""
    if isinstance(params, HsmmParams):
        return _hsmm_viterbi(obs, params)
    return _hmm_viterbi(obs, params)


def log_evidence(obs: FloatArray, params: HmmParams | HsmmParams) -> float:
    """log p(y | params) with states marginalized."""
    if isinstance(params, HsmmParams):
        return hsmm_messages(obs, params)[1]
    return hmm_forward_backward(obs, params)[1]


def sample_states(obs: FloatArray, params: HmmParams | HsmmParams, rng: RngStream) -> tuple[Segmentation, float]:
    """Posterior draw plus the log evidence computed on the way."""
    if isinstance(params, HsmmParams):
        messages, evidence = hsmm_messages(obs, params)
        return _hsmm_draw(messages, params, rng, obs.shape[0]), evidence
    messages, evidence = hmm_forward_backward(obs, params)
    return _hmm_draw(messages, params, rng), evidence


def _hmm_draw(messages: HmmMessages, params: HmmParams, rng: RngStream) -> Segmentation:
    log_a = _log(params.trans)
    T = messages.log_alpha.shape[0]
    states = np.empty(T, dtype=np.int64)
    states[-1] = sample_categorical(messages.log_alpha[-1], rng)
    for t in range(T - 2, -1, -1):
        states[t] = sample_categorical(messages.log_alpha[t] + log_a[:, states[t + 1]], rng)
    return Segmentation.from_states(states)


def _hsmm_draw(messages: HsmmMessages, params: HsmmParams, rng: RngStream, T: int) -> Segmentation:
    log_trans = _log(params.trans)
    log_init = _log(params.init)
    segments: list[Segment] = []
    t = 0
    while t < T:
        prior = log_init if not segments else log_trans[segments[-1].state]
        state = sample_categorical(prior + messages.log_betastar[t], rng)
        scores, durations = _segment_scores(messages, t, params.d_max)
        duration = int(durations[sample_categorical(scores[:, state], rng)])
        segments.append(Segment(state, t, duration))
        t += duration
    return Segmentation(tuple(segments))
