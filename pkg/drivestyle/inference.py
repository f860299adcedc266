"""Weak-limit Gibbs samplers for the HDP-HMM, sticky HDP-HMM and HDP-HSMM.

A sweep resamples, in order: state sequences, transition rows, global
weights, emissions, durations (HSMM only) and concentrations. The global
weight and concentration steps end with a fresh draw of the transition rows.
Every step returns a new ModelState; nothing is mutated in place.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from tqdm import tqdm

from drivestyle.distributions import (
    FloatArray,
    IntArray,
    NIWPrior,
    RngStream,
    niw_posterior,
    sample_dirichlet,
    sample_gaussian_params,
    sample_gem,
)
from drivestyle.errors import ContractError, DriveStyleError, InputError, SamplerError
from drivestyle.markov import HmmParams, HsmmParams, Segmentation, emission_loglik, log_evidence, sample_states
from drivestyle.models import InferenceConfig, ModelKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Concentrations:
    gamma: float
    alpha: float
    kappa: float = 0.0

    @property
    def rho(self) -> float:
        """Share of the row prior mass placed on the self-transition."""
        total = self.alpha + self.kappa
        return self.kappa / total if total > 0 else 0.0


@dataclass(frozen=True)
class TableCounts:
    """Auxiliary restaurant-franchise counts from the last global-weight update.

    Row 0..L-1 are the transition restaurants, row L is the initial-state one.
    """

    customers: FloatArray
    tables: FloatArray
    overrides: FloatArray


@dataclass(frozen=True)
class ModelState:
    """Full latent state of one chain."""

    config: InferenceConfig
    beta: FloatArray
    concentrations: Concentrations
    params: HmmParams | HsmmParams
    prior: NIWPrior
    assignments: tuple[Segmentation, ...]
    iteration: int = 0
    tables: TableCounts | None = None
    data_loglik: float | None = None

    @property
    def kind(self) -> ModelKind:
        return self.config.model_kind

    @property
    def n_states(self) -> int:
        return int(self.beta.shape[0])


@dataclass(frozen=True)
class FitResult:
    """Outcome of one chain.

    ``loglik_trace[k]`` is the training log-likelihood after sweep k; sweeps
    before ``burn_in`` are kept in the trace but excluded from
    ``post_burn_in_trace``. ``final`` is the state after the last sweep.
    """

    final: ModelState
    loglik_trace: list[float]
    occupied_states: list[int]
    config: InferenceConfig
    burn_in: int = 0

    @property
    def post_burn_in_trace(self) -> list[float]:
        return self.loglik_trace[self.burn_in :]


def _check_data(data: Sequence[FloatArray]) -> int:
    if not data:
        raise InputError("cannot fit a model to an empty dataset")
    dims = {np.asarray(frames).shape[1] for frames in data}
    if len(dims) != 1:
        raise InputError(f"all events must share one feature dimension, got {sorted(dims)}")
    if any(np.asarray(frames).shape[0] < 1 for frames in data):
        raise InputError("every event needs at least one frame")
    return dims.pop()


def _prior_mean(prior: tuple[float, float]) -> float:
    shape, rate = prior
    return shape / rate


def _with_transitions(
    state_params: HmmParams | HsmmParams, init: FloatArray, trans: FloatArray
) -> HmmParams | HsmmParams:
    return replace(state_params, init=init, trans=trans)


def _sample_rows(
    kind: ModelKind, beta: FloatArray, conc: Concentrations, counts: FloatArray, rng: RngStream
) -> FloatArray:
    L = beta.shape[0]
    trans = np.empty((L, L))
    for i in range(L):
        weights = conc.alpha * beta + counts[i]
        if kind.is_sticky:
            weights[i] += conc.kappa
        if kind.is_semi_markov:
            weights[i] = 0.0
            if L == 1:
                trans[i] = 0.0
                continue
            if not np.any(weights > 0):
                weights = np.ones(L)
                weights[i] = 0.0
        trans[i] = sample_dirichlet(weights, rng)
    return trans


# ============================================================================
# INITIALIZATION
# ============================================================================


def init_state(config: InferenceConfig, data: Sequence[FloatArray], rng: RngStream) -> ModelState:
    """Draw a starting state from the priors.

    Emission prior: mean 0, kappa0 from config, n0 = dim + 2 and
    S0 = scale_fraction * pooled covariance.
    """
    dim = _check_data(data)
    kind = config.model_kind
    L = config.l_max

    pooled = np.vstack(data)
    pooled_cov = np.atleast_2d(np.cov(pooled, rowvar=False, bias=True))
    prior = NIWPrior(
        mean0=np.zeros(dim), kappa0=config.kappa0, n0=dim + 2.0, S0=config.scale_fraction * pooled_cov
    )

    conc = Concentrations(
        gamma=_prior_mean(config.gamma_prior),
        alpha=_prior_mean(config.alpha_prior),
        kappa=_prior_mean(config.kappa_prior) if kind.is_sticky else 0.0,
    )
    beta = sample_gem(conc.gamma, L, rng)
    trans = _sample_rows(kind, beta, conc, np.zeros((L, L)), rng)
    init = np.full(L, 1.0 / L)

    emissions = [sample_gaussian_params(prior, config.emission_mode, rng) for _ in range(L)]
    means = np.array([mu for mu, _ in emissions])
    covs = np.array([sigma for _, sigma in emissions])

    if kind.is_semi_markov:
        shape, rate = config.duration_prior
        durations = rng.gamma(shape, 1.0 / rate, size=L)
        params: HmmParams | HsmmParams = HsmmParams(init, trans, means, covs, durations, config.d_max)
    else:
        params = HmmParams(init, trans, means, covs)

    assignments = tuple(Segmentation.from_states(rng.integers(0, L, size=len(frames))) for frames in data)
    logger.debug(f"Initialized {kind} chain with L={L}, {len(data)} events, {pooled.shape[0]} frames")
    return ModelState(config, beta, conc, params, prior, assignments)


# ============================================================================
# SUFFICIENT STATISTICS
# ============================================================================


def transition_counts(state: ModelState) -> tuple[FloatArray, FloatArray]:
    """Transition counts out of each state and counts of first states.

    HSMM counts come from consecutive segments and so never include
    self-transitions; HMM counts include the within-segment self-transitions.
    """
    L = state.n_states
    counts = np.zeros((L, L))
    first = np.zeros(L)
    for seg in state.assignments:
        if not seg.segments:
            continue
        first[seg.segments[0].state] += 1
        labels = np.array([s.state for s in seg.segments], dtype=np.int64)
        np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
        if not state.kind.is_semi_markov:
            durations = np.array([s.duration for s in seg.segments], dtype=np.float64)
            np.add.at(counts, (labels, labels), durations - 1.0)
    return counts, first


def sample_table_counts(customers: FloatArray, concentration: FloatArray, rng: RngStream) -> FloatArray:
    """Chinese-restaurant table counts for every cell.

    A cell with n customers and concentration c seats customer r (0-based) at
    a new table with probability c / (r + c), so the count lies in [1, n].
    """
    n = customers.ravel().astype(np.int64)
    c = np.broadcast_to(concentration, customers.shape).ravel()
    cell = np.repeat(np.arange(n.size), n)
    offsets = np.repeat(np.cumsum(n) - n, n)
    rank = np.arange(cell.size) - offsets
    with np.errstate(divide="ignore", invalid="ignore"):
        p_new = np.where(rank == 0, 1.0, c[cell] / (rank + c[cell]))
    seated = rng.random(cell.size) < p_new
    return np.bincount(cell, weights=seated, minlength=n.size).reshape(customers.shape)


def frame_states(state: ModelState) -> IntArray:
    """All frame labels of all events, concatenated in event order."""
    if not state.assignments:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([seg.states() for seg in state.assignments])


# ============================================================================
# GIBBS STEPS
# ============================================================================


def resample_assignments(state: ModelState, data: Sequence[FloatArray], rng: RngStream) -> ModelState:
    """Replace every event's segmentation with an exact conditional draw.

    Each event gets its own child stream, so draws do not depend on the order
    in which events are processed. The log evidence under the current
    parameters is recorded in ``data_loglik``.
    """
    streams = rng.spawn(len(data))
    assignments: list[Segmentation] = []
    total = 0.0
    for frames, stream in zip(data, streams, strict=True):
        obs = emission_loglik(state.params, frames)
        segmentation, evidence = sample_states(obs, state.params, stream)
        assignments.append(segmentation)
        total += evidence
    return replace(state, assignments=tuple(assignments), data_loglik=total)


def resample_transitions(state: ModelState, rng: RngStream) -> ModelState:
    """Row i ~ Dir(alpha * beta + kappa * e_i + n_i); HSMM rows get a zero diagonal.

    The initial-state distribution is resampled as one more row, with the
    counts of first states.
    """
    counts, first = transition_counts(state)
    conc = state.concentrations
    trans = _sample_rows(state.kind, state.beta, conc, counts, rng)
    init = sample_dirichlet(conc.alpha * state.beta + first, rng)
    return replace(state, params=_with_transitions(state.params, init, trans))


def auxiliary_tables(state: ModelState, rng: RngStream) -> TableCounts:
    """Draw restaurant table counts for the current assignments.

    For the sticky model the tables created by the self-transition bias are
    marked with the override draw w_j ~ Binomial(m_jj, rho / (rho + beta_j (1 - rho))).
    """
    L = state.n_states
    conc = state.concentrations
    counts, first = transition_counts(state)
    customers = np.vstack([counts, first[None, :]])

    concentration = np.tile(conc.alpha * state.beta, (L + 1, 1))
    if state.kind.is_sticky:
        concentration[np.arange(L), np.arange(L)] += conc.kappa
    tables = sample_table_counts(customers, concentration, rng)

    overrides = np.zeros(L)
    if state.kind.is_sticky and conc.kappa > 0:
        rho = conc.rho
        diagonal = tables[np.arange(L), np.arange(L)].astype(np.int64)
        p = rho / (rho + state.beta * (1.0 - rho))
        overrides = rng.binomial(diagonal, np.clip(p, 0.0, 1.0)).astype(np.float64)
    return TableCounts(customers=customers, tables=tables, overrides=overrides)


def resample_global_weights(state: ModelState, rng: RngStream) -> ModelState:
    """beta ~ Dir(gamma / L + m_bar), with m_bar the table counts minus sticky overrides.

    The tables integrate the transition rows out, so the rows and the initial
    distribution are redrawn given the new beta.
    """
    L = state.n_states
    tables = auxiliary_tables(state, rng)
    reduced = tables.tables.copy()
    reduced[np.arange(L), np.arange(L)] -= tables.overrides
    beta = sample_dirichlet(state.concentrations.gamma / L + reduced.sum(axis=0), rng)
    return resample_transitions(replace(state, beta=beta, tables=tables), rng)


def resample_emissions(state: ModelState, data: Sequence[FloatArray], rng: RngStream) -> ModelState:
    """Draw each state's (mu, Sigma) from its NIW posterior; empty states draw from the prior."""
    mode = state.config.emission_mode
    labels = frame_states(state)
    pooled = np.vstack(data) if data else np.zeros((0, state.prior.dim))
    means = np.empty_like(state.params.means)
    covs = np.empty_like(state.params.covs)
    for i in range(state.n_states):
        posterior = niw_posterior(state.prior, pooled[labels == i], mode)
        means[i], covs[i] = sample_gaussian_params(posterior, mode, rng)
    return replace(state, params=replace(state.params, means=means, covs=covs))


def resample_durations(state: ModelState, rng: RngStream) -> ModelState:
    """omega_i ~ Gamma(a + sum(d - 1), b + n_i) over complete segments of state i.

    The final segment of each event is right-censored and excluded.
    """
    if not isinstance(state.params, HsmmParams):
        raise ContractError(f"duration resampling requires an HSMM, got {state.kind}")

    L = state.n_states
    shifted_total = np.zeros(L)
    n_segments = np.zeros(L)
    for seg in state.assignments:
        for s in seg.complete_segments:
            shifted_total[s.state] += s.duration - 1
            n_segments[s.state] += 1

    shape, rate = state.config.duration_prior
    durations = rng.gamma(shape + shifted_total, 1.0 / (rate + n_segments))
    durations = np.maximum(durations, np.finfo(np.float64).tiny)
    return replace(state, params=replace(state.params, durations=durations))


def _resample_total_concentration(
    total: float, row_customers: FloatArray, n_tables: float, prior_shape: float, prior_rate: float, rng: RngStream
) -> float:
    """Auxiliary-variable update of a restaurant concentration shared by all rows."""
    active = row_customers[row_customers > 0]
    if active.size == 0:
        return float(rng.gamma(prior_shape, 1.0 / prior_rate))
    w = rng.beta(total + 1.0, active)
    s = rng.random(active.size) < active / (active + total)
    shape = prior_shape + n_tables - float(np.sum(s))
    rate = prior_rate - float(np.sum(np.log(w)))
    return float(rng.gamma(shape, 1.0 / rate))


def _resample_gamma(gamma: float, tables: FloatArray, config: InferenceConfig, rng: RngStream) -> float:
    a, b = config.gamma_prior
    dish_tables = tables.sum(axis=0)
    total = float(dish_tables.sum())
    if total == 0:
        return float(rng.gamma(a, 1.0 / b))
    k = float(np.count_nonzero(dish_tables))
    eta = rng.beta(gamma + 1.0, total)
    odds = (a + k - 1.0) / (total * (b - np.log(eta)))
    shape = a + k if rng.random() < odds / (1.0 + odds) else a + k - 1.0
    return float(rng.gamma(shape, 1.0 / (b - np.log(eta))))


def resample_concentrations(state: ModelState, config: InferenceConfig, rng: RngStream) -> ModelState:
    """Resample gamma, alpha and (sticky) kappa under their Gamma priors.

    The sticky model resamples the pair (alpha + kappa, rho) with
    alpha + kappa ~ Gamma(a_alpha + a_kappa, b_alpha) and rho ~ Beta(a_kappa, a_alpha)
    a priori, which matches independent Gamma priors when b_alpha = b_kappa.
    """
    if not config.resample_hypers:
        return state

    L = state.n_states
    # tables from the last global-weight step, or fresh ones when called on its own
    tables_obj = state.tables if state.tables is not None else auxiliary_tables(state, rng)

    conc = state.concentrations
    row_customers = tables_obj.customers.sum(axis=1)
    n_tables = float(tables_obj.tables.sum())
    reduced = tables_obj.tables.copy()
    reduced[np.arange(L), np.arange(L)] -= tables_obj.overrides
    gamma = _resample_gamma(conc.gamma, reduced, config, rng)

    a_alpha, b_alpha = config.alpha_prior
    if state.kind.is_sticky:
        a_kappa, _ = config.kappa_prior
        total = _resample_total_concentration(
            conc.alpha + conc.kappa, row_customers, n_tables, a_alpha + a_kappa, b_alpha, rng
        )
        n_override = float(tables_obj.overrides.sum())
        rho = float(rng.beta(a_kappa + n_override, a_alpha + n_tables - n_override))
        new_conc = Concentrations(gamma=gamma, alpha=(1.0 - rho) * total, kappa=rho * total)
    else:
        alpha = _resample_total_concentration(conc.alpha, row_customers, n_tables, a_alpha, b_alpha, rng)
        new_conc = Concentrations(gamma=gamma, alpha=alpha, kappa=0.0)
    # rows follow the new alpha (and kappa)
    return resample_transitions(replace(state, concentrations=new_conc), rng)


# ============================================================================
# DRIVER
# ============================================================================


def sweep(state: ModelState, data: Sequence[FloatArray], config: InferenceConfig, rng: RngStream) -> ModelState:
    """One full Gibbs sweep in the fixed order."""
    state = resample_assignments(state, data, rng)
    state = resample_transitions(state, rng)
    state = resample_global_weights(state, rng)
    state = resample_emissions(state, data, rng)
    if state.kind.is_semi_markov:
        state = resample_durations(state, rng)
    state = resample_concentrations(state, config, rng)
    return replace(state, iteration=state.iteration + 1)


def training_loglik(state: ModelState, data: Sequence[FloatArray]) -> float:
    """Sum over events of log p(y | params) with states marginalized."""
    return float(sum(log_evidence(emission_loglik(state.params, frames), state.params) for frames in data))


def occupied_states(state: ModelState, floor: float) -> list[int]:
    """States holding at least ``floor`` of all frames."""
    labels = frame_states(state)
    if labels.size == 0:
        return []
    share = np.bincount(labels, minlength=state.n_states) / labels.size
    return [int(i) for i in np.flatnonzero(share >= floor)]


def self_transition_mass(state: ModelState, states: Sequence[int] | None = None) -> float:
    """Mean self-transition probability over ``states`` (all states by default)."""
    if state.kind.is_semi_markov:
        raise ContractError("HSMM transitions have no self-transition mass")
    diagonal = np.diag(state.params.trans)
    chosen = diagonal if states is None or len(states) == 0 else diagonal[list(states)]
    return float(np.mean(chosen))


def fit(
    config: InferenceConfig, data: Sequence[FloatArray], rng: RngStream, progress: bool = False
) -> FitResult:
    """Run ``config.n_iters`` sweeps and return the final state.

    The training log-likelihood of sweep k is the evidence under the
    parameters left by sweep k, read off the next sweep's assignment pass.
    """
    state = init_state(config, data, rng)
    trace: list[float] = []
    logger.info(f"Fitting {config.model_kind} on {len(data)} events for {config.n_iters} sweeps")

    for k in tqdm(range(config.n_iters), desc=str(config.model_kind), unit="sweep", disable=not progress):
        try:
            state = sweep(state, data, config, rng)
        except DriveStyleError as e:
            raise SamplerError(k, e) from e
        if k > 0 and state.data_loglik is not None:
            trace.append(state.data_loglik)
        if k + 1 == config.burn_in:
            logger.debug(f"Burn-in complete after {k + 1} sweeps")

    try:
        trace.append(training_loglik(state, data))
    except DriveStyleError as e:
        raise SamplerError(config.n_iters, e) from e

    occupied = occupied_states(state, config.occupancy_floor)
    post = trace[config.burn_in :]
    logger.info(
        f"{config.model_kind}: {len(occupied)} occupied states, final loglik {trace[-1]:.2f}, "
        f"post-burn-in mean {np.mean(post):.2f} over {len(post)} sweeps"
    )
    return FitResult(final=state, loglik_trace=trace, occupied_states=occupied, config=config, burn_in=config.burn_in)
