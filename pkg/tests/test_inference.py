from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from conftest import contaminated_benchmark, hmm_path_scores, oracle_evidence, random_hmm

from drivestyle.config import SyntheticBenchmark
from drivestyle.dataio import default_benchmark_params, generate_synthetic, normalize
from drivestyle.distributions import make_rng
from drivestyle.errors import ContractError, InputError
from drivestyle.evaluation import frame_accuracy, short_segment_fraction
from drivestyle.inference import (
    Concentrations,
    fit,
    init_state,
    occupied_states,
    resample_assignments,
    resample_concentrations,
    resample_durations,
    resample_global_weights,
    resample_transitions,
    sample_table_counts,
    self_transition_mass,
    sweep,
    training_loglik,
    transition_counts,
)
from drivestyle.markov import HmmParams, HsmmParams, Segment, Segmentation, emission_loglik, map_segmentation
from drivestyle.models import InferenceConfig, ModelKind


def _config(kind: ModelKind, **overrides) -> InferenceConfig:
    values = {"model_kind": kind, "l_max": 5, "d_max": 20, "n_iters": 4, "burn_in": 2}
    values.update(overrides)
    return InferenceConfig(**values)


@pytest.fixture
def data(small_dataset):
    return normalize(small_dataset).frames()


class TestTransitionCounts:
    def test_hmm_counts_include_self_transitions(self, data, rng):
        state = init_state(_config(ModelKind.HDP_HMM, l_max=2), data, rng)
        state = replace(state, assignments=(Segmentation.from_states([0, 0, 1, 1, 1]),))
        counts, first = transition_counts(state)
        np.testing.assert_array_equal(counts, [[1.0, 1.0], [0.0, 2.0]])
        np.testing.assert_array_equal(first, [1.0, 0.0])

    def test_hsmm_counts_only_segment_boundaries(self, data, rng):
        state = init_state(_config(ModelKind.HDP_HSMM, l_max=2), data, rng)
        state = replace(state, assignments=(Segmentation.from_states([0, 0, 1, 1, 1]),))
        counts, _ = transition_counts(state)
        np.testing.assert_array_equal(counts, [[0.0, 1.0], [0.0, 0.0]])


class TestTableCounts:
    def test_tables_lie_between_one_and_customers(self, rng):
        customers = np.array([[0.0, 3.0], [5.0, 1.0]])
        tables = sample_table_counts(customers, np.full((2, 2), 1.5), rng)
        assert tables[0, 0] == 0
        assert np.all(tables[customers > 0] >= 1)
        assert np.all(tables <= customers)

    def test_extreme_concentrations(self, rng):
        customers = np.array([[4.0, 2.0]])
        np.testing.assert_array_equal(sample_table_counts(customers, np.full((1, 2), 1e12), rng), customers)
        np.testing.assert_array_equal(sample_table_counts(customers, np.full((1, 2), 1e-12), rng), [[1.0, 1.0]])


class TestSweeps:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_sweep_keeps_parameters_valid(self, kind, data, rng):
        config = _config(kind)
        state = init_state(config, data, rng)
        for _ in range(3):
            state = sweep(state, data, config, rng)
        assert state.iteration == 3
        assert state.beta.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(state.params.trans.sum(axis=1), 1.0)
        assert [seg.n_frames for seg in state.assignments] == [len(f) for f in data]
        if kind.is_semi_markov:
            assert np.all(np.diag(state.params.trans) == 0.0)
        if not kind.is_sticky:
            assert state.concentrations.kappa == 0.0

    def test_hsmm_segments_respect_d_max(self, data, rng):
        config = _config(ModelKind.HDP_HSMM, d_max=3)
        state = init_state(config, data, rng)
        state = sweep(state, data, config, rng)
        for seg in state.assignments:
            assert all(s.duration <= 3 for s in seg.segments)
            assert all(a.state != b.state for a, b in zip(seg.segments, seg.segments[1:], strict=False))

    def test_duration_step_requires_hsmm(self, data, rng):
        state = init_state(_config(ModelKind.STICKY_HDP_HMM), data, rng)
        with pytest.raises(ContractError):
            resample_durations(state, rng)

    def test_fixed_hypers_keep_concentrations(self, data, rng):
        config = _config(ModelKind.STICKY_HDP_HMM, resample_hypers=False)
        state = init_state(config, data, rng)
        assert resample_concentrations(state, config, rng) is state

    def test_sticky_initial_kappa_is_prior_mean(self, data, rng):
        state = init_state(_config(ModelKind.STICKY_HDP_HMM, kappa_prior=(50.0, 2.0)), data, rng)
        assert state.concentrations.kappa == 25.0
        assert state.concentrations.rho == pytest.approx(25.0 / 26.0)


    def test_single_state_hsmm_on_events_longer_than_d_max(self, rng):
        data = [make_rng(5, i).normal(size=(40, 3)) for i in range(3)]
        config = _config(ModelKind.HDP_HSMM, l_max=1, d_max=5)
        state = sweep(init_state(config, data, rng), data, config, rng)
        assert all(seg.segments == (Segment(0, 0, 40),) for seg in state.assignments)
        assert np.isfinite(training_loglik(state, data))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_concentrations_on_a_fresh_state(self, kind, data, rng):
        config = _config(kind)
        state = init_state(config, data, rng)
        assert state.tables is None
        conc = resample_concentrations(state, config, rng).concentrations
        assert np.isfinite(conc.gamma) and conc.gamma > 0
        assert np.isfinite(conc.alpha) and conc.alpha > 0
        assert (conc.kappa > 0) == kind.is_sticky


class TestConditionals:
    def test_duration_posterior_mean_from_length_seven_segments(self, data, rng):
        state = init_state(_config(ModelKind.HDP_HSMM, l_max=2), data, rng)
        n = 10_000
        segments = [Segment(i % 2, 7 * i, 7) for i in range(2 * n)]
        # censored final segment, excluded from the statistics
        segments.append(Segment(0, 14 * n, 3))
        state = replace(state, assignments=(Segmentation(tuple(segments)),))
        draws = np.array([resample_durations(state, make_rng(5, k)).params.durations for k in range(50)])
        # Gamma(1 + 6n, 1 + n) posterior
        np.testing.assert_allclose(draws.mean(axis=0), (1 + 6 * n) / (1 + n), rtol=0.005)
        np.testing.assert_allclose(draws.mean(axis=0), 6.0, rtol=0.02)

    def test_global_weights_follow_the_only_used_state(self, data, rng):
        state = init_state(_config(ModelKind.HDP_HMM, l_max=3), data, rng)
        state = replace(
            state,
            beta=np.array([0.98, 0.01, 0.01]),
            concentrations=Concentrations(gamma=1.0, alpha=100.0),
            assignments=tuple(Segmentation.from_states([0] * 50) for _ in range(200)),
        )
        updated = resample_global_weights(state, rng)
        assert updated.beta[0] > 0.98
        assert updated.tables is not None
        np.testing.assert_allclose(updated.params.trans.sum(axis=1), 1.0)

    def test_large_kappa_gives_near_diagonal_rows(self, data, rng):
        state = init_state(_config(ModelKind.STICKY_HDP_HMM), data, rng)
        state = replace(state, concentrations=Concentrations(gamma=1.0, alpha=1.0, kappa=1e4))
        trans = resample_transitions(state, rng).params.trans
        assert np.all(np.diag(trans) > 0.99)

    def test_prior_only_concentrations_match_prior_means(self, data, rng):
        config = _config(ModelKind.HDP_HMM, gamma_prior=(1.0, 1.0), alpha_prior=(3.0, 2.0))
        state = replace(init_state(config, data, rng), assignments=())
        draws = [resample_concentrations(state, config, rng).concentrations for _ in range(10_000)]
        assert np.mean([c.gamma for c in draws]) == pytest.approx(1.0, rel=0.05)
        assert np.mean([c.alpha for c in draws]) == pytest.approx(1.5, rel=0.05)


class TestEventOrder:
    def test_event_draws_do_not_depend_on_position(self, rng):
        params = random_hmm(rng, n_states=2, dim=1)
        first, second = rng.normal(size=(3, 1)), rng.normal(size=(5, 1))
        state = init_state(_config(ModelKind.HDP_HMM, l_max=2), [first, second], rng)
        state = replace(state, params=params)
        scores = hmm_path_scores(emission_loglik(params, first), params)
        evidence = oracle_evidence(scores)
        n = 3000

        def draws(events, seed, position):
            paths = Counter()
            for k in range(n):
                seg = resample_assignments(state, events, make_rng(seed, k)).assignments[position]
                paths[tuple(int(s) for s in seg.states())] += 1
            return paths

        leading = draws([first, second], 21, 0)
        trailing = draws([second, first], 22, 1)
        for path, score in scores.items():
            expected = np.exp(score - evidence)
            assert leading[path] / n == pytest.approx(expected, abs=0.04)
            assert trailing[path] / n == pytest.approx(expected, abs=0.04)

    def test_statistics_ignore_event_order(self, data, rng):
        config = _config(ModelKind.HDP_HMM)
        state = sweep(init_state(config, data, rng), data, config, rng)
        order = [2, 0, 1]
        shuffled = replace(state, assignments=tuple(state.assignments[i] for i in order))
        shuffled_data = [data[i] for i in order]
        for a, b in zip(transition_counts(state), transition_counts(shuffled), strict=True):
            np.testing.assert_array_equal(a, b)
        assert training_loglik(shuffled, shuffled_data) == pytest.approx(training_loglik(state, data), rel=1e-12)


class TestStickyEffect:
    @pytest.mark.parametrize("seed", range(5))
    def test_sticky_prior_raises_self_transition_mass(self, seed):
        spec = SyntheticBenchmark(n_events=3, n_frames=200, d_max=100)
        dataset, _ = generate_synthetic(default_benchmark_params(spec), spec.n_events, spec.n_frames, seed=seed)
        data = normalize(dataset).frames()
        mass = {}
        for kind in (ModelKind.HDP_HMM, ModelKind.STICKY_HDP_HMM):
            config = InferenceConfig(model_kind=kind, l_max=8, n_iters=10, burn_in=5, kappa_prior=(100.0, 1.0))
            mass[kind] = self_transition_mass(fit(config, data, make_rng(seed)).final)
        assert mass[ModelKind.STICKY_HDP_HMM] > mass[ModelKind.HDP_HMM]


class TestFit:
    def test_trace_has_one_value_per_sweep(self, data):
        result = fit(_config(ModelKind.HDP_HSMM), data, make_rng(0))
        assert len(result.loglik_trace) == 4
        assert result.loglik_trace[-1] == pytest.approx(training_loglik(result.final, data))
        assert result.occupied_states == occupied_states(result.final, result.config.occupancy_floor)

    def test_same_seed_same_chain(self, data):
        a = fit(_config(ModelKind.STICKY_HDP_HMM), data, make_rng(3))
        b = fit(_config(ModelKind.STICKY_HDP_HMM), data, make_rng(3))
        assert a.loglik_trace == b.loglik_trace
        np.testing.assert_array_equal(a.final.params.trans, b.final.params.trans)

    def test_empty_data(self, rng):
        with pytest.raises(InputError):
            fit(_config(ModelKind.HDP_HMM), [], rng)

    def test_mixed_dimensions(self, rng):
        with pytest.raises(InputError):
            fit(_config(ModelKind.HDP_HMM), [np.zeros((4, 3)), np.zeros((4, 2))], rng)

    def test_self_transition_mass(self, data):
        result = fit(_config(ModelKind.STICKY_HDP_HMM), data, make_rng(1))
        mass = self_transition_mass(result.final)
        assert mass == pytest.approx(float(np.mean(np.diag(result.final.params.trans))))
        hsmm = fit(_config(ModelKind.HDP_HSMM), data, make_rng(1))
        with pytest.raises(ContractError):
            self_transition_mass(hsmm.final)

    def test_burn_in_is_recorded(self, data):
        result = fit(_config(ModelKind.HDP_HMM, n_iters=4, burn_in=2), data, make_rng(0))
        assert result.burn_in == 2
        assert result.post_burn_in_trace == result.loglik_trace[2:]
        assert len(result.post_burn_in_trace) == 2
        # iteration counts completed sweeps: the final state comes from sweep index n_iters - 1
        assert result.final.iteration == 4

    @pytest.mark.parametrize("burn_in", [4, 5])
    def test_burn_in_must_leave_sweeps(self, burn_in):
        with pytest.raises(ValueError):
            _config(ModelKind.HDP_HMM, n_iters=4, burn_in=burn_in)


@pytest.mark.slow
def test_hsmm_recovers_synthetic_states():
    spec = SyntheticBenchmark(n_events=5, n_frames=300, d_max=150)
    dataset, truth = generate_synthetic(default_benchmark_params(spec), spec.n_events, spec.n_frames, seed=0)
    normalized = normalize(dataset)
    config = InferenceConfig(model_kind=ModelKind.HDP_HSMM, l_max=10, d_max=150, n_iters=60, burn_in=30)
    result = fit(config, normalized.frames(), make_rng(0))
    params = result.final.params
    assert isinstance(params, HsmmParams)
    decoded = [map_segmentation(emission_loglik(params, f), params) for f in normalized.frames()]
    true_segs = [truth.segmentations[e.event_id] for e in dataset.events]
    assert frame_accuracy(true_segs, decoded) > 0.9
    assert 3 <= len(result.occupied_states) <= 6


@pytest.mark.slow
def test_fitted_hmm_infers_more_short_segments_than_hsmm():
    wins = 0
    for seed in range(5):
        dataset, _ = contaminated_benchmark(seed, n_events=5, n_frames=300)
        frames = normalize(dataset).frames()
        fractions = {}
        for kind in (ModelKind.HDP_HMM, ModelKind.HDP_HSMM):
            config = InferenceConfig(model_kind=kind, l_max=10, d_max=150, n_iters=60, burn_in=30)
            params = fit(config, frames, make_rng(seed)).final.params
            decoded = [map_segmentation(emission_loglik(params, f), params) for f in frames]
            fractions[kind] = short_segment_fraction(decoded, dataset.rate_hz)
        wins += fractions[ModelKind.HDP_HSMM] < fractions[ModelKind.HDP_HMM]
    assert wins >= 4


def _simulate_hmm(params: HmmParams, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    states = np.empty(n_frames, dtype=np.int64)
    states[0] = rng.choice(params.n_states, p=params.init)
    for t in range(1, n_frames):
        states[t] = rng.choice(params.n_states, p=params.trans[states[t - 1]])
    chols = np.linalg.cholesky(params.covs[states])
    return params.means[states] + np.einsum("tij,tj->ti", chols, rng.standard_normal(params.means[states].shape))


@pytest.mark.slow
def test_successive_conditional_draws_keep_the_prior():
    # Alternate data simulation and sweeps; the parameters must stay distributed
    # as the prior: beta ~ Dir(1/3, 1/3, 1/3) and pi_i ~ Dir(alpha * beta) with alpha = 1.
    config = InferenceConfig(model_kind=ModelKind.HDP_HMM, l_max=3, n_iters=2, burn_in=1, resample_hypers=False)
    rng = make_rng(17)
    state = init_state(config, [rng.normal(size=(10, 1))], rng)
    diagonal, beta_sq = [], []
    for k in range(6000):
        assert isinstance(state.params, HmmParams)
        data = [_simulate_hmm(state.params, 10, rng)]
        state = sweep(state, data, config, rng)
        if k >= 500:
            diagonal.append(float(np.mean(np.diag(state.params.trans))))
            beta_sq.append(float(np.mean(state.beta**2)))

    for values, expected in ((diagonal, 1.0 / 3.0), (beta_sq, 2.0 / 9.0)):
        batches = np.asarray(values).reshape(25, 220).mean(axis=1)
        se = batches.std(ddof=1) / np.sqrt(len(batches))
        assert abs(batches.mean() - expected) < 4 * se
