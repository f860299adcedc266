import pytest

from drivestyle.config import load_settings
from drivestyle.errors import InputError
from drivestyle.models import InferenceConfig, ModelKind


def test_packaged_defaults():
    settings = load_settings()
    assert settings.inference.l_max == 20
    assert settings.inference.d_max == 500
    assert settings.inference.kappa_prior == (100.0, 1.0)
    assert settings.evaluation.k == 10
    assert settings.styles.kl_epsilon == 1e-6
    assert settings.thresholds.range_percentiles == (30.0, 85.0)


def test_overrides_merge_key_by_key(tmp_path):
    path = tmp_path / "overrides.yaml"
    path.write_text("inference:\n  l_max: 8\nevaluation:\n  predictive: sampled\n")
    settings = load_settings(path)
    assert settings.inference.l_max == 8
    assert settings.inference.d_max == 500
    assert settings.evaluation.predictive == "sampled"


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "overrides.yaml"
    path.write_text("inference:\n  l_maximum: 8\n")
    with pytest.raises(InputError):
        load_settings(path)


def test_non_mapping_file(tmp_path):
    path = tmp_path / "overrides.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(InputError):
        load_settings(path)


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_settings(tmp_path / "absent.yaml")


class TestInferenceConfig:
    def test_from_defaults_applies_overrides(self):
        settings = load_settings()
        config = InferenceConfig.from_defaults(
            settings.inference, ModelKind.STICKY_HDP_HMM, seed=3, n_iters=50, burn_in=20, l_max=None
        )
        assert config.model_kind is ModelKind.STICKY_HDP_HMM
        assert (config.n_iters, config.burn_in, config.seed) == (50, 20, 3)
        assert config.l_max == 20

    def test_burn_in_must_precede_end(self):
        with pytest.raises(ValueError):
            InferenceConfig(n_iters=10, burn_in=10)

    def test_priors_must_be_positive(self):
        with pytest.raises(ValueError):
            InferenceConfig(n_iters=10, burn_in=5, alpha_prior=(0.0, 1.0))

    def test_kind_flags(self):
        assert ModelKind.STICKY_HDP_HMM.is_sticky
        assert not ModelKind.HDP_HMM.is_sticky
        assert ModelKind.HDP_HSMM.is_semi_markov
