"""
Unit tests for configuration.

Tests runtime settings selection, seed derivation and the experiment
configuration with its JSON form.
"""

import json

import pytest

from dpp_forecaster import config as config_module
from dpp_forecaster.config import (
    DevelopmentSettings,
    EvaluationConfig,
    ExperimentConfig,
    Settings,
    derive_seed,
    dump_config,
    get_settings,
    load_config,
    save_config,
)
from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.models.cvae import CvaeConfig
from dpp_forecaster.models.dsf import DsfTrainConfig


class TestSettings:
    """Test environment-driven settings."""

    @pytest.mark.parametrize(
        "env, expected",
        [
            ("development", DevelopmentSettings),
            ("testing", config_module.TestingSettings),
            ("default", Settings),
        ],
    )
    def test_selection(self, monkeypatch, env, expected):
        """Test that DPP_FORECASTER_ENV picks the settings class."""
        monkeypatch.setenv("DPP_FORECASTER_ENV", env)
        assert get_settings() is expected

    def test_unknown_environment_falls_back(self, monkeypatch):
        """Test that an unknown environment name gives the base settings."""
        monkeypatch.setenv("DPP_FORECASTER_ENV", "staging")
        assert get_settings() is Settings

    def test_testing_is_quiet(self):
        """Test that the testing profile logs warnings only."""
        assert config_module.TestingSettings.LOG_LEVEL == "WARNING"
        assert config_module.TestingSettings.LOG_FILE is None


class TestDeriveSeed:
    """Test seed derivation."""

    def test_deterministic(self):
        """Test that equal inputs give equal seeds."""
        assert derive_seed(0, 17) == derive_seed(0, 17)

    def test_keys_separate_streams(self):
        """Test that different keys or bases give different seeds."""
        seeds = {derive_seed(0, i) for i in range(50)} | {derive_seed(1, i) for i in range(50)}
        assert len(seeds) == 100

    def test_key_order_matters(self):
        """Test that (a, b) and (b, a) are distinct."""
        assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


class TestExperimentConfig:
    """Test the typed experiment configuration."""

    def test_defaults(self):
        """Test the documented defaults."""
        config = ExperimentConfig()
        assert config.regime == "balanced"
        assert config.train_size == 1100
        assert config.test_size == 1000
        assert config.dsf.num_samples == 10
        assert config.evaluation.num_seeds == 10
        assert config.eval_seeds() == tuple(range(10))

    def test_regime_sets_route_probabilities(self):
        """Test that the imbalanced regime picks 0.8/0.1/0.1."""
        assert ExperimentConfig(regime="imbalanced").scene.route_probs == (0.8, 0.1, 0.1)

    def test_base_seed_propagates(self):
        """Test that sub-configuration seeds follow the base seed."""
        config = ExperimentConfig(seed=7, cvae=CvaeConfig(seed=99), dsf=DsfTrainConfig(seed=3))
        assert config.cvae.seed == 7
        assert config.dsf.seed == 7

    def test_overrides(self, tmp_path):
        """Test command-line overrides."""
        config = ExperimentConfig().with_overrides(
            seed=3, output_dir=tmp_path, num_samples=20, omega_test=2.0
        )
        assert config.seed == 3
        assert config.cvae.seed == 3
        assert config.out == tmp_path
        assert config.dsf.num_samples == 20
        assert config.evaluation.omega_test == 2.0
        assert config.eval_seeds()[0] == 3

    @pytest.mark.parametrize(
        "kwargs",
        [{"regime": "skewed"}, {"train_size": 0}, {"seed": -1}, {"test_size": 2.5}],
    )
    def test_invalid(self, kwargs):
        """Test that invalid scalars are rejected."""
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kwargs)

    def test_evaluation_validation(self):
        """Test that the clustering radius must be positive."""
        with pytest.raises(ConfigurationError):
            EvaluationConfig(eps=0.0)


class TestConfigFiles:
    """Test the JSON configuration form."""

    def test_round_trip(self, tmp_path):
        """Test that save -> load gives an equal configuration."""
        config = ExperimentConfig(
            regime="imbalanced",
            seed=4,
            train_size=50,
            dsf=DsfTrainConfig(num_samples=5, loss_mode="nll", nll_diag_eps=1e-3),
        )
        path = save_config(tmp_path / "config.json", config)
        assert load_config(path) == config

    def test_dump_is_canonical(self):
        """Test that serialization is stable and omits sub-configuration seeds."""
        text = dump_config(ExperimentConfig())
        assert text == dump_config(ExperimentConfig())
        data = json.loads(text)
        assert "seed" not in data["cvae"]
        assert "seed" not in data["dsf"]
        assert data["scenario"]["route_probs"] == pytest.approx([1 / 3, 1 / 3, 1 / 3])

    def test_partial_file_uses_defaults(self, tmp_path):
        """Test that missing keys take their defaults."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"regime": "imbalanced", "dsf": {"k": 2.0}}), encoding="utf-8")
        config = load_config(path)
        assert config.dsf.k == 2.0
        assert config.dsf.num_samples == 10
        assert config.scene.route_probs == (0.8, 0.1, 0.1)

    def test_none_gives_defaults(self):
        """Test that no file means the default configuration."""
        assert load_config(None) == ExperimentConfig()

    def test_unknown_top_level_key(self, tmp_path):
        """Test that typos are reported."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"sede": 1}), encoding="utf-8")
        with pytest.raises(ConfigurationError, match="sede"):
            load_config(path)

    def test_unknown_section_key(self, tmp_path):
        """Test that unknown keys inside a section are reported."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"cvae": {"epochz": 3}}), encoding="utf-8")
        with pytest.raises(ConfigurationError, match="epochz"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing configuration file is a configuration error."""
        with pytest.raises(ConfigurationError, match="not found"):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        """Test that malformed JSON is a configuration error."""
        path = tmp_path / "config.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="not valid JSON"):
            load_config(path)
