"""
Test fixtures for dpp-forecaster.

Provides seeded datasets, tiny models, random PSD kernels and a miniature
experiment configuration.
"""

import numpy as np
import pytest

from dpp_forecaster.config import EvaluationConfig, ExperimentConfig
from dpp_forecaster.models.cvae import CvaeConfig, CvaeModel, train_cvae
from dpp_forecaster.models.dsf import DsfModel, DsfTrainConfig
from dpp_forecaster.services.synthdata import ScenarioConfig, generate


@pytest.fixture()
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture()
def scenario():
    """Default balanced crossroad scenario (H=2, T=3, D=2)."""
    return ScenarioConfig.balanced()


@pytest.fixture()
def dataset(scenario):
    """Sixty seeded training examples."""
    return generate(scenario, 60, seed=0)


@pytest.fixture()
def tiny_cvae():
    """Untrained cVAE with a narrow hidden layer."""
    return CvaeModel.create(hidden_dim=6, seed=3)


@pytest.fixture(scope="module")
def trained_cvae():
    """cVAE trained for a few epochs on a small dataset."""
    examples = generate(ScenarioConfig.balanced(), 80, seed=7)
    config = CvaeConfig(epochs=5, batch_size=16, hidden_dim=16, lr=1e-3, seed=0)
    model, _ = train_cvae(examples, config)
    return model


@pytest.fixture()
def tiny_dsf(tiny_cvae):
    """Sampler with N=3 matching tiny_cvae."""
    return DsfModel.create(
        num_samples=3,
        latent_dim=tiny_cvae.latent_dim,
        context_dim=tiny_cvae.context_dim,
        hidden_dim=6,
        seed=11,
    )


@pytest.fixture()
def dsf_config():
    """DSF settings with the default kernel and a small budget."""
    return DsfTrainConfig(num_samples=3, hidden_dim=6, epochs=2, lr=1e-3)


@pytest.fixture()
def random_psd_kernel():
    """Factory for random symmetric positive definite kernels."""

    def make(n, seed):
        gen = np.random.default_rng(seed)
        features = gen.normal(size=(n, n + 2))
        kernel = features @ features.T / n + 1e-3 * np.eye(n)
        return 0.5 * (kernel + kernel.T)

    return make


@pytest.fixture()
def experiment_config(tmp_path):
    """Miniature end-to-end configuration writing into tmp_path."""
    return ExperimentConfig(
        train_size=40,
        test_size=12,
        cvae=CvaeConfig(epochs=3, batch_size=16, hidden_dim=8, lr=1e-3),
        dsf=DsfTrainConfig(num_samples=3, hidden_dim=8, epochs=1, lr=1e-3),
        evaluation=EvaluationConfig(num_seeds=2),
        output_dir=str(tmp_path / "run"),
    )
