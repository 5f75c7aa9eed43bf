"""
Unit tests for the synthetic crossroad generator.

Tests scenario validation, trajectory geometry, route frequencies, route
classification and the dataset file format.
"""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.services.synthdata import (
    FORWARD,
    LEFT,
    RIGHT,
    ROUTES,
    ScenarioConfig,
    classify_route,
    dataset_columns,
    generate,
    read_dataset,
    stack_examples,
    write_dataset,
)


class TestScenarioConfig:
    """Test scenario validation."""

    def test_defaults(self, scenario):
        """Test default dimensions and balanced probabilities."""
        assert scenario.context_dim == 4
        assert scenario.future_dim == 6
        assert scenario.route_probs == pytest.approx((1 / 3, 1 / 3, 1 / 3))

    def test_imbalanced_probabilities(self):
        """Test the imbalanced route probabilities."""
        assert ScenarioConfig.imbalanced().route_probs == (0.8, 0.1, 0.1)

    @pytest.mark.parametrize(
        "probs", [(0.5, 0.5), (0.5, 0.6, -0.1), (0.2, 0.2, 0.2), (float("nan"), 0.5, 0.5)]
    )
    def test_invalid_probabilities(self, probs):
        """Test that probabilities must be three non-negative values summing to one."""
        with pytest.raises(ConfigurationError):
            ScenarioConfig(route_probs=probs)

    def test_planar_only(self):
        """Test that only planar scenes are accepted."""
        with pytest.raises(ConfigurationError):
            ScenarioConfig(dims=3)

    @pytest.mark.parametrize(
        "field, value",
        [("noise_std", -0.1), ("speed", 0.0), ("past_steps", 0), ("future_steps", 0)],
    )
    def test_invalid_values(self, field, value):
        """Test that negative noise and non-positive sizes are rejected."""
        with pytest.raises(ConfigurationError):
            ScenarioConfig(**{field: value})


class TestGenerate:
    """Test trajectory simulation."""

    def test_shapes_and_ids(self, scenario):
        """Test example shapes, ids, split tags and routes."""
        examples = generate(scenario, 5, seed=0, split="test")
        assert [ex.example_id for ex in examples] == [0, 1, 2, 3, 4]
        assert all(ex.past.shape == (2, 2) and ex.future.shape == (3, 2) for ex in examples)
        assert all(ex.split == "test" for ex in examples)
        assert all(ex.route in ROUTES for ex in examples)

    def test_noiseless_past_ends_at_centre(self):
        """Test that a noiseless past ends at the intersection centre."""
        cfg = ScenarioConfig(noise_std=0.0)
        for ex in generate(cfg, 10, seed=1):
            np.testing.assert_allclose(ex.past, [[0.0, -0.5], [0.0, 0.0]], atol=1e-15)

    def test_noiseless_forward_is_straight(self):
        """Test that a noiseless forward future is a straight line."""
        cfg = ScenarioConfig(route_probs=(1.0, 0.0, 0.0), noise_std=0.0, speed=0.7)
        ex = generate(cfg, 1, seed=0)[0]
        np.testing.assert_allclose(ex.future, [[0.0, 0.7], [0.0, 1.4], [0.0, 2.1]], atol=1e-12)

    def test_noiseless_turns(self):
        """Test the final positions of noiseless turns."""
        left = generate(ScenarioConfig(route_probs=(0.0, 1.0, 0.0), noise_std=0.0), 1, seed=0)[0]
        right = generate(ScenarioConfig(route_probs=(0.0, 0.0, 1.0), noise_std=0.0), 1, seed=0)[0]
        np.testing.assert_allclose(left.future[-1], [-1.5, 0.0], atol=1e-12)
        np.testing.assert_allclose(right.future[-1], [1.5, 0.0], atol=1e-12)

    def test_deterministic(self, scenario):
        """Test that equal seeds give equal datasets."""
        a = generate(scenario, 20, seed=5)
        b = generate(scenario, 20, seed=5)
        for x, y in zip(a, b, strict=True):
            np.testing.assert_array_equal(x.past, y.past)
            np.testing.assert_array_equal(x.future, y.future)
            assert x.route == y.route

    def test_different_seeds_differ(self, scenario):
        """Test that different seeds give different datasets."""
        a = generate(scenario, 3, seed=1)
        b = generate(scenario, 3, seed=2)
        assert not np.array_equal(a[0].future, b[0].future)

    @pytest.mark.parametrize("n", [0, -3])
    def test_rejects_empty_request(self, scenario, n):
        """Test that n must be positive."""
        with pytest.raises(ConfigurationError):
            generate(scenario, n, seed=0)

    @pytest.mark.parametrize(
        "cfg, route, p",
        [
            (ScenarioConfig.balanced(), FORWARD, 1 / 3),
            (ScenarioConfig.balanced(), LEFT, 1 / 3),
            (ScenarioConfig.balanced(), RIGHT, 1 / 3),
            (ScenarioConfig.imbalanced(), FORWARD, 0.8),
        ],
    )
    def test_route_frequencies(self, cfg, route, p):
        """Test that route frequencies match their probabilities."""
        n = 30000
        examples = generate(cfg, n, seed=11)
        freq = sum(ex.route == route for ex in examples) / n
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)

    @pytest.mark.parametrize("noise_std", [0.01, 0.05, 0.2])
    def test_same_route_pasts_differ_by_noise_only(self, noise_std):
        """Test that same-route past distances scale with the noise level."""
        examples = generate(ScenarioConfig(noise_std=noise_std), 300, seed=5)
        pasts = np.stack([ex.past.ravel() for ex in examples if ex.route == FORWARD])
        distances = pdist(pasts)

        assert np.quantile(distances, 0.5) <= 5 * noise_std
        assert np.quantile(distances, 0.95) <= 8 * noise_std

    def test_noiseless_pasts_coincide(self):
        """Test that without noise every past trajectory is the same."""
        examples = generate(ScenarioConfig(noise_std=0.0), 20, seed=5)
        assert np.max(pdist(np.stack([ex.past.ravel() for ex in examples]))) == 0.0


class TestClassifyRoute:
    """Test route labelling from final displacement."""

    @pytest.mark.parametrize(
        "final, route",
        [([0.0, 1.5], FORWARD), ([-1.5, 0.0], LEFT), ([1.5, 0.0], RIGHT), ([0.3, 1.5], FORWARD)],
    )
    def test_labels(self, final, route):
        """Test route labels from final displacements."""
        trajectory = np.array([[0.0, 0.0], [0.0, 0.0], final])
        assert classify_route(trajectory) == route

    def test_zero_displacement(self):
        """Test that a zero displacement has no route."""
        assert classify_route(np.zeros((3, 2))) is None

    def test_generated_labels_agree_at_low_noise(self):
        """Test that low-noise examples classify as their drawn route."""
        cfg = ScenarioConfig(noise_std=0.01)
        examples = generate(cfg, 200, seed=3)
        assert all(classify_route(ex) == ex.route for ex in examples)


class TestDatasetFile:
    """Test dataset persistence."""

    def test_round_trip_is_exact(self, tmp_path, scenario, dataset):
        """Test that a dataset file reloads exactly."""
        path = write_dataset(tmp_path / "train.tsv", dataset, scenario)
        loaded = read_dataset(path, scenario)
        assert len(loaded) == len(dataset)
        for a, b in zip(dataset, loaded, strict=True):
            np.testing.assert_array_equal(a.past, b.past)
            np.testing.assert_array_equal(a.future, b.future)
            assert (a.example_id, a.route, a.split) == (b.example_id, b.route, b.split)

    def test_rewrite_is_byte_identical(self, tmp_path, scenario, dataset):
        """Test that writing a dataset twice gives identical bytes."""
        first = write_dataset(tmp_path / "a.tsv", dataset, scenario).read_bytes()
        second = write_dataset(tmp_path / "b.tsv", dataset, scenario).read_bytes()
        assert first == second

    def test_header(self, tmp_path, scenario, dataset):
        """Test the dataset file header."""
        path = write_dataset(tmp_path / "train.tsv", dataset[:2], scenario)
        header = path.read_text(encoding="utf-8").splitlines()[0].split("\t")
        assert header == dataset_columns(scenario)
        assert header[:3] == ["example_id", "split", "route"]

    def test_missing_file(self, tmp_path, scenario):
        """Test that a missing dataset file is reported."""
        with pytest.raises(ConfigurationError, match="not found"):
            read_dataset(tmp_path / "absent.tsv", scenario)

    def test_dimension_mismatch(self, tmp_path, scenario, dataset):
        """Test that a file of other dimensions is rejected."""
        path = write_dataset(tmp_path / "train.tsv", dataset, scenario)
        with pytest.raises(ConfigurationError):
            read_dataset(path, ScenarioConfig(future_steps=4))

    def test_stack_examples(self, dataset):
        """Test stacked context and future shapes."""
        contexts, futures = stack_examples(dataset[:7])
        assert contexts.shape == (7, 4)
        assert futures.shape == (7, 3, 2)
        np.testing.assert_array_equal(contexts[2], dataset[2].past.ravel())
