"""
Integration tests for the experiment pipeline.

Runs gen-data, train, evaluate and export-plots on a miniature
configuration and checks the artifacts they leave behind.
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from dpp_forecaster.config import EvaluationConfig, ExperimentConfig, derive_seed
from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.models.cvae import CvaeConfig, forecast_random
from dpp_forecaster.models.dsf import DsfTrainConfig, load_dsf
from dpp_forecaster.services.experiment import (
    N_SWEEP,
    OMEGA_SWEEP,
    RHO_SWEEP,
    RunLayout,
    build_forecaster,
    cmd_evaluate,
    cmd_export_plots,
    cmd_gen_data,
    cmd_train,
    sampler_config,
    sweep_sampler_config,
)
from dpp_forecaster.services.export_utils import read_table
from dpp_forecaster.services.metrics import REPORT_COLUMNS
from dpp_forecaster.services.synthdata import DataExample, ScenarioConfig, generate


def mini_config(root):
    return ExperimentConfig(
        train_size=40,
        test_size=12,
        cvae=CvaeConfig(epochs=3, batch_size=16, hidden_dim=8, lr=1e-3),
        dsf=DsfTrainConfig(num_samples=3, hidden_dim=8, epochs=1, lr=1e-3),
        evaluation=EvaluationConfig(num_seeds=2),
        output_dir=str(root),
    )


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    """Output directory of a complete miniature pipeline run."""
    config = mini_config(tmp_path_factory.mktemp("pipeline") / "run")
    cmd_gen_data(config)
    cmd_train(config, "cvae")
    cmd_train(config, "dsf")
    cmd_evaluate(config, ["dsf", "cvae"])
    cmd_export_plots(config)
    return config


def column(path, name):
    columns, rows = read_table(path)
    index = columns.index(name)
    return [row[index] for row in rows]


class TestGenData:
    """Test dataset generation."""

    def test_writes_both_splits(self, experiment_config):
        """Test that gen-data writes train and test files."""
        train_path, test_path = cmd_gen_data(experiment_config)
        assert len(read_table(train_path)[1]) == 40
        assert len(read_table(test_path)[1]) == 12
        assert set(column(test_path, "split")) == {"test"}

    def test_rerun_is_byte_identical(self, experiment_config):
        """Test that regenerating data gives identical bytes."""
        first = [p.read_bytes() for p in cmd_gen_data(experiment_config)]
        second = [p.read_bytes() for p in cmd_gen_data(experiment_config)]
        assert first == second

    def test_splits_differ(self, experiment_config):
        """Test that train and test splits differ."""
        train_path, test_path = cmd_gen_data(experiment_config)
        train_rows, test_rows = read_table(train_path)[1], read_table(test_path)[1]
        assert train_rows[0][3:] != test_rows[0][3:]

    def test_manifest_records_config_and_hashes(self, experiment_config):
        """Test that the manifest records config and file hashes."""
        cmd_gen_data(experiment_config)
        layout = RunLayout(experiment_config.out)
        manifest = json.loads(layout.manifest("gen-data").read_text(encoding="utf-8"))

        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == experiment_config.seed
        assert ExperimentConfig.from_dict(manifest["config"]) == experiment_config
        assert set(manifest["files"]) == {"data/train.tsv", "data/test.tsv"}
        assert all(len(digest) == 64 for digest in manifest["files"].values())


class TestTrain:
    """Test stage training."""

    def test_requires_data(self, experiment_config):
        """Test that training needs generated data."""
        with pytest.raises(ConfigurationError, match="training data"):
            cmd_train(experiment_config, "cvae")

    def test_sampler_requires_cvae(self, experiment_config):
        """Test that sampler stages need a trained cVAE."""
        cmd_gen_data(experiment_config)
        layout = RunLayout(experiment_config.out)
        with pytest.raises(ConfigurationError, match="cVAE checkpoint") as excinfo:
            cmd_train(experiment_config, "dsf")
        assert str(layout.checkpoint("cvae")) in str(excinfo.value)

    def test_unknown_stage(self, experiment_config):
        """Test that an unknown stage is rejected."""
        with pytest.raises(ConfigurationError, match="Unknown stage"):
            cmd_train(experiment_config, "gan")

    def test_cvae_trace_has_one_row_per_epoch(self, finished_run):
        """Test that the cVAE trace has one row per epoch."""
        trace = RunLayout(finished_run.out).trace("cvae")
        assert column(trace, "epoch") == ["1", "2", "3"]

    def test_dsf_trace_tracks_held_out_cardinality(self, finished_run):
        """Test that the DSF trace records held-out cardinality."""
        trace = RunLayout(finished_run.out).trace("dsf")
        columns, rows = read_table(trace)
        assert columns == ["epoch", "loss", "instability_events", "held_out_cardinality"]
        assert len(rows) == 1
        assert "held_out_cardinality_initial" in trace.read_text(encoding="utf-8")

    def test_sampler_stage_leaves_cvae_untouched(self, experiment_config):
        """Test that training a sampler leaves the cVAE checkpoint unchanged."""
        cmd_gen_data(experiment_config)
        cmd_train(experiment_config, "cvae")
        layout = RunLayout(experiment_config.out)
        before = layout.checkpoint("cvae").read_bytes()
        cmd_train(experiment_config, "dsf")
        assert layout.checkpoint("cvae").read_bytes() == before

    def test_checkpoint_rerun_is_byte_identical(self, experiment_config):
        """Test that retraining writes identical checkpoints."""
        cmd_gen_data(experiment_config)
        first = cmd_train(experiment_config, "cvae")[0].read_bytes()
        second = cmd_train(experiment_config, "cvae")[0].read_bytes()
        assert first == second

    @pytest.mark.parametrize(
        "stage, loss_mode, similarity_mode",
        [
            ("dsf", "cardinality", "gaussian"),
            ("dsf-nll", "nll", "gaussian"),
            ("dsf-cos", "cardinality", "cosine"),
        ],
    )
    def test_ablation_settings(self, experiment_config, stage, loss_mode, similarity_mode):
        """Test the loss and similarity mode of each sampler stage."""
        cfg = sampler_config(experiment_config, stage)
        assert (cfg.loss_mode, cfg.similarity_mode) == (loss_mode, similarity_mode)

    def test_nll_stage_records_instability_events(self, experiment_config):
        """Test that the NLL stage records its instability events."""
        cmd_gen_data(experiment_config)
        cmd_train(experiment_config, "cvae")
        checkpoint, trace = cmd_train(experiment_config, "dsf-nll")

        _, cfg, meta = load_dsf(checkpoint)
        assert cfg.loss_mode == "nll"
        assert meta["stage"] == "dsf-nll"
        events = sum(int(v) for v in column(trace, "instability_events"))
        assert meta["instability_events"] == events


class TestEvaluate:
    """Test report generation."""

    def test_report_rows(self, finished_run):
        """Test report columns, methods, seeds and echoed settings."""
        columns, rows = read_table(RunLayout(finished_run.out).report)
        assert columns == list(REPORT_COLUMNS)
        # two seeds plus a mean row per method
        assert [row[0] for row in rows] == ["dsf"] * 3 + ["cvae"] * 3
        assert [row[3] for row in rows] == ["0", "1", "mean"] * 2
        assert {row[1] for row in rows} == {"3"}
        assert {row[2] for row in rows} == {"balanced"}

    def test_deterministic_method_repeats_scores(self, finished_run):
        """Test that a deterministic method scores identically per seed."""
        _, rows = read_table(RunLayout(finished_run.out).report)
        dsf_rows = [row for row in rows if row[0] == "dsf"]
        assert dsf_rows[0][4:] == dsf_rows[1][4:]

    def test_full_ground_set_is_scored(self, finished_run):
        """Test that dsf scores all N samples."""
        _, rows = read_table(RunLayout(finished_run.out).report)
        size = REPORT_COLUMNS.index("mean_set_size")
        assert all(float(row[size]) == 3.0 for row in rows)

    def test_unknown_method(self, finished_run):
        """Test that an unknown method names the valid ones."""
        with pytest.raises(ConfigurationError, match="Valid methods"):
            cmd_evaluate(finished_run, ["dsf", "vae-gan"])

    def test_missing_sampler_checkpoint(self, finished_run):
        """Test that a missing checkpoint names the stage to train."""
        with pytest.raises(ConfigurationError, match="mcl checkpoint"):
            cmd_evaluate(finished_run, ["mcl"])

    def test_map_and_latent_dpp_methods(self, finished_run):
        """Test the set sizes of dsf-map and cvae-ldpp."""
        config = replace(finished_run, evaluation=EvaluationConfig(num_seeds=1, omega_test=3.0))
        path = cmd_evaluate(config, ["dsf-map", "cvae-ldpp"])
        _, rows = read_table(path)
        size = REPORT_COLUMNS.index("mean_set_size")
        by_method = {row[0]: row for row in rows if row[3] == "mean"}
        assert 1.0 <= float(by_method["dsf-map"][size]) <= 3.0
        assert float(by_method["cvae-ldpp"][size]) == 3.0
        # leave the shared report as the fixture wrote it
        cmd_evaluate(finished_run, ["dsf", "cvae"])

    def test_rerun_is_byte_identical(self, finished_run):
        """Test that re-evaluating gives an identical report."""
        report = RunLayout(finished_run.out).report
        before = report.read_bytes()
        cmd_evaluate(finished_run, ["dsf", "cvae"])
        assert report.read_bytes() == before


class TestForecasterSeeding:
    """Test per-context seeding of stochastic forecasters."""

    def test_cvae_forecaster_uses_derived_context_seed(self, experiment_config, tiny_cvae):
        """Test that a context is sampled with derive_seed(seed, example_id)."""
        forecaster, deterministic, n, _ = build_forecaster(experiment_config, "cvae", tiny_cvae)
        example = generate(ScenarioConfig.balanced(), 5, seed=0)[4]

        assert not deterministic
        np.testing.assert_array_equal(
            forecaster(example, 1),
            forecast_random(tiny_cvae, example.past, n, derive_seed(1, example.example_id)),
        )

    def test_neighbouring_seeds_do_not_share_streams(self, experiment_config, tiny_cvae):
        """Test that (seed 0, context 1) and (seed 1, context 0) draw differently."""
        forecaster, _, _, _ = build_forecaster(experiment_config, "cvae", tiny_cvae)
        second = generate(ScenarioConfig.balanced(), 2, seed=0)[1]
        same_past = DataExample(example_id=0, past=second.past, future=second.future)

        assert not np.array_equal(forecaster(second, 0), forecaster(same_past, 1))


class TestExportPlots:
    """Test plot-data export."""

    def test_writes_every_table(self, finished_run):
        """Test that every plot table is written."""
        layout = RunLayout(finished_run.out)
        for name in ("trajectories", "ade_vs_n", "omega_sweep", "rho_sweep"):
            assert layout.plot(name).is_file()

    def test_trajectory_rows(self, finished_run):
        """Test per-method trajectory rows."""
        methods = column(RunLayout(finished_run.out).plot("trajectories"), "method")
        assert methods.count("truth") == 12
        assert methods.count("cvae") == 36
        assert methods.count("dsf") == 36
        assert 12 <= methods.count("dsf-map") <= 36

    def test_ade_vs_n_grid(self, finished_run):
        """Test the ADE-vs-N grid and the cVAE curve."""
        path = RunLayout(finished_run.out).plot("ade_vs_n")
        _, rows = read_table(path)
        assert len(rows) == 2 * len(N_SWEEP)
        cvae_ade = [float(row[2]) for row in rows if row[0] == "cvae"]
        assert all(b <= a + 1e-12 for a, b in zip(cvae_ade, cvae_ade[1:], strict=False))

    def test_each_grid_point_has_a_sampler(self, finished_run):
        """Test that each grid point has its own sampler checkpoint."""
        layout = RunLayout(finished_run.out)
        # the configured N of 3 is not on the grid, so every point gets its own sampler
        for n in N_SWEEP:
            assert load_dsf(layout.sweep_checkpoint(n))[0].num_samples == n

    def test_sweep_samplers_scale_similarity_with_budget(self, experiment_config):
        """Test that budgets above the configured N train with k * N / num_samples."""
        base = experiment_config.dsf
        small = sweep_sampler_config(experiment_config, 2)
        large = sweep_sampler_config(experiment_config, 50)

        assert (small.num_samples, small.k) == (2, base.k)
        assert sweep_sampler_config(experiment_config, base.num_samples) == base
        assert large.num_samples == 50
        assert large.k == pytest.approx(base.k * 50 / base.num_samples)
        assert large.ldpp_k == base.ldpp_k

    def test_sweep_checkpoints_store_scaled_settings(self, finished_run):
        """Test that each stored sweep sampler carries its scaled settings."""
        layout = RunLayout(finished_run.out)
        for n in N_SWEEP:
            _, cfg, _ = load_dsf(layout.sweep_checkpoint(n))
            assert cfg == sweep_sampler_config(finished_run, n)

    def test_omega_sweep_is_monotone(self, finished_run):
        """Test that the mean MAP set size grows with omega."""
        path = RunLayout(finished_run.out).plot("omega_sweep")
        assert [float(v) for v in column(path, "omega_test")] == list(OMEGA_SWEEP)
        sizes = [float(v) for v in column(path, "mean_set_size")]
        assert sizes == sorted(sizes)

    def test_rho_sweep_radius(self, finished_run):
        """Test that the quality radius grows with rho."""
        path = RunLayout(finished_run.out).plot("rho_sweep")
        assert [float(v) for v in column(path, "rho")] == list(RHO_SWEEP)
        radii = [float(v) for v in column(path, "radius")]
        assert radii == sorted(radii)
        assert radii[2] == pytest.approx(np.sqrt(2 * np.log(10)))


class TestDeterminism:
    """Test that identical configurations reproduce identical artifacts."""

    def test_two_directories_agree(self, tmp_path):
        """Test that two runs of one configuration write identical files."""
        outputs = []
        for name in ("a", "b"):
            config = mini_config(tmp_path / name)
            cmd_gen_data(config)
            cmd_train(config, "cvae")
            cmd_train(config, "dsf")
            report = cmd_evaluate(config, ["dsf", "cvae"])
            layout = RunLayout(config.out)
            outputs.append(
                [
                    layout.train_data.read_bytes(),
                    layout.checkpoint("cvae").read_bytes(),
                    layout.checkpoint("dsf").read_bytes(),
                    report.read_bytes(),
                ]
            )
        assert outputs[0] == outputs[1]
