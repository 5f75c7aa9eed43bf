"""
Experiment pipeline for dpp-forecaster.

Each command is a pure function of (configuration, files in the output
directory) and writes its artifacts atomically:

    <out>/data/{train,test}.tsv          gen-data
    <out>/checkpoints/<stage>.json       train
    <out>/traces/<stage>_loss.tsv        train
    <out>/reports/report.tsv             evaluate
    <out>/plots/*.tsv                    export-plots
    <out>/manifests/<command>.json       every command
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from dpp_forecaster.config import ExperimentConfig, derive_seed
from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.models.cvae import (
    CvaeModel,
    forecast_random,
    load_cvae,
    save_cvae,
    train_cvae,
)
from dpp_forecaster.models.dsf import (
    NLL,
    DsfModel,
    DsfTrainConfig,
    forecast_cvae_ldpp,
    forecast_diverse,
    ground_kernel,
    ground_set,
    load_dsf,
    save_dsf,
    train_dsf,
    train_mcl,
)
from dpp_forecaster.services.dpp import COSINE, QualityConfig, expected_cardinality
from dpp_forecaster.services.export_utils import atomic_write_text, write_table
from dpp_forecaster.services.metrics import REPORT_COLUMNS, Forecaster, MetricsReport, evaluate
from dpp_forecaster.services.synthdata import (
    DataExample,
    generate,
    read_dataset,
    write_dataset,
)
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_input_file,
    validate_method_names,
)

logger = get_logger(__name__)

CVAE_STAGE = "cvae"
SAMPLER_STAGES = ("dsf", "dsf-nll", "dsf-cos", "mcl")
STAGES = (CVAE_STAGE, *SAMPLER_STAGES)

METHODS = ("dsf", "dsf-map", "cvae", "mcl", "dsf-nll", "dsf-cos", "cvae-ldpp")
DEFAULT_METHODS = ("dsf", "cvae")

N_SWEEP = (2, 5, 10, 20, 50)
OMEGA_SWEEP = (1.0, 1.5, 2.0, 3.0, 5.0)
RHO_SWEEP = (50.0, 70.0, 90.0, 99.0)

# Test contexts used for the held-out trace, trajectory export and sweeps
HELD_OUT_CONTEXTS = 100
PLOT_CONTEXTS = 50


@dataclass(frozen=True)
class RunLayout:
    """File locations inside an output directory."""

    root: Path

    @property
    def train_data(self) -> Path:
        return self.root / "data" / "train.tsv"

    @property
    def test_data(self) -> Path:
        return self.root / "data" / "test.tsv"

    def checkpoint(self, stage: str) -> Path:
        return self.root / "checkpoints" / f"{stage}.json"

    def sweep_checkpoint(self, num_samples: int) -> Path:
        return self.checkpoint(f"dsf-n{num_samples}")

    def trace(self, stage: str) -> Path:
        return self.root / "traces" / f"{stage}_loss.tsv"

    @property
    def report(self) -> Path:
        return self.root / "reports" / "report.tsv"

    def plot(self, name: str) -> Path:
        return self.root / "plots" / f"{name}.tsv"

    def manifest(self, command: str) -> Path:
        return self.root / "manifests" / f"{command}.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(
    config: ExperimentConfig,
    command: str,
    files: Sequence[Path],
    extra: dict[str, Any] | None = None,
) -> Path:
    """
    Record the exact configuration and the produced files of a command.

    Args:
        config: Configuration the command ran with
        command: Command label, e.g. "train-dsf"
        files: Produced files (hashed with SHA-256)
        extra: Additional JSON-serializable entries

    Returns:
        Path to the manifest
    """
    layout = RunLayout(config.out)
    document = {
        "command": command,
        "seed": config.seed,
        "config": config.to_dict(),
        "files": {
            str(Path(f).relative_to(layout.root)): _sha256(Path(f)) for f in files
        },
        **(extra or {}),
    }
    path = layout.manifest(command)
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def _require(path: Path, description: str) -> Path:
    ensure_valid(validate_input_file(path, description))
    return path


def _load_split(config: ExperimentConfig, path: Path, description: str) -> list[DataExample]:
    return read_dataset(_require(path, description), config.scene)


def load_train(config: ExperimentConfig) -> list[DataExample]:
    return _load_split(config, RunLayout(config.out).train_data, "training data (run gen-data)")


def load_test(config: ExperimentConfig) -> list[DataExample]:
    return _load_split(config, RunLayout(config.out).test_data, "test data (run gen-data)")


def load_trained_cvae(config: ExperimentConfig) -> CvaeModel:
    path = RunLayout(config.out).checkpoint(CVAE_STAGE)
    return load_cvae(_require(path, "cVAE checkpoint (run train --stage cvae)"))


def cmd_gen_data(config: ExperimentConfig) -> list[Path]:
    """
    Generate the training and test splits.

    Returns:
        Written dataset files
    """
    layout = RunLayout(config.out)
    logger.info(
        "Generating %s data: %d train, %d test (seed=%d)",
        config.regime,
        config.train_size,
        config.test_size,
        config.seed,
    )
    train = generate(config.scene, config.train_size, derive_seed(config.seed, 0), "train")
    test = generate(config.scene, config.test_size, derive_seed(config.seed, 1), "test")
    files = [
        write_dataset(layout.train_data, train, config.scene),
        write_dataset(layout.test_data, test, config.scene),
    ]
    write_manifest(config, "gen-data", files)
    return files


def sampler_config(config: ExperimentConfig, stage: str) -> DsfTrainConfig:
    """Training settings of a sampler stage: the ablations switch one option each."""
    if stage == "dsf-nll":
        return replace(config.dsf, loss_mode=NLL)
    if stage == "dsf-cos":
        return replace(config.dsf, similarity_mode=COSINE)
    return config.dsf


def sweep_sampler_config(config: ExperimentConfig, num_samples: int) -> DsfTrainConfig:
    """
    Training settings of the ADE-vs-N sampler with budget num_samples.

    Above the configured budget the similarity scale grows to
    k * num_samples / N: the codes share a fixed quality sphere, so their
    spacing shrinks with the budget and an unscaled kernel keeps pushing
    them out towards off-route trajectories. The latent-DPP scale is kept.
    """
    base = config.dsf
    scale = num_samples / base.num_samples
    if scale <= 1.0:
        return replace(base, num_samples=num_samples)
    return replace(base, num_samples=num_samples, k=base.k * scale, latent_k=base.ldpp_k)


def _train_sampler_stage(
    config: ExperimentConfig,
    stage: str,
    cfg: DsfTrainConfig,
    checkpoint: Path,
) -> list[Path]:
    layout = RunLayout(config.out)
    train = load_train(config)
    cvae = load_trained_cvae(config)

    if stage == "mcl":
        model, trace = train_mcl(train, cvae, cfg)
    else:
        held_out = None
        if layout.test_data.is_file():
            held_out = load_test(config)[:HELD_OUT_CONTEXTS]
        model, trace = train_dsf(train, cvae, cfg, held_out=held_out)

    save_dsf(
        checkpoint,
        model,
        cfg,
        extra={"stage": stage, "instability_events": trace.total_instability_events},
    )

    trace_name = checkpoint.stem
    comments = [f"stage: {stage}", f"num_samples: {cfg.num_samples}"]
    columns = ["epoch", "loss", "instability_events"]
    rows: list[list[Any]] = [
        [epoch, loss, events]
        for epoch, (loss, events) in enumerate(
            zip(trace.losses, trace.instability_events, strict=True), start=1
        )
    ]
    if trace.held_out_cardinality:
        comments.append(f"held_out_cardinality_initial: {trace.held_out_cardinality[0]!r}")
        columns.append("held_out_cardinality")
        for row, value in zip(rows, trace.held_out_cardinality[1:], strict=True):
            row.append(value)
    trace_path = write_table(layout.trace(trace_name), columns, rows, comments)
    return [checkpoint, trace_path]


def cmd_train(config: ExperimentConfig, stage: str) -> list[Path]:
    """
    Train one stage and write its checkpoint and loss trace.

    Args:
        config: Experiment configuration
        stage: "cvae", "dsf", "dsf-nll", "dsf-cos" or "mcl"

    Returns:
        Written files (checkpoint, trace)

    Raises:
        ConfigurationError: On an unknown stage or a missing prerequisite file
    """
    if stage not in STAGES:
        raise ConfigurationError(f"Unknown stage {stage!r}. Valid stages: {', '.join(STAGES)}")

    layout = RunLayout(config.out)
    logger.info("Training stage %s in %s", stage, layout.root)

    if stage == CVAE_STAGE:
        train = load_train(config)
        model, losses = train_cvae(train, config.cvae)
        checkpoint = save_cvae(layout.checkpoint(CVAE_STAGE), model, seed=config.seed)
        trace_path = write_table(
            layout.trace(CVAE_STAGE),
            ["epoch", "loss"],
            [[epoch, loss] for epoch, loss in enumerate(losses, start=1)],
            [f"stage: {CVAE_STAGE}"],
        )
        files = [checkpoint, trace_path]
    else:
        cfg = sampler_config(config, stage)
        files = _train_sampler_stage(config, stage, cfg, layout.checkpoint(stage))

    write_manifest(config, f"train-{stage}", files)
    return files


def _load_sampler(
    config: ExperimentConfig, stage: str
) -> tuple[DsfModel, DsfTrainConfig, dict[str, Any]]:
    path = RunLayout(config.out).checkpoint(stage)
    return load_dsf(_require(path, f"{stage} checkpoint (run train --stage {stage})"))


def _ground_set_forecaster(model: DsfModel, cvae: CvaeModel) -> Forecaster:
    return lambda example, seed: ground_set(model, cvae, example.past)


def build_forecaster(
    config: ExperimentConfig, method: str, cvae: CvaeModel
) -> tuple[Forecaster, bool, int, int]:
    """
    Forecaster of one evaluation method.

    Stochastic forecasters seed each context with derive_seed(seed, example_id)
    instead of seed + example_id, so neighbouring run seeds never replay each
    other's streams on shifted contexts.

    Returns:
        Tuple of (forecaster, deterministic, sampling budget, training
        instability events)
    """
    n = config.dsf.num_samples

    if method == "cvae":
        return (
            lambda ex, seed: forecast_random(cvae, ex.past, n, derive_seed(seed, ex.example_id)),
            False,
            n,
            0,
        )
    if method == "cvae-ldpp":
        pool = config.dsf.ldpp_pool
        return (
            lambda ex, seed: forecast_cvae_ldpp(
                cvae, ex.past, pool, n, config.dsf, derive_seed(seed, ex.example_id)
            ),
            False,
            min(n, pool),
            0,
        )

    stage = "dsf" if method == "dsf-map" else method
    model, cfg, meta = _load_sampler(config, stage)
    events = int(meta.get("instability_events", 0))
    if method == "dsf-map":
        omega_test = config.evaluation.omega_test
        return (
            lambda ex, seed: forecast_diverse(model, cvae, ex.past, cfg, omega_test),
            True,
            model.num_samples,
            events,
        )
    return _ground_set_forecaster(model, cvae), True, model.num_samples, events


def cmd_evaluate(config: ExperimentConfig, methods: Sequence[str] = DEFAULT_METHODS) -> Path:
    """
    Evaluate methods on the test split and write one report.

    The report holds one row per (method, seed) plus a mean row per method
    and is regenerated whole on every call.

    Raises:
        ConfigurationError: On an unknown method or a missing checkpoint
    """
    ensure_valid(validate_method_names(list(methods), METHODS))
    layout = RunLayout(config.out)
    test = load_test(config)
    cvae = load_trained_cvae(config)

    reports: list[MetricsReport] = []
    for method in methods:
        forecaster, deterministic, budget, events = build_forecaster(config, method, cvae)
        logger.info("Evaluating %s on %d test examples", method, len(test))
        reports.append(
            evaluate(
                method,
                forecaster,
                test,
                eps=config.evaluation.eps,
                seeds=config.eval_seeds(),
                deterministic=deterministic,
                num_samples=budget,
                regime=config.regime,
                instability_events=events,
            )
        )

    rows = [row for report in reports for row in report.rows()]
    path = write_table(
        layout.report,
        list(REPORT_COLUMNS),
        rows,
        [
            f"eps: {config.evaluation.eps!r}",
            f"omega_test: {config.evaluation.omega_test!r}",
        ],
    )
    write_manifest(config, "evaluate", [path], {"methods": list(methods)})
    return path


def _sweep_sampler(
    config: ExperimentConfig, num_samples: int
) -> tuple[DsfModel, DsfTrainConfig]:
    """Trained DSF with budget num_samples, training it if no checkpoint exists."""
    layout = RunLayout(config.out)
    main = layout.checkpoint("dsf")
    if num_samples == config.dsf.num_samples and main.is_file():
        model, cfg, _ = load_dsf(main)
        if model.num_samples == num_samples:
            return model, cfg

    wanted = sweep_sampler_config(config, num_samples)
    path = layout.sweep_checkpoint(num_samples)
    if path.is_file():
        model, cfg, _ = load_dsf(path)
        if cfg == wanted:
            return model, cfg
        logger.info("%s was trained with other settings, retraining", path.name)
    else:
        logger.info("No sampler with N=%d yet, training %s", num_samples, path.name)
    _train_sampler_stage(config, "dsf", wanted, path)
    model, cfg, _ = load_dsf(path)
    return model, cfg


def _trajectory_rows(
    config: ExperimentConfig, contexts: Sequence[DataExample], cvae: CvaeModel
) -> list[list[Any]]:
    model, cfg, _ = _load_sampler(config, "dsf")
    omega_test = config.evaluation.omega_test
    rows: list[list[Any]] = []
    for ex in contexts:
        past = ex.past.ravel().tolist()
        forecasts = {
            "truth": ex.future[np.newaxis],
            "cvae": forecast_random(
                cvae, ex.past, config.dsf.num_samples, derive_seed(config.seed, ex.example_id)
            ),
            "dsf": ground_set(model, cvae, ex.past),
            "dsf-map": forecast_diverse(model, cvae, ex.past, cfg, omega_test),
        }
        for method, samples in forecasts.items():
            for index, sample in enumerate(samples):
                rows.append([method, ex.example_id, index, *past, *sample.ravel().tolist()])
    return rows


def cmd_export_plots(config: ExperimentConfig) -> list[Path]:
    """
    Export the data behind trajectory panels, the ADE-vs-N curve and the
    omega / rho sweeps.

    Returns:
        Written plot-data files
    """
    layout = RunLayout(config.out)
    test = load_test(config)
    cvae = load_trained_cvae(config)
    scene = config.scene
    contexts = test[:PLOT_CONTEXTS]

    past_cols = [f"h{i}" for i in range(scene.context_dim)]
    future_cols = [f"x{i}" for i in range(scene.future_dim)]
    trajectories = write_table(
        layout.plot("trajectories"),
        ["method", "example_id", "sample", *past_cols, *future_cols],
        _trajectory_rows(config, contexts, cvae),
        [f"contexts: first {len(contexts)} test examples"],
    )

    ade_rows: list[list[Any]] = []
    for n in N_SWEEP:
        model, cfg = _sweep_sampler(config, n)
        sweep = replace(config, dsf=replace(config.dsf, num_samples=n))
        cvae_forecaster, _, _, _ = build_forecaster(sweep, "cvae", cvae)
        for method, forecaster, deterministic in (
            ("dsf", _ground_set_forecaster(model, cvae), True),
            ("cvae", cvae_forecaster, False),
        ):
            report = evaluate(
                method,
                forecaster,
                test,
                eps=config.evaluation.eps,
                seeds=config.eval_seeds(),
                deterministic=deterministic,
                num_samples=n,
                regime=config.regime,
            )
            ade_rows.append([method, n, report.ade, report.fde])
    ade_vs_n = write_table(
        layout.plot("ade_vs_n"),
        ["method", "num_samples", "ade", "fde"],
        ade_rows,
        [
            f"N grid: {', '.join(str(n) for n in N_SWEEP)}",
            f"dsf similarity scale: k * max(1, N / {config.dsf.num_samples})",
        ],
    )

    model, cfg, _ = _load_sampler(config, "dsf")
    held_out = test[:HELD_OUT_CONTEXTS]

    omega_rows = []
    for omega in OMEGA_SWEEP:
        sizes = [forecast_diverse(model, cvae, ex.past, cfg, omega).shape[0] for ex in held_out]
        omega_rows.append([omega, float(np.mean(sizes))])
    omega_sweep = write_table(
        layout.plot("omega_sweep"),
        ["omega_test", "mean_set_size"],
        omega_rows,
        [f"contexts: first {len(held_out)} test examples"],
    )

    rho_rows = []
    for rho in RHO_SWEEP:
        quality = QualityConfig(omega=cfg.omega, rho=rho, latent_dim=model.latent_dim)
        cards = [
            expected_cardinality(ground_kernel(model, cvae, ex.past, cfg, quality=quality)[2])
            for ex in held_out
        ]
        rho_rows.append([rho, quality.radius, float(np.mean(cards))])
    rho_sweep = write_table(
        layout.plot("rho_sweep"),
        ["rho", "radius", "mean_expected_cardinality"],
        rho_rows,
        [
            f"contexts: first {len(held_out)} test examples",
            f"trained at rho={cfg.rho!r}",
        ],
    )

    files = [trajectories, ade_vs_n, omega_sweep, rho_sweep]
    write_manifest(config, "export-plots", files)
    return files
