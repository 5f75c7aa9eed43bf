"""
Diversity Sampling Function (DSF) for dpp-forecaster.

The DSF is a dense network that maps a context (the flattened past
trajectory) to N latent codes. Decoding those codes with a frozen cVAE
decoder yields a ground set of N trajectories; a DPP kernel over that set
scores its diversity and the DSF is trained to maximize the expected
cardinality (or, as an ablation, to minimize the DPP negative
log-likelihood). Inference runs greedy MAP over the kernel.

This module also holds the baselines that reuse the sampler architecture
(multiple choice learning) or the DPP machinery (DPP over prior latent codes).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from dpp_forecaster.errors import (
    ConfigurationError,
    NumericalError,
    OptimizationError,
)
from dpp_forecaster.models.checkpoint import load_checkpoint, save_checkpoint
from dpp_forecaster.models.cvae import CvaeModel, decode_batch, decoder_inputs
from dpp_forecaster.models.network import AdamState, DenseNet, ParamStore, adam_step
from dpp_forecaster.services.dpp import (
    GAUSSIAN,
    SIMILARITY_MODES,
    DppKernel,
    QualityConfig,
    build_kernel,
    diversity_loss,
    diversity_loss_grad,
    expected_cardinality,
    greedy_map_with_gains,
    nll_loss,
    nll_loss_grad,
    quality_gradient,
    quality_vector,
    similarity_matrix,
)
from dpp_forecaster.services.synthdata import DataExample
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_choice,
    validate_non_negative,
    validate_percentile,
    validate_positive,
    validate_positive_int,
)

logger = get_logger(__name__)

CARDINALITY = "cardinality"
NLL = "nll"
LOSS_MODES = (CARDINALITY, NLL)


@dataclass(frozen=True)
class DsfTrainConfig:
    """
    DSF training and inference settings.

    Attributes:
        k: Similarity scale of the trajectory kernel
        omega: Base quality during training
        rho: Percentile of prior mass inside the quality sphere
        lr: Adam learning rate
        epochs: Passes over the training contexts
        loss_mode: "cardinality" (diversity loss) or "nll"
        similarity_mode: "gaussian" or "cosine"
        nll_diag_eps: Diagonal offset of the NLL loss
        num_samples: Sampling budget N
        hidden_dim: Width of the sampler's hidden layer
        seed: Seed for initialization and context shuffling
        ldpp_pool: Prior latent codes drawn by the latent-DPP baseline
        latent_k: Similarity scale of the latent-DPP kernel (None: use k)
    """

    k: float = 1.0
    omega: float = 1.0
    rho: float = 90.0
    lr: float = 1e-4
    epochs: int = 20
    loss_mode: str = CARDINALITY
    similarity_mode: str = GAUSSIAN
    nll_diag_eps: float = 0.0
    num_samples: int = 10
    hidden_dim: int = 128
    seed: int = 0
    ldpp_pool: int = 100
    latent_k: float | None = None

    def __post_init__(self) -> None:
        ensure_valid(validate_positive(self.k, "k"))
        ensure_valid(validate_positive(self.omega, "omega"))
        ensure_valid(validate_percentile(self.rho))
        ensure_valid(validate_positive(self.lr, "lr"))
        ensure_valid(validate_positive_int(self.epochs, "epochs"))
        ensure_valid(validate_choice(self.loss_mode, LOSS_MODES, "loss_mode"))
        ensure_valid(
            validate_choice(self.similarity_mode, SIMILARITY_MODES, "similarity_mode")
        )
        ensure_valid(validate_non_negative(self.nll_diag_eps, "nll_diag_eps"))
        ensure_valid(validate_positive_int(self.num_samples, "num_samples"))
        ensure_valid(validate_positive_int(self.hidden_dim, "hidden_dim"))
        ensure_valid(validate_positive_int(self.ldpp_pool, "ldpp_pool"))
        if self.latent_k is not None:
            ensure_valid(validate_positive(self.latent_k, "latent_k"))

    @property
    def ldpp_k(self) -> float:
        return self.k if self.latent_k is None else self.latent_k


@dataclass(frozen=True, eq=False)
class DsfModel:
    """
    Sampler network mapping a context to N latent codes.

    Output element i * D_z + j is component j of code i.
    """

    net: DenseNet
    params: ParamStore
    num_samples: int
    latent_dim: int

    def __post_init__(self) -> None:
        if self.net.output_dim != self.num_samples * self.latent_dim:
            raise ConfigurationError(
                f"Sampler output is {self.net.output_dim} wide, "
                f"expected N * D_z = {self.num_samples * self.latent_dim}"
            )
        self.net.check_params(self.params)

    @classmethod
    def create(
        cls,
        num_samples: int,
        latent_dim: int,
        context_dim: int,
        hidden_dim: int = 128,
        seed: int = 0,
    ) -> DsfModel:
        """Build a freshly initialized sampler."""
        net = DenseNet((context_dim, hidden_dim, num_samples * latent_dim))
        return cls(
            net=net,
            params=net.init_params(seed),
            num_samples=num_samples,
            latent_dim=latent_dim,
        )

    @property
    def context_dim(self) -> int:
        return self.net.input_dim

    def with_params(self, params: ParamStore) -> DsfModel:
        return replace(self, params=params)


@dataclass
class DsfTrainingTrace:
    """
    Per-epoch training record.

    Attributes:
        losses: Mean loss over the contexts that produced a finite loss
        instability_events: Contexts whose NLL loss or gradient was non-finite
        held_out_cardinality: Mean expected cardinality over held-out
            contexts, before training (index 0) and after each epoch
    """

    losses: list[float] = field(default_factory=list)
    instability_events: list[int] = field(default_factory=list)
    held_out_cardinality: list[float] = field(default_factory=list)

    @property
    def total_instability_events(self) -> int:
        return int(sum(self.instability_events))


def _context_vector(model: DsfModel, h: np.ndarray) -> np.ndarray:
    flat = np.asarray(h, dtype=np.float64).reshape(-1)
    if flat.size != model.context_dim:
        raise ConfigurationError(
            f"Context has {flat.size} values, the sampler expects {model.context_dim}"
        )
    return flat


def _check_pair(model: DsfModel, cvae: CvaeModel) -> None:
    if model.latent_dim != cvae.latent_dim or model.context_dim != cvae.context_dim:
        raise ConfigurationError("Sampler and cVAE disagree on D_z or context size")


def propose_latents(model: DsfModel, h: np.ndarray) -> np.ndarray:
    """
    Map a context to the sampler's N latent codes.

    Args:
        model: Sampler
        h: Past trajectory (H, D)

    Returns:
        (N, D_z) codes

    Raises:
        ConfigurationError: On shape mismatch
    """
    out = model.net.forward(model.params, _context_vector(model, h))
    return out.reshape(model.num_samples, model.latent_dim)


def ground_set(model: DsfModel, cvae: CvaeModel, h: np.ndarray) -> np.ndarray:
    """
    Decode the proposed latent codes under context h.

    Returns:
        (N, T, D) trajectories
    """
    _check_pair(model, cvae)
    return decode_batch(cvae, propose_latents(model, h), h)


def _quality_config(cfg: DsfTrainConfig, latent_dim: int, omega: float | None) -> QualityConfig:
    return QualityConfig(
        omega=cfg.omega if omega is None else omega, rho=cfg.rho, latent_dim=latent_dim
    )


def ground_kernel(
    model: DsfModel,
    cvae: CvaeModel,
    h: np.ndarray,
    cfg: DsfTrainConfig,
    omega: float | None = None,
    quality: QualityConfig | None = None,
) -> tuple[np.ndarray, np.ndarray, DppKernel]:
    """
    Latent codes, trajectories and DPP kernel of one context's ground set.

    Args:
        model: Sampler
        cvae: Trained cVAE
        h: Past trajectory
        cfg: Kernel settings (k, omega, rho, similarity mode)
        omega: Base quality override (test-time omega)
        quality: Full quality override (takes precedence over omega)

    Returns:
        Tuple of (latents (N, D_z), trajectories (N, T, D), kernel)
    """
    latents = propose_latents(model, h)
    _check_pair(model, cvae)
    trajectories = decode_batch(cvae, latents, h)
    qcfg = quality or _quality_config(cfg, model.latent_dim, omega)
    sim = similarity_matrix(trajectories, k=cfg.k, mode=cfg.similarity_mode)
    kernel = build_kernel(sim, quality_vector(latents, qcfg))
    return latents, trajectories, kernel


def dsf_loss(model: DsfModel, cvae: CvaeModel, h: np.ndarray, cfg: DsfTrainConfig) -> float:
    """
    Configured loss of one context's ground set.

    Returns:
        float; in nll mode +inf when the kernel is singular
    """
    _, _, kernel = ground_kernel(model, cvae, h, cfg)
    if cfg.loss_mode == NLL:
        return nll_loss(kernel, cfg.nll_diag_eps)
    return diversity_loss(kernel)


def expected_cardinality_of(
    model: DsfModel, cvae: CvaeModel, h: np.ndarray, cfg: DsfTrainConfig
) -> float:
    """Expected cardinality of the DPP over one context's ground set."""
    _, _, kernel = ground_kernel(model, cvae, h, cfg)
    return expected_cardinality(kernel)


def _similarity_backward(
    flat: np.ndarray, sim: np.ndarray, grad_sim: np.ndarray, k: float, mode: str
) -> np.ndarray:
    """Gradient of sum(grad_sim * S) with respect to the flattened trajectories."""
    if mode == GAUSSIAN:
        weights = grad_sim * sim
        return -4.0 * k * (weights.sum(axis=1)[:, np.newaxis] * flat - weights @ flat)

    norms = np.linalg.norm(flat, axis=1)
    unit = flat / norms[:, np.newaxis]
    radial = np.sum(grad_sim * (unit @ unit.T), axis=1)
    return 2.0 * (grad_sim @ unit - radial[:, np.newaxis] * unit) / norms[:, np.newaxis]


def _decoder_input_grad(
    cvae: CvaeModel, latents: np.ndarray, h: np.ndarray, grad_traj: np.ndarray
) -> np.ndarray:
    inputs = decoder_inputs(cvae, latents, h)
    _, grad_inputs = cvae.decoder.backward(
        cvae.decoder_params, inputs, grad_traj.reshape(latents.shape[0], -1)
    )
    return grad_inputs[:, : cvae.latent_dim]


def _sampler_backward(
    model: DsfModel, h: np.ndarray, grad_latents: np.ndarray
) -> ParamStore:
    grads, _ = model.net.backward(
        model.params, _context_vector(model, h), grad_latents.reshape(-1)
    )
    return grads


def dsf_loss_and_grad(
    model: DsfModel, cvae: CvaeModel, h: np.ndarray, cfg: DsfTrainConfig
) -> tuple[float, ParamStore]:
    """
    Loss of one context and its gradient with respect to the sampler only.

    The chain runs from the loss through L = Diag(r) S Diag(r) into the
    quality vector (latent branch) and the similarity matrix (trajectory
    branch), then through the frozen decoder into the latent codes and
    finally through the sampler network.

    Args:
        model: Sampler
        cvae: Trained cVAE (not modified)
        h: Past trajectory
        cfg: Loss settings

    Returns:
        Tuple of (loss, sampler gradients)

    Raises:
        NumericalError: If the loss or its gradient is non-finite
    """
    latents, trajectories, kernel = ground_kernel(model, cvae, h, cfg)

    if cfg.loss_mode == NLL:
        loss = nll_loss(kernel, cfg.nll_diag_eps)
        if not np.isfinite(loss):
            raise NumericalError("NLL loss is non-finite for this ground set")
        grad_kernel = nll_loss_grad(kernel, cfg.nll_diag_eps)
    else:
        loss = diversity_loss(kernel)
        if not np.isfinite(loss):
            raise NumericalError("Diversity loss is non-finite for this ground set")
        grad_kernel = diversity_loss_grad(kernel)

    sim, qual = kernel.similarity, kernel.quality
    grad_quality = 2.0 * np.sum(grad_kernel * sim * qual[np.newaxis, :], axis=1)
    grad_sim = grad_kernel * np.outer(qual, qual)
    np.fill_diagonal(grad_sim, 0.0)

    flat = trajectories.reshape(trajectories.shape[0], -1)
    grad_traj = _similarity_backward(flat, sim, grad_sim, cfg.k, cfg.similarity_mode)

    qcfg = _quality_config(cfg, model.latent_dim, None)
    grad_latents = grad_quality[:, np.newaxis] * quality_gradient(latents, qcfg)
    grad_latents = grad_latents + _decoder_input_grad(cvae, latents, h, grad_traj)

    return float(loss), _sampler_backward(model, h, grad_latents)


def mcl_loss(model: DsfModel, cvae: CvaeModel, example: DataExample) -> float:
    """Squared distance of the closest ground-set trajectory to the true future."""
    trajectories = ground_set(model, cvae, example.past)
    dists = np.sum((trajectories - example.future) ** 2, axis=(1, 2))
    return float(np.min(dists))


def mcl_loss_and_grad(
    model: DsfModel, cvae: CvaeModel, example: DataExample
) -> tuple[float, ParamStore]:
    """
    Multiple choice learning loss min_i ||x~_i - x||^2 and its sampler gradient.

    Only the closest sample (lowest index on ties) receives gradient.
    """
    h = example.past
    latents = propose_latents(model, h)
    _check_pair(model, cvae)
    trajectories = decode_batch(cvae, latents, h)
    residual = trajectories - example.future
    dists = np.sum(residual**2, axis=(1, 2))
    best = int(np.argmin(dists))

    grad_traj = np.zeros_like(trajectories)
    grad_traj[best] = 2.0 * residual[best]
    grad_latents = _decoder_input_grad(cvae, latents, h, grad_traj)
    return float(dists[best]), _sampler_backward(model, h, grad_latents)


StepFn = Callable[[DsfModel, DataExample], tuple[float, ParamStore]]


def _train_sampler(
    examples: Sequence[DataExample],
    cvae: CvaeModel,
    cfg: DsfTrainConfig,
    step_fn: StepFn,
    label: str,
    held_out: Sequence[DataExample] | None,
    count_instability: bool,
) -> tuple[DsfModel, DsfTrainingTrace]:
    if not examples:
        raise ConfigurationError("Dataset is empty")

    model = DsfModel.create(
        num_samples=cfg.num_samples,
        latent_dim=cvae.latent_dim,
        context_dim=cvae.context_dim,
        hidden_dim=cfg.hidden_dim,
        seed=cfg.seed,
    )
    state = AdamState.initial(model.params)
    trace = DsfTrainingTrace()

    def held_out_mean() -> float:
        values = [expected_cardinality_of(model, cvae, ex.past, cfg) for ex in held_out or ()]
        return float(np.mean(values)) if values else float("nan")

    if held_out:
        trace.held_out_cardinality.append(held_out_mean())

    logger.info(
        "Training %s sampler on %d contexts for %d epochs (N=%d)",
        label,
        len(examples),
        cfg.epochs,
        cfg.num_samples,
    )

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(examples))
        total, finite, events = 0.0, 0, 0
        for idx in order:
            try:
                loss, grads = step_fn(model, examples[int(idx)])
            except NumericalError as e:
                if not count_instability:
                    logger.error("%s training diverged in epoch %d: %s", label, epoch, e)
                    raise OptimizationError(
                        f"{label} training diverged in epoch {epoch}: {e}", epoch=epoch
                    ) from e
                events += 1
                logger.debug("Instability event in epoch %d, context %d: %s", epoch, idx, e)
                continue

            try:
                params, state = adam_step(model.params, grads, state, lr=cfg.lr)
            except OptimizationError as e:
                logger.error("%s training diverged in epoch %d: %s", label, epoch, e)
                raise OptimizationError(
                    f"{label} training diverged in epoch {epoch}: {e}",
                    layer_name=e.layer_name,
                    epoch=epoch,
                ) from e
            model = model.with_params(params)
            total += loss
            finite += 1

        trace.losses.append(total / finite if finite else float("nan"))
        trace.instability_events.append(events)
        if held_out:
            trace.held_out_cardinality.append(held_out_mean())
        if events:
            logger.warning("%s epoch %d: %d instability events", label, epoch, events)
        logger.info("%s epoch %d/%d: loss %.6f", label, epoch, cfg.epochs, trace.losses[-1])

    return model, trace


def train_dsf(
    examples: Sequence[DataExample],
    cvae: CvaeModel,
    cfg: DsfTrainConfig,
    held_out: Sequence[DataExample] | None = None,
) -> tuple[DsfModel, DsfTrainingTrace]:
    """
    Train the sampler with one Adam step per context; the cVAE stays frozen.

    Args:
        examples: Training examples (only their pasts are used)
        cvae: Trained cVAE
        cfg: Training settings
        held_out: Optional contexts whose mean expected cardinality is traced

    Returns:
        Tuple of (trained sampler, training trace)

    Raises:
        ConfigurationError: If the dataset is empty
        OptimizationError: On a non-finite loss or gradient in cardinality
            mode (nll mode counts such contexts as instability events)
    """
    label = f"DSF-{cfg.loss_mode}-{cfg.similarity_mode}"
    return _train_sampler(
        examples,
        cvae,
        cfg,
        lambda model, ex: dsf_loss_and_grad(model, cvae, ex.past, cfg),
        label,
        held_out,
        count_instability=cfg.loss_mode == NLL,
    )


def train_mcl(
    examples: Sequence[DataExample],
    cvae: CvaeModel,
    cfg: DsfTrainConfig,
) -> tuple[DsfModel, DsfTrainingTrace]:
    """Train the multiple choice learning baseline on the sampler architecture."""
    return _train_sampler(
        examples,
        cvae,
        cfg,
        lambda model, ex: mcl_loss_and_grad(model, cvae, ex),
        "MCL",
        None,
        count_instability=False,
    )


def select_diverse(
    model: DsfModel,
    cvae: CvaeModel,
    h: np.ndarray,
    cfg: DsfTrainConfig,
    omega_test: float = 1.0,
) -> tuple[list[int], np.ndarray]:
    """
    Greedy MAP selection over one context's ground set.

    Returns:
        Tuple of (selected indices in selection order, full ground set)
    """
    _, trajectories, kernel = ground_kernel(model, cvae, h, cfg, omega=omega_test)
    selected, _ = greedy_map_with_gains(kernel, max_items=model.num_samples)
    return selected, trajectories


def forecast_diverse(
    model: DsfModel,
    cvae: CvaeModel,
    h: np.ndarray,
    cfg: DsfTrainConfig,
    omega_test: float = 1.0,
) -> np.ndarray:
    """
    DSF inference: decode the ground set and keep its greedy MAP subset.

    Args:
        model: Trained sampler
        cvae: Trained cVAE
        h: Past trajectory
        cfg: Kernel settings (k, rho, similarity mode)
        omega_test: Test-time base quality; larger values keep more samples

    Returns:
        (|Y_f|, T, D) trajectories in selection order, 1 <= |Y_f| <= N
    """
    selected, trajectories = select_diverse(model, cvae, h, cfg, omega_test)
    return trajectories[selected]


def select_ldpp_latents(
    cvae: CvaeModel, pool: int, n: int, cfg: DsfTrainConfig, seed: int
) -> np.ndarray:
    """
    Draw `pool` prior codes and keep a fixed-budget greedy MAP subset of them.

    The kernel uses Gaussian similarity on latent distances (scale
    cfg.ldpp_k) and the latent quality vector.

    Returns:
        (min(n, pool), D_z) codes in selection order
    """
    ensure_valid(validate_positive_int(pool, "pool"))
    ensure_valid(validate_positive_int(n, "n"))
    latents = np.random.default_rng(seed).standard_normal((pool, cvae.latent_dim))
    sim = similarity_matrix(latents, k=cfg.ldpp_k, mode=GAUSSIAN)
    qual = quality_vector(latents, _quality_config(cfg, cvae.latent_dim, None))
    selected, _ = greedy_map_with_gains(
        build_kernel(sim, qual), max_items=min(n, pool), stop_on_negative_gain=False
    )
    return latents[selected]


def forecast_cvae_ldpp(
    cvae: CvaeModel,
    h: np.ndarray,
    pool: int,
    n: int,
    cfg: DsfTrainConfig,
    seed: int,
) -> np.ndarray:
    """
    Latent-DPP baseline: DPP MAP over prior codes, then decode.

    Returns:
        (min(n, pool), T, D) trajectories
    """
    return decode_batch(cvae, select_ldpp_latents(cvae, pool, n, cfg, seed), h)


def save_dsf(
    path: Path,
    model: DsfModel,
    cfg: DsfTrainConfig,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write a sampler checkpoint with its training settings echoed in the header."""
    metadata = {
        "kind": "dsf",
        "num_samples": model.num_samples,
        "latent_dim": model.latent_dim,
        "config": asdict(cfg),
        **(extra or {}),
    }
    return save_checkpoint(path, {"sampler": (model.net, model.params)}, metadata)


def load_dsf(path: Path) -> tuple[DsfModel, DsfTrainConfig, dict[str, Any]]:
    """
    Read a sampler checkpoint.

    Returns:
        Tuple of (sampler, training settings, full metadata)

    Raises:
        ConfigurationError: If the file is missing or not a sampler checkpoint
    """
    networks, meta = load_checkpoint(path)
    if meta.get("kind") != "dsf" or "sampler" not in networks:
        raise ConfigurationError(f"{path} is not a sampler checkpoint")
    net, params = networks["sampler"]
    try:
        cfg = DsfTrainConfig(**meta["config"])
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"{path} has a malformed config header: {e}") from e
    model = DsfModel(
        net=net,
        params=params,
        num_samples=int(meta["num_samples"]),
        latent_dim=int(meta["latent_dim"]),
    )
    return model, cfg, meta

