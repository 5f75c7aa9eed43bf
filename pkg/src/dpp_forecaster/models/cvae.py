"""
Conditional VAE over future trajectories for dpp-forecaster.

The encoder maps (future x, past h) to the mean and log-scale of a diagonal
Gaussian posterior; the decoder maps (latent z, past h) back to a future
trajectory. Training minimizes the negated evidence lower bound

    (1/V) sum_v ||x~_v - x||^2 - beta (1/D_z) sum_j (1 + 2 log s_j - m_j^2 - s_j^2)

with reparameterized posterior samples. Sampling latent codes from the prior
and decoding them is the plain cVAE forecasting baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from dpp_forecaster.errors import ConfigurationError, OptimizationError
from dpp_forecaster.models.checkpoint import load_checkpoint, save_checkpoint
from dpp_forecaster.models.network import AdamState, DenseNet, ParamStore, adam_step
from dpp_forecaster.services.synthdata import DataExample, stack_examples
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_positive,
    validate_positive_int,
)

logger = get_logger(__name__)

LOG_SIGMA_MIN = -10.0
LOG_SIGMA_MAX = 10.0


@dataclass(frozen=True)
class CvaeConfig:
    """
    cVAE training settings.

    Attributes:
        latent_dim: D_z
        beta: KL weight
        epochs: Passes over the training set
        batch_size: Examples per Adam step
        lr: Adam learning rate
        num_posterior_samples: V, posterior samples per example
        hidden_dim: Width of the single hidden layer of encoder and decoder
        seed: Seed for initialization, shuffling and posterior noise
    """

    latent_dim: int = 2
    beta: float = 0.1
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-4
    num_posterior_samples: int = 1
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        ensure_valid(validate_positive_int(self.latent_dim, "latent_dim"))
        ensure_valid(validate_positive(self.beta, "beta"))
        ensure_valid(validate_positive_int(self.epochs, "epochs"))
        ensure_valid(validate_positive_int(self.batch_size, "batch_size"))
        ensure_valid(validate_positive(self.lr, "lr"))
        ensure_valid(
            validate_positive_int(self.num_posterior_samples, "num_posterior_samples")
        )
        ensure_valid(validate_positive_int(self.hidden_dim, "hidden_dim"))


@dataclass(frozen=True, eq=False)
class Posterior:
    """
    Diagonal Gaussian posterior q(z | x, h).

    Attributes:
        mu: Mean, length D_z
        log_sigma: Log standard deviation, clamped to [-10, 10]
    """

    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


@dataclass(frozen=True, eq=False)
class CvaeModel:
    """
    Encoder/decoder pair with its dimensions.

    Encoder input is [flattened x, flattened h] and its output is
    [mu, raw log sigma]; decoder input is [z, flattened h] and its output is
    the flattened future.
    """

    encoder: DenseNet
    encoder_params: ParamStore
    decoder: DenseNet
    decoder_params: ParamStore
    latent_dim: int
    beta: float
    past_steps: int
    future_steps: int
    dims: int

    def __post_init__(self) -> None:
        if self.encoder.input_dim != self.future_dim + self.context_dim:
            raise ConfigurationError("Encoder input must be T*D + H*D wide")
        if self.encoder.output_dim != 2 * self.latent_dim:
            raise ConfigurationError("Encoder output must be 2 * D_z wide")
        if self.decoder.input_dim != self.latent_dim + self.context_dim:
            raise ConfigurationError("Decoder input must be D_z + H*D wide")
        if self.decoder.output_dim != self.future_dim:
            raise ConfigurationError("Decoder output must be T*D wide")
        self.encoder.check_params(self.encoder_params)
        self.decoder.check_params(self.decoder_params)

    @classmethod
    def create(
        cls,
        latent_dim: int = 2,
        beta: float = 0.1,
        past_steps: int = 2,
        future_steps: int = 3,
        dims: int = 2,
        hidden_dim: int = 128,
        seed: int = 0,
    ) -> CvaeModel:
        """Build a freshly initialized model."""
        context_dim = past_steps * dims
        future_dim = future_steps * dims
        encoder = DenseNet((future_dim + context_dim, hidden_dim, 2 * latent_dim))
        decoder = DenseNet((latent_dim + context_dim, hidden_dim, future_dim))
        return cls(
            encoder=encoder,
            encoder_params=encoder.init_params(seed),
            decoder=decoder,
            decoder_params=decoder.init_params(seed + 1),
            latent_dim=latent_dim,
            beta=beta,
            past_steps=past_steps,
            future_steps=future_steps,
            dims=dims,
        )

    @property
    def context_dim(self) -> int:
        return self.past_steps * self.dims

    @property
    def future_dim(self) -> int:
        return self.future_steps * self.dims

    def with_params(
        self,
        encoder_params: ParamStore | None = None,
        decoder_params: ParamStore | None = None,
    ) -> CvaeModel:
        return replace(
            self,
            encoder_params=encoder_params or self.encoder_params,
            decoder_params=decoder_params or self.decoder_params,
        )


def _flat(arr: np.ndarray, width: int, what: str) -> np.ndarray:
    flat = np.asarray(arr, dtype=np.float64).reshape(-1)
    if flat.size != width:
        raise ConfigurationError(f"{what} has {flat.size} values, expected {width}")
    return flat


def _rows(arr: np.ndarray, width: int, what: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.size % width != 0:
        raise ConfigurationError(f"{what} of shape {a.shape} is not a stack of {width}-vectors")
    return a.reshape(-1, width)


def _split_head(model: CvaeModel, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = raw[..., : model.latent_dim]
    log_sigma = np.clip(raw[..., model.latent_dim :], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return mu, log_sigma


def encode(model: CvaeModel, x: np.ndarray, h: np.ndarray) -> Posterior:
    """
    Posterior parameters for one example.

    Args:
        model: cVAE
        x: Future trajectory (T, D)
        h: Past trajectory (H, D)

    Returns:
        Posterior

    Raises:
        ConfigurationError: On shape mismatch
    """
    inputs = np.concatenate(
        [_flat(x, model.future_dim, "Future"), _flat(h, model.context_dim, "Past")]
    )
    raw = model.encoder.forward(model.encoder_params, inputs)
    mu, log_sigma = _split_head(model, raw)
    return Posterior(mu=mu, log_sigma=log_sigma)


def reparameterize(post: Posterior, noise: np.ndarray) -> np.ndarray:
    """z = mu + sigma * noise; noise may be (D_z,) or stacked (V, D_z)."""
    return post.mu + post.sigma * np.asarray(noise, dtype=np.float64)


def kl_divergence(post: Posterior) -> float:
    """Closed-form KL(q || N(0, I)) = -1/2 sum(1 + 2 log s - m^2 - s^2)."""
    terms = 1.0 + 2.0 * post.log_sigma - post.mu**2 - post.sigma**2
    return float(-0.5 * np.sum(terms))


def decoder_inputs(model: CvaeModel, latents: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Stack decoder inputs [z_i, h] for a set of latent codes sharing context h.

    Args:
        model: cVAE
        latents: (N, D_z) codes
        h: Past trajectory (H, D)

    Returns:
        (N, D_z + H*D) array
    """
    codes = _rows(latents, model.latent_dim, "Latents")
    context = _flat(h, model.context_dim, "Past")
    return np.hstack([codes, np.broadcast_to(context, (codes.shape[0], context.size))])


def decode_batch(model: CvaeModel, latents: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Decode N latent codes under one context.

    Returns:
        (N, T, D) trajectories
    """
    inputs = decoder_inputs(model, latents, h)
    out = model.decoder.forward(model.decoder_params, inputs)
    return out.reshape(-1, model.future_steps, model.dims)


def decode(model: CvaeModel, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Decode one latent code into a future trajectory.

    Args:
        model: cVAE
        z: Latent code (D_z,)
        h: Past trajectory (H, D)

    Returns:
        Trajectory (T, D)

    Raises:
        ConfigurationError: On shape mismatch
    """
    code = _flat(z, model.latent_dim, "Latent")
    return decode_batch(model, code[np.newaxis, :], h)[0]


def elbo_loss_batch(
    model: CvaeModel,
    futures: np.ndarray,
    contexts: np.ndarray,
    noises: np.ndarray,
) -> tuple[float, ParamStore, ParamStore]:
    """
    Mean negated ELBO over a mini-batch and its exact gradients.

    Args:
        model: cVAE
        futures: (B, T, D) or (B, T*D) ground-truth futures
        contexts: (B, H, D) or (B, H*D) past trajectories
        noises: (B, V, D_z) standard-normal draws

    Returns:
        Tuple of (loss, encoder gradients, decoder gradients)

    Raises:
        ConfigurationError: On shape mismatch
        OptimizationError: If the loss is non-finite
    """
    x = _rows(futures, model.future_dim, "Futures")
    hc = _rows(contexts, model.context_dim, "Contexts")
    batch = x.shape[0]
    eps = np.asarray(noises, dtype=np.float64)
    if hc.shape[0] != batch or eps.ndim != 3 or eps.shape[0] != batch:
        raise ConfigurationError("Futures, contexts and noises disagree on batch size")
    if eps.shape[2] != model.latent_dim or eps.shape[1] < 1:
        raise ConfigurationError(f"Noises must be (B, V, {model.latent_dim}), got {eps.shape}")
    num_v = eps.shape[1]
    dz = model.latent_dim

    enc_in = np.hstack([x, hc])
    raw = model.encoder.forward(model.encoder_params, enc_in)
    mu, log_sigma = _split_head(model, raw)
    sigma = np.exp(log_sigma)

    z = mu[:, np.newaxis, :] + sigma[:, np.newaxis, :] * eps
    dec_in = np.hstack(
        [z.reshape(batch * num_v, dz), np.repeat(hc, num_v, axis=0)]
    )
    recon = model.decoder.forward(model.decoder_params, dec_in).reshape(batch, num_v, -1)
    residual = recon - x[:, np.newaxis, :]

    recon_term = np.sum(residual**2, axis=(1, 2)) / num_v
    kl_terms = 1.0 + 2.0 * log_sigma - mu**2 - sigma**2
    kl_term = -model.beta / dz * np.sum(kl_terms, axis=1)
    loss = float(np.mean(recon_term + kl_term))
    if not np.isfinite(loss):
        raise OptimizationError("cVAE loss is non-finite")

    grad_recon = (2.0 / (num_v * batch)) * residual.reshape(batch * num_v, -1)
    dec_grads, grad_dec_in = model.decoder.backward(model.decoder_params, dec_in, grad_recon)
    grad_z = grad_dec_in[:, :dz].reshape(batch, num_v, dz)

    kl_scale = model.beta / (dz * batch)
    grad_mu = grad_z.sum(axis=1) + kl_scale * 2.0 * mu
    grad_log_sigma = np.sum(grad_z * eps, axis=1) * sigma - kl_scale * (2.0 - 2.0 * sigma**2)

    raw_log_sigma = raw[:, dz:]
    inside_clamp = (raw_log_sigma >= LOG_SIGMA_MIN) & (raw_log_sigma <= LOG_SIGMA_MAX)
    grad_raw = np.hstack([grad_mu, grad_log_sigma * inside_clamp])
    enc_grads, _ = model.encoder.backward(model.encoder_params, enc_in, grad_raw)

    return loss, enc_grads, dec_grads


def elbo_loss(
    model: CvaeModel, example: DataExample, noises: np.ndarray
) -> tuple[float, ParamStore, ParamStore]:
    """
    Negated ELBO of one example with V posterior samples.

    Args:
        model: cVAE
        example: Training example
        noises: (V, D_z) standard-normal draws, V >= 1

    Returns:
        Tuple of (loss, encoder gradients, decoder gradients)
    """
    eps = np.asarray(noises, dtype=np.float64)
    if eps.ndim != 2:
        raise ConfigurationError(f"Noises must be (V, D_z), got {eps.shape}")
    return elbo_loss_batch(
        model, example.future[np.newaxis], example.past[np.newaxis], eps[np.newaxis]
    )


def train_cvae(
    examples: list[DataExample],
    config: CvaeConfig,
    log_every: int = 50,
) -> tuple[CvaeModel, list[float]]:
    """
    Train encoder and decoder jointly with Adam on mini-batches.

    Each epoch reshuffles the data with a generator seeded by (seed, epoch),
    which also draws the posterior noise.

    Args:
        examples: Training examples (non-empty)
        config: Training settings
        log_every: Log a progress line every this many epochs

    Returns:
        Tuple of (trained model, per-epoch mean loss)

    Raises:
        ConfigurationError: If the dataset is empty
        OptimizationError: If training diverges (message names the epoch)

    Example:
        model, trace = train_cvae(train_examples, CvaeConfig(epochs=50))
    """
    contexts, futures = stack_examples(examples)
    first = examples[0]
    model = CvaeModel.create(
        latent_dim=config.latent_dim,
        beta=config.beta,
        past_steps=first.past.shape[0],
        future_steps=first.future.shape[0],
        dims=first.future.shape[1],
        hidden_dim=config.hidden_dim,
        seed=config.seed,
    )
    enc_state = AdamState.initial(model.encoder_params)
    dec_state = AdamState.initial(model.decoder_params)
    num_examples = len(examples)

    logger.info(
        "Training cVAE on %d examples for %d epochs (D_z=%d, beta=%s)",
        num_examples,
        config.epochs,
        config.latent_dim,
        config.beta,
    )

    trace: list[float] = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(num_examples)
        total = 0.0
        for start in range(0, num_examples, config.batch_size):
            idx = order[start : start + config.batch_size]
            noises = rng.standard_normal(
                (idx.size, config.num_posterior_samples, config.latent_dim)
            )
            try:
                loss, enc_grads, dec_grads = elbo_loss_batch(
                    model, futures[idx], contexts[idx], noises
                )
                enc_params, enc_state = adam_step(
                    model.encoder_params, enc_grads, enc_state, lr=config.lr
                )
                dec_params, dec_state = adam_step(
                    model.decoder_params, dec_grads, dec_state, lr=config.lr
                )
            except OptimizationError as e:
                logger.error("cVAE training diverged in epoch %d: %s", epoch, e)
                raise OptimizationError(
                    f"cVAE training diverged in epoch {epoch}: {e}",
                    layer_name=e.layer_name,
                    epoch=epoch,
                ) from e
            model = model.with_params(enc_params, dec_params)
            total += loss * idx.size

        trace.append(total / num_examples)
        if epoch == 1 or epoch % log_every == 0 or epoch == config.epochs:
            logger.info("cVAE epoch %d/%d: loss %.6f", epoch, config.epochs, trace[-1])

    return model, trace


def forecast_random(model: CvaeModel, h: np.ndarray, n: int, seed: int) -> np.ndarray:
    """
    cVAE baseline: decode n latent codes drawn from the prior.

    Args:
        model: Trained cVAE
        h: Past trajectory (H, D)
        n: Number of samples (0 gives an empty set)
        seed: Seed for the prior draws

    Returns:
        (n, T, D) trajectories
    """
    if n == 0:
        return np.empty((0, model.future_steps, model.dims))
    latents = np.random.default_rng(seed).standard_normal((n, model.latent_dim))
    return decode_batch(model, latents, h)


def cvae_metadata(model: CvaeModel, seed: int | None = None) -> dict[str, Any]:
    """Checkpoint header for a cVAE."""
    return {
        "kind": "cvae",
        "latent_dim": model.latent_dim,
        "beta": model.beta,
        "past_steps": model.past_steps,
        "future_steps": model.future_steps,
        "dims": model.dims,
        "seed": seed,
    }


def save_cvae(path: Path, model: CvaeModel, seed: int | None = None) -> Path:
    """Write a cVAE checkpoint."""
    return save_checkpoint(
        path,
        {
            "encoder": (model.encoder, model.encoder_params),
            "decoder": (model.decoder, model.decoder_params),
        },
        cvae_metadata(model, seed),
    )


def load_cvae(path: Path) -> CvaeModel:
    """
    Read a cVAE checkpoint.

    Raises:
        ConfigurationError: If the file is missing or not a cVAE checkpoint
    """
    networks, meta = load_checkpoint(path)
    if meta.get("kind") != "cvae" or not {"encoder", "decoder"} <= networks.keys():
        raise ConfigurationError(f"{path} is not a cVAE checkpoint")
    encoder, encoder_params = networks["encoder"]
    decoder, decoder_params = networks["decoder"]
    return CvaeModel(
        encoder=encoder,
        encoder_params=encoder_params,
        decoder=decoder,
        decoder_params=decoder_params,
        latent_dim=int(meta["latent_dim"]),
        beta=float(meta["beta"]),
        past_steps=int(meta["past_steps"]),
        future_steps=int(meta["future_steps"]),
        dims=int(meta["dims"]),
    )
