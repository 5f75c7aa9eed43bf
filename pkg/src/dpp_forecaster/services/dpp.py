"""
Determinantal point process service for dpp-forecaster.

Builds quality/diversity-decomposed DPP kernels over sets of trajectories
and provides the expected-cardinality diversity loss with its analytic
gradient, the DPP log-likelihood, the NLL loss variant and greedy MAP
inference.

Kernels are plain float64 arrays; DppKernel bundles a kernel with the
similarity matrix and quality vector it was assembled from.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from dpp_forecaster.errors import ConfigurationError, DomainError, NumericalError
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_non_negative,
    validate_percentile,
    validate_positive,
    validate_positive_int,
)

logger = get_logger(__name__)

GAUSSIAN = "gaussian"
COSINE = "cosine"
SIMILARITY_MODES = (GAUSSIAN, COSINE)

# Eigenvalues in [-EIGEN_CLIP_TOL * ||L||, 0) are rounding noise and read as 0
EIGEN_CLIP_TOL = 1e-9
SYMMETRY_TOL = 1e-10
# A Cholesky pivot^2 at or below this fraction of its diagonal entry marks the
# matrix as numerically singular (log det = -inf)
SINGULAR_RTOL = float(np.sqrt(np.finfo(np.float64).eps))


@dataclass(frozen=True)
class DppKernel:
    """
    DPP kernel L = Diag(r) . S . Diag(r).

    Attributes:
        similarity: N x N similarity matrix S
        quality: Length-N quality vector r
        matrix: N x N kernel L
    """

    similarity: np.ndarray
    quality: np.ndarray
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return int(self.quality.shape[0])


def sphere_radius(rho: float, latent_dim: int) -> float:
    """
    Radius of the origin-centred ball holding rho percent of N(0, I) mass.

    R^2 is the chi-squared percent point function at rho/100 with
    `latent_dim` degrees of freedom, found by bisection on the regularized
    lower incomplete gamma function P(D_z/2, x/2).

    Args:
        rho: Percentile in (0, 100)
        latent_dim: Latent dimension D_z

    Returns:
        float: Radius R

    Example:
        sphere_radius(90.0, 2) ** 2
        # Returns: 4.605170185988... (= 2 ln 10)
    """
    ensure_valid(validate_percentile(rho))
    ensure_valid(validate_positive_int(latent_dim, "latent_dim"))

    target = rho / 100.0
    shape = latent_dim / 2.0

    def excess(x: float) -> float:
        return float(special.gammainc(shape, x / 2.0)) - target

    upper = float(max(1.0, latent_dim))
    while excess(upper) < 0.0:
        upper *= 2.0

    radius_sq = optimize.bisect(excess, 0.0, upper, xtol=1e-14, maxiter=200)
    return float(np.sqrt(radius_sq))


@dataclass(frozen=True)
class QualityConfig:
    """
    Latent-space quality settings.

    Attributes:
        omega: Base quality of samples inside the sphere
        rho: Percentile of prior mass inside the sphere
        latent_dim: Latent dimension D_z
        radius: Sphere radius R, derived from rho and latent_dim
    """

    omega: float = 1.0
    rho: float = 90.0
    latent_dim: int = 2
    radius: float = field(init=False)

    def __post_init__(self) -> None:
        ensure_valid(validate_positive(self.omega, "omega"))
        object.__setattr__(self, "radius", sphere_radius(self.rho, self.latent_dim))


def _flatten_set(items: Sequence[np.ndarray] | np.ndarray, what: str) -> np.ndarray:
    try:
        arr = np.asarray(items, dtype=np.float64)
    except ValueError as e:
        raise ConfigurationError(f"All {what} must share one shape: {e}") from e
    if arr.ndim < 1 or arr.shape[0] < 1:
        raise ConfigurationError(f"Need at least one {what[:-1]}")
    return arr.reshape(arr.shape[0], -1)


def similarity_matrix(
    trajectories: Sequence[np.ndarray] | np.ndarray,
    k: float = 1.0,
    mode: str = GAUSSIAN,
) -> np.ndarray:
    """
    Pairwise similarity of trajectories.

    Gaussian mode: S_ij = exp(-k * ||x_i - x_j||^2) over flattened T*D vectors.
    Cosine mode: S_ij = cosine of the angle between flattened trajectories.
    The diagonal is exactly 1 in both modes.

    Args:
        trajectories: N arrays of identical shape (T, D), or an (N, T, D) array
        k: Scale factor (Gaussian mode)
        mode: "gaussian" or "cosine"

    Returns:
        N x N symmetric matrix

    Raises:
        ConfigurationError: On inconsistent shapes, empty input or bad options
        DomainError: In cosine mode, if a trajectory has zero norm
    """
    if mode not in SIMILARITY_MODES:
        raise ConfigurationError(f"Unknown similarity mode {mode!r}")
    ensure_valid(validate_positive(k, "k"))
    flat = _flatten_set(trajectories, "trajectories")

    if mode == GAUSSIAN:
        diff = flat[:, np.newaxis, :] - flat[np.newaxis, :, :]
        sq_dist = np.einsum("ijk,ijk->ij", diff, diff)
        sim = np.exp(-k * sq_dist)
    else:
        norms = np.linalg.norm(flat, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("Cosine similarity is undefined for a zero trajectory")
        unit = flat / norms[:, np.newaxis]
        sim = unit @ unit.T
        sim = np.clip(0.5 * (sim + sim.T), -1.0, 1.0)

    np.fill_diagonal(sim, 1.0)
    return sim


def quality_vector(
    latents: Sequence[np.ndarray] | np.ndarray, cfg: QualityConfig
) -> np.ndarray:
    """
    Per-sample quality from latent codes.

    r_i = omega if ||z_i|| <= R, else omega * exp(-z_i.z_i + R^2).

    Args:
        latents: N latent codes of length D_z
        cfg: Quality settings

    Returns:
        Length-N positive vector
    """
    codes = _flatten_set(latents, "latents")
    sq_norm = np.einsum("ij,ij->i", codes, codes)
    radius_sq = cfg.radius**2
    outside = sq_norm > radius_sq
    decay = np.exp(np.where(outside, radius_sq - sq_norm, 0.0))
    return cfg.omega * decay


def quality_gradient(
    latents: Sequence[np.ndarray] | np.ndarray, cfg: QualityConfig
) -> np.ndarray:
    """
    Derivative of each r_i with respect to its own code z_i.

    Zero inside the sphere, -2 z_i r_i outside.

    Returns:
        Array shaped (N, D_z)
    """
    codes = _flatten_set(latents, "latents")
    quality = quality_vector(codes, cfg)
    outside = np.einsum("ij,ij->i", codes, codes) > cfg.radius**2
    return np.where(outside[:, np.newaxis], -2.0 * codes * quality[:, np.newaxis], 0.0)


def build_kernel(similarity: np.ndarray, quality: np.ndarray) -> DppKernel:
    """
    Assemble L = Diag(r) . S . Diag(r).

    Args:
        similarity: N x N similarity matrix
        quality: Length-N quality vector

    Returns:
        DppKernel

    Raises:
        ConfigurationError: On dimension mismatch
    """
    sim = np.asarray(similarity, dtype=np.float64)
    qual = np.asarray(quality, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ConfigurationError(f"Similarity must be square, got {sim.shape}")
    if qual.shape != (sim.shape[0],):
        raise ConfigurationError(
            f"Quality has shape {qual.shape}, expected ({sim.shape[0]},)"
        )

    kernel = qual[:, np.newaxis] * sim * qual[np.newaxis, :]
    kernel = 0.5 * (kernel + kernel.T)
    return DppKernel(similarity=sim, quality=qual, matrix=kernel)


def _as_symmetric(kernel: np.ndarray | DppKernel) -> np.ndarray:
    mat = kernel.matrix if isinstance(kernel, DppKernel) else np.asarray(kernel)
    mat = mat.astype(np.float64, copy=False)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"Kernel must be square, got {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if not np.allclose(mat, mat.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise ConfigurationError("Kernel is not symmetric")
    return mat


def _clipped_eigenvalues(mat: np.ndarray) -> np.ndarray:
    eig = np.linalg.eigvalsh(mat)
    tol = EIGEN_CLIP_TOL * float(np.max(np.abs(eig)))
    return np.where((eig < 0.0) & (eig >= -tol), 0.0, eig)


def expected_cardinality(kernel: np.ndarray | DppKernel) -> float:
    """
    Expected size of a DPP sample: sum_n lambda_n / (lambda_n + 1).

    Args:
        kernel: Symmetric PSD kernel (array or DppKernel)

    Returns:
        float in [0, N]

    Raises:
        ConfigurationError: If the kernel is not symmetric

    Example:
        expected_cardinality(np.eye(2))
        # Returns: 1.0
    """
    mat = _as_symmetric(kernel)
    if mat.size == 0:
        return 0.0
    eig = _clipped_eigenvalues(mat)
    return float(np.sum(eig / (eig + 1.0)))


def expected_cardinality_trace(kernel: np.ndarray | DppKernel) -> float:
    """Expected cardinality via the trace form tr(I - (L + I)^-1)."""
    mat = _as_symmetric(kernel)
    n = mat.shape[0]
    if n == 0:
        return 0.0
    inverse = linalg.inv(mat + np.eye(n))
    return float(n - np.trace(inverse))


def diversity_loss(kernel: np.ndarray | DppKernel) -> float:
    """
    Diversity loss: the negative expected cardinality.

    Finite for every finite kernel, including kernels with duplicate rows.
    """
    return -expected_cardinality(kernel)


def diversity_loss_grad(kernel: np.ndarray | DppKernel) -> np.ndarray:
    """
    Gradient of the diversity loss with respect to L: -(L + I)^-2.

    Args:
        kernel: Symmetric kernel

    Returns:
        Symmetric N x N matrix

    Raises:
        ConfigurationError: If the kernel is not symmetric
        NumericalError: If the result is non-finite
    """
    mat = _as_symmetric(kernel)
    inverse = linalg.inv(mat + np.eye(mat.shape[0]))
    grad = -(inverse @ inverse)
    grad = 0.5 * (grad + grad.T)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Diversity loss gradient is non-finite")
    return grad


def log_det(matrix: np.ndarray) -> float:
    """
    Log-determinant of a symmetric positive (semi)definite matrix.

    Uses a Cholesky factorization. Returns -inf when the factorization fails
    or a pivot is numerically zero (pivot^2 <= SINGULAR_RTOL * diagonal).

    Args:
        matrix: Symmetric matrix

    Returns:
        float, possibly -inf

    Raises:
        NumericalError: If the matrix contains non-finite values
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.shape[0] == 0:
        return 0.0
    if not np.all(np.isfinite(mat)):
        raise NumericalError("Cannot take the log-determinant of a non-finite matrix")
    try:
        chol = linalg.cholesky(mat, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return float("-inf")

    pivots = np.diag(chol)
    if np.any(pivots**2 <= SINGULAR_RTOL * np.abs(np.diag(mat))):
        return float("-inf")
    return float(2.0 * np.sum(np.log(pivots)))


def exact_log_det(matrix: np.ndarray) -> float:
    """
    Log-determinant without a singularity cutoff.

    Returns -inf only when the determinant is zero or negative.

    Raises:
        NumericalError: If the matrix contains non-finite values
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.shape[0] == 0:
        return 0.0
    if not np.all(np.isfinite(mat)):
        raise NumericalError("Cannot take the log-determinant of a non-finite matrix")
    sign, logabsdet = np.linalg.slogdet(mat)
    if sign <= 0:
        return float("-inf")
    return float(logabsdet)


def dpp_log_likelihood(kernel: np.ndarray | DppKernel, subset: Sequence[int]) -> float:
    """
    Log-probability of a subset: log det(L_Y) - log det(L + I).

    Both determinants are exact (LU based). Only a zero or negative
    determinant gives -inf; the relative pivot cutoff of log_det applies to
    the losses and greedy inference, not to likelihoods.

    Args:
        kernel: Symmetric PSD kernel
        subset: Distinct item indices (may be empty)

    Returns:
        float; -inf when det(L_Y) <= 0

    Raises:
        ConfigurationError: On invalid or repeated indices

    Example:
        dpp_log_likelihood(np.eye(2), [0])
        # Returns: -1.3862943611198906 (= -log 4)
    """
    mat = _as_symmetric(kernel)
    n = mat.shape[0]
    indices = [int(i) for i in subset]
    if len(set(indices)) != len(indices):
        raise ConfigurationError(f"Subset has repeated indices: {indices}")
    if any(i < 0 or i >= n for i in indices):
        raise ConfigurationError(f"Subset indices out of range for N={n}: {indices}")

    normalizer = exact_log_det(mat + np.eye(n))
    if not indices:
        return -normalizer
    return exact_log_det(mat[np.ix_(indices, indices)]) - normalizer


def nll_loss(kernel: np.ndarray | DppKernel, diag_eps: float = 0.0) -> float:
    """
    Negative log-likelihood of the whole ground set.

    -log det(L + diag_eps I) + log det(L + I). Non-finite (+inf) when
    L + diag_eps I is singular, which happens for duplicate rows with
    diag_eps = 0; callers must handle that return value.

    Args:
        kernel: Symmetric kernel
        diag_eps: Non-negative diagonal offset

    Returns:
        float, possibly +inf
    """
    ensure_valid(validate_non_negative(diag_eps, "diag_eps"))
    mat = _as_symmetric(kernel)
    eye = np.eye(mat.shape[0])
    return -log_det(mat + diag_eps * eye) + log_det(mat + eye)


def nll_loss_grad(kernel: np.ndarray | DppKernel, diag_eps: float = 0.0) -> np.ndarray:
    """
    Gradient of nll_loss with respect to L: -(L + eps I)^-1 + (L + I)^-1.

    Raises:
        NumericalError: If L + diag_eps I is singular
    """
    ensure_valid(validate_non_negative(diag_eps, "diag_eps"))
    mat = _as_symmetric(kernel)
    eye = np.eye(mat.shape[0])
    shifted = mat + diag_eps * eye
    if log_det(shifted) == float("-inf"):
        raise NumericalError("NLL gradient undefined: kernel is singular")
    grad = -linalg.inv(shifted) + linalg.inv(mat + eye)
    grad = 0.5 * (grad + grad.T)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("NLL gradient is non-finite")
    return grad


def greedy_map_with_gains(
    kernel: np.ndarray | DppKernel,
    max_items: int | None = None,
    stop_on_negative_gain: bool = True,
) -> tuple[list[int], list[float]]:
    """
    Greedy DPP MAP inference with its marginal-gain sequence.

    Each step adds the unselected item x maximizing log det(L_{Y u {x}}).
    The gain log det(L_{Y u {x}}) - log det(L_Y) is the log of the Schur
    complement of L_Y in L_{Y u {x}}, computed from a Cholesky factor of L_Y
    refactorized at every step. Ties go to the lowest index.

    Stopping:
    - the first item is always selected (a forecast is never empty)
    - afterwards, stop when the best gain is negative (if
      stop_on_negative_gain), when every extension is numerically singular,
      or when max_items items are selected

    Args:
        kernel: Symmetric PSD kernel
        max_items: Selection cap (default: N)
        stop_on_negative_gain: False gives a fixed-budget selection

    Returns:
        Tuple of (selected indices in selection order, gains)
    """
    mat = _as_symmetric(kernel)
    n = mat.shape[0]
    budget = n if max_items is None else min(int(max_items), n)
    if max_items is not None:
        ensure_valid(validate_positive_int(int(max_items), "max_items"))

    diag = np.diag(mat).copy()
    selected: list[int] = []
    gains: list[float] = []

    while len(selected) < budget:
        taken = set(selected)
        remaining = np.array([i for i in range(n) if i not in taken])
        if selected:
            chol = linalg.cholesky(
                mat[np.ix_(selected, selected)], lower=True, check_finite=False
            )
            cross = linalg.solve_triangular(
                chol, mat[np.ix_(selected, remaining)], lower=True, check_finite=False
            )
            schur = diag[remaining] - np.einsum("ij,ij->j", cross, cross)
        else:
            schur = diag[remaining]

        singular = schur <= SINGULAR_RTOL * np.abs(diag[remaining])
        candidate_gains = np.full(remaining.shape, -np.inf)
        candidate_gains[~singular] = np.log(schur[~singular])

        best = int(np.argmax(candidate_gains))
        gain = float(candidate_gains[best])

        if selected:
            if gain == float("-inf"):
                break
            if stop_on_negative_gain and gain < 0.0:
                break

        selected.append(int(remaining[best]))
        gains.append(gain)
        if gain == float("-inf"):
            break

    logger.debug("Greedy MAP selected %d of %d items", len(selected), n)
    return selected, gains


def greedy_map(
    kernel: np.ndarray | DppKernel, max_items: int | None = None
) -> list[int]:
    """
    Greedy DPP MAP inference, stopping at the first negative marginal gain.

    Args:
        kernel: Symmetric PSD kernel
        max_items: Optional selection cap

    Returns:
        Selected indices in selection order (at least one for N >= 1)

    Example:
        greedy_map(np.diag([4.0, 4.0]))
        # Returns: [0, 1]
    """
    selected, _ = greedy_map_with_gains(kernel, max_items=max_items)
    return selected
