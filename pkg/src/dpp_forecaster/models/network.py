"""
Dense feedforward network engine for dpp-forecaster.

Provides the parameter container, a fixed-graph multilayer perceptron with
hand-derived reverse-mode gradients, and the Adam optimizer. The cVAE
encoder/decoder and the diversity sampling function are built on it.

All arithmetic is float64. Inputs may be a single vector of shape (in,) or a
row-stacked batch of shape (B, in); parameter gradients of a batch are the
sum over rows.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from dpp_forecaster.errors import ConfigurationError, OptimizationError
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import ensure_valid, validate_unit_interval

logger = get_logger(__name__)

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


class ParamStore:
    """
    Ordered mapping from entry name to a float64 parameter array.

    Iteration follows insertion order, which is also the order used when a
    store is written to a checkpoint. Arrays are copied on construction so a
    store never aliases caller memory.
    """

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in (entries or {}).items():
            self._entries[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{v.shape}" for k, v in self._entries.items())
        return f"ParamStore({shapes})"

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: value.shape for name, value in self._entries.items()}

    @property
    def num_params(self) -> int:
        return sum(value.size for value in self._entries.values())

    def copy(self) -> ParamStore:
        return ParamStore(self._entries)

    def zeros_like(self) -> ParamStore:
        return ParamStore({k: np.zeros_like(v) for k, v in self._entries.items()})

    def replace(self, updates: Mapping[str, np.ndarray]) -> ParamStore:
        """
        Return a copy with some entries replaced.

        Args:
            updates: New values; names and shapes must already exist

        Returns:
            New ParamStore

        Raises:
            ConfigurationError: If a name is unknown or a shape differs
        """
        merged = dict(self._entries)
        for name, value in updates.items():
            if name not in merged:
                raise ConfigurationError(f"Unknown parameter entry: {name}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != merged[name].shape:
                raise ConfigurationError(
                    f"Shape mismatch for {name}: {value.shape} != {merged[name].shape}"
                )
            merged[name] = value
        return ParamStore(merged)

    def equals(self, other: ParamStore) -> bool:
        """Bitwise equality of names, order, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(v, other[k]) for k, v in self._entries.items())


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, tag: str) -> np.ndarray:
    # subgradient of the rectifier at exactly 0 is 0
    if tag == RELU:
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass(frozen=True)
class DenseNet:
    """
    Fully connected network description.

    Layer i maps layer_dims[i] -> layer_dims[i + 1] as y = W x + b with W of
    shape (out, in). Hidden layers use `activation`, the last layer uses
    `output_activation`.

    Attributes:
        layer_dims: Input, hidden and output widths (at least two entries)
        activation: Tag applied after every hidden layer
        output_activation: Tag applied after the final layer
    """

    layer_dims: tuple[int, ...]
    activation: str = RELU
    output_activation: str = IDENTITY

    def __post_init__(self) -> None:
        dims = tuple(self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigurationError(
                f"A network needs input and output widths, got {dims}"
            )
        if any(not isinstance(d, int) or d < 1 for d in dims):
            raise ConfigurationError(f"Layer widths must be positive ints: {dims}")
        for tag in (self.activation, self.output_activation):
            if tag not in ACTIVATIONS:
                raise ConfigurationError(
                    f"Unknown activation {tag!r}; expected one of {ACTIVATIONS}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @staticmethod
    def weight_name(layer: int) -> str:
        return f"layer{layer}.weight"

    @staticmethod
    def bias_name(layer: int) -> str:
        return f"layer{layer}.bias"

    def _tag(self, layer: int) -> str:
        return self.output_activation if layer == self.num_layers - 1 else self.activation

    def init_params(self, seed: int) -> ParamStore:
        """
        Create Glorot-uniform weights and zero biases.

        Weights are drawn from U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).

        Args:
            seed: Seed for numpy's default generator

        Returns:
            ParamStore with entries layer{i}.weight and layer{i}.bias
        """
        rng = np.random.default_rng(seed)
        entries: dict[str, np.ndarray] = {}
        for i in range(self.num_layers):
            fan_in, fan_out = self.layer_dims[i], self.layer_dims[i + 1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            entries[self.weight_name(i)] = rng.uniform(
                -bound, bound, size=(fan_out, fan_in)
            )
            entries[self.bias_name(i)] = np.zeros(fan_out)
        return ParamStore(entries)

    def check_params(self, params: ParamStore) -> None:
        """
        Verify that a parameter store matches this architecture.

        Raises:
            ConfigurationError: On missing entries or wrong shapes
        """
        for i in range(self.num_layers):
            expected = {
                self.weight_name(i): (self.layer_dims[i + 1], self.layer_dims[i]),
                self.bias_name(i): (self.layer_dims[i + 1],),
            }
            for name, shape in expected.items():
                if name not in params:
                    raise ConfigurationError(f"Missing parameter entry: {name}")
                if params[name].shape != shape:
                    raise ConfigurationError(
                        f"Parameter {name} has shape {params[name].shape}, "
                        f"expected {shape}"
                    )

    def _as_batch(self, x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ConfigurationError(
                f"{what} has shape {np.shape(x)}, expected trailing dimension {dim}"
            )
        return arr, single

    def _forward_cache(
        self, params: ParamStore, batch: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        pre_activations: list[np.ndarray] = []
        activations = [batch]
        h = batch
        for i in range(self.num_layers):
            z = h @ params[self.weight_name(i)].T + params[self.bias_name(i)]
            pre_activations.append(z)
            h = _activate(z, self._tag(i))
            activations.append(h)
        return pre_activations, activations

    def forward(self, params: ParamStore, x: np.ndarray) -> np.ndarray:
        """
        Evaluate the network.

        Args:
            params: Parameters matching this architecture
            x: Input vector (in,) or batch (B, in)

        Returns:
            Output vector (out,) or batch (B, out)

        Raises:
            ConfigurationError: On dimension mismatch
        """
        self.check_params(params)
        batch, single = self._as_batch(x, self.input_dim, "Input")
        _, activations = self._forward_cache(params, batch)
        out = activations[-1]
        return out[0] if single else out

    def backward(
        self, params: ParamStore, x: np.ndarray, upstream: np.ndarray
    ) -> tuple[ParamStore, np.ndarray]:
        """
        Reverse-mode gradients of sum(upstream * forward(params, x)).

        Args:
            params: Parameters matching this architecture
            x: Input vector or batch
            upstream: Gradient w.r.t. the output, same leading shape as x

        Returns:
            Tuple of (parameter gradients, input gradient shaped like x)

        Raises:
            ConfigurationError: On dimension mismatch
        """
        self.check_params(params)
        batch, single = self._as_batch(x, self.input_dim, "Input")
        grad, _ = self._as_batch(upstream, self.output_dim, "Upstream gradient")
        if grad.shape[0] != batch.shape[0]:
            raise ConfigurationError(
                f"Upstream batch size {grad.shape[0]} != input batch size "
                f"{batch.shape[0]}"
            )

        pre_activations, activations = self._forward_cache(params, batch)
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(self.num_layers)):
            weight = params[self.weight_name(i)]
            grad = grad * _activation_grad(pre_activations[i], self._tag(i))
            grads[self.weight_name(i)] = grad.T @ activations[i]
            grads[self.bias_name(i)] = grad.sum(axis=0)
            grad = grad @ weight

        ordered = ParamStore({name: grads[name] for name in params.names()})
        return ordered, (grad[0] if single else grad)


def forward(net: DenseNet, params: ParamStore, x: np.ndarray) -> np.ndarray:
    """Module-level alias of DenseNet.forward."""
    return net.forward(params, x)


def backward(
    net: DenseNet, params: ParamStore, x: np.ndarray, upstream: np.ndarray
) -> tuple[ParamStore, np.ndarray]:
    """Module-level alias of DenseNet.backward."""
    return net.backward(params, x, upstream)


@dataclass(frozen=True)
class AdamState:
    """
    Adam accumulators.

    Attributes:
        first_moment: Running mean of gradients, shaped like the parameters
        second_moment: Running mean of squared gradients
        step: Number of updates applied so far
    """

    first_moment: ParamStore
    second_moment: ParamStore
    step: int = 0

    @classmethod
    def initial(cls, params: ParamStore) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(
    params: ParamStore,
    grads: ParamStore,
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamStore, AdamState]:
    """
    Apply one bias-corrected Adam update.

    Args:
        params: Current parameters
        grads: Gradients with the same entries and shapes
        state: Current accumulators
        lr: Learning rate
        beta1: Decay of the first moment
        beta2: Decay of the second moment
        eps: Denominator offset

    Returns:
        Tuple of (updated parameters, updated state)

    Raises:
        ConfigurationError: If entries or shapes disagree or a decay rate
            lies outside (0, 1)
        OptimizationError: If a gradient entry is non-finite

    Example:
        state = AdamState.initial(params)
        params, state = adam_step(params, grads, state, lr=1e-4)
    """
    ensure_valid(validate_unit_interval(beta1, "beta1"))
    ensure_valid(validate_unit_interval(beta2, "beta2"))
    shapes = params.shapes()
    if grads.shapes() != shapes or state.first_moment.shapes() != shapes:
        raise ConfigurationError("Parameter, gradient and optimizer shapes differ")

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            logger.error("Non-finite gradient in %s at Adam step %d", name, state.step + 1)
            raise OptimizationError(
                f"Non-finite gradient in parameter entry {name}", layer_name=name
            )

    step = state.step + 1
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step

    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.first_moment[name] + (1.0 - beta1) * g
        v = beta2 * state.second_moment[name] + (1.0 - beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v

    return ParamStore(new_params), AdamState(ParamStore(new_m), ParamStore(new_v), step)
