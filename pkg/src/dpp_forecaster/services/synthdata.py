"""
Synthetic crossroad trajectory generator for dpp-forecaster.

A vehicle approaches a four-way crossroad from the south along the road axis
and then drives forward, turns left or turns right. Past positions end at
the intersection centre (the origin); the chosen route is a 90-degree,
axis-aligned continuation from there. Gaussian noise is added to every
step's velocity, so positions accumulate it.

Datasets are stored as tab-separated records:

    example_id  split  route  h_0 ... h_{H*D-1}  x_0 ... x_{T*D-1}
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.services.export_utils import read_table, write_table
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_non_negative,
    validate_positive,
    validate_positive_int,
    validate_probabilities,
)

logger = get_logger(__name__)

FORWARD = "forward"
LEFT = "left"
RIGHT = "right"
ROUTES = (FORWARD, LEFT, RIGHT)

BALANCED_PROBS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
IMBALANCED_PROBS = (0.8, 0.1, 0.1)

# Final displacements within this many degrees of the approach axis count as
# forward; the remaining ahead half-plane splits into left and right thirds
FORWARD_HALF_ANGLE_DEG = 30.0


def route_directions() -> dict[str, np.ndarray]:
    """Unit heading of each route; the approach direction is +y."""
    return {
        FORWARD: np.array([0.0, 1.0]),
        LEFT: np.array([-1.0, 0.0]),
        RIGHT: np.array([1.0, 0.0]),
    }


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Crossroad simulation settings.

    Attributes:
        route_probs: Probabilities of (forward, left, right)
        noise_std: Std of the Gaussian noise added to each velocity component
        speed: Distance travelled per step
        road_width: Width of both roads (geometry reference for plots)
        past_steps: H, number of past positions
        future_steps: T, number of future positions
        dims: D, spatial dimension
    """

    route_probs: tuple[float, float, float] = BALANCED_PROBS
    noise_std: float = 0.05
    speed: float = 0.5
    road_width: float = 2.0
    past_steps: int = 2
    future_steps: int = 3
    dims: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "route_probs", tuple(float(p) for p in self.route_probs))
        ensure_valid(validate_probabilities(self.route_probs, len(ROUTES)))
        ensure_valid(validate_non_negative(self.noise_std, "noise_std"))
        ensure_valid(validate_positive(self.speed, "speed"))
        ensure_valid(validate_positive(self.road_width, "road_width"))
        ensure_valid(validate_positive_int(self.past_steps, "past_steps"))
        ensure_valid(validate_positive_int(self.future_steps, "future_steps"))
        if self.dims != 2:
            raise ConfigurationError(f"The crossroad scene is planar (D=2), got {self.dims}")

    @classmethod
    def balanced(cls, **overrides: Any) -> ScenarioConfig:
        return cls(route_probs=BALANCED_PROBS, **overrides)

    @classmethod
    def imbalanced(cls, **overrides: Any) -> ScenarioConfig:
        return cls(route_probs=IMBALANCED_PROBS, **overrides)

    @property
    def context_dim(self) -> int:
        return self.past_steps * self.dims

    @property
    def future_dim(self) -> int:
        return self.future_steps * self.dims


@dataclass(frozen=True, eq=False)
class DataExample:
    """
    One forecasting example.

    Attributes:
        example_id: Index within its split
        past: Past trajectory h, shape (H, D); the last row is the current position
        future: Future trajectory x, shape (T, D)
        route: Route label drawn by the generator (None if unknown)
        split: Split tag, e.g. "train" or "test"
    """

    example_id: int
    past: np.ndarray
    future: np.ndarray
    route: str | None = None
    split: str = "train"
    context: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "past", np.asarray(self.past, dtype=np.float64))
        object.__setattr__(self, "future", np.asarray(self.future, dtype=np.float64))
        object.__setattr__(self, "context", self.past.ravel())


def generate(
    cfg: ScenarioConfig, n: int, seed: int, split: str = "train"
) -> list[DataExample]:
    """
    Simulate n crossroad examples.

    The vehicle starts H steps south of the centre, takes H noisy approach
    steps (0, speed) + noise to reach the past trajectory's last position,
    then T noisy steps along the drawn route's heading.

    Args:
        cfg: Scenario settings
        n: Number of examples
        seed: Seed for numpy's default generator
        split: Split tag stored on every example

    Returns:
        List of DataExample, deterministic in (cfg, n, seed)

    Raises:
        ConfigurationError: If n < 1

    Example:
        train = generate(ScenarioConfig.balanced(), 1100, seed=0)
    """
    ensure_valid(validate_positive_int(n, "n"))
    rng = np.random.default_rng(seed)

    route_ids = rng.choice(len(ROUTES), size=n, p=np.asarray(cfg.route_probs))
    steps = cfg.past_steps + cfg.future_steps
    noise = rng.normal(0.0, cfg.noise_std, size=(n, steps, cfg.dims))

    headings = route_directions()
    approach = headings[FORWARD] * cfg.speed
    start = np.array([0.0, -cfg.past_steps * cfg.speed])

    examples: list[DataExample] = []
    for i in range(n):
        route = ROUTES[int(route_ids[i])]
        velocities = np.empty((steps, cfg.dims))
        velocities[: cfg.past_steps] = approach
        velocities[cfg.past_steps :] = headings[route] * cfg.speed
        positions = start + np.cumsum(velocities + noise[i], axis=0)
        examples.append(
            DataExample(
                example_id=i,
                past=positions[: cfg.past_steps],
                future=positions[cfg.past_steps :],
                route=route,
                split=split,
            )
        )

    logger.debug(
        "Generated %d %s examples (seed=%d, routes=%s)",
        n,
        split,
        seed,
        {r: int(np.sum(route_ids == j)) for j, r in enumerate(ROUTES)},
    )
    return examples


def classify_route(
    trajectory: np.ndarray | DataExample, origin: np.ndarray | None = None
) -> str | None:
    """
    Label a future trajectory by the direction of its final displacement.

    The displacement runs from the current position (the intersection centre
    unless `origin` is given; for a DataExample, its last past position) to
    the final future position. Angles are measured from the approach axis
    (+y), positive towards the left.

    Args:
        trajectory: Future trajectory (T, D) or a DataExample
        origin: Reference position; defaults to the origin

    Returns:
        "forward", "left", "right", or None if the displacement is zero
    """
    if isinstance(trajectory, DataExample):
        origin = trajectory.past[-1]
        trajectory = trajectory.future

    traj = np.asarray(trajectory, dtype=np.float64).reshape(-1, 2)
    ref = np.zeros(2) if origin is None else np.asarray(origin, dtype=np.float64)
    dx, dy = traj[-1] - ref
    if dx == 0.0 and dy == 0.0:
        return None

    angle = math.degrees(math.atan2(-dx, dy))
    if abs(angle) <= FORWARD_HALF_ANGLE_DEG:
        return FORWARD
    return LEFT if angle > 0 else RIGHT


def stack_examples(examples: Sequence[DataExample]) -> tuple[np.ndarray, np.ndarray]:
    """
    Stack examples into arrays.

    Returns:
        Tuple of (contexts (M, H*D), futures (M, T, D))
    """
    if not examples:
        raise ConfigurationError("Dataset is empty")
    contexts = np.stack([ex.context for ex in examples])
    futures = np.stack([ex.future for ex in examples])
    return contexts, futures


def dataset_columns(cfg: ScenarioConfig) -> list[str]:
    """Fixed column order of the dataset file."""
    past_cols = [f"h{i}" for i in range(cfg.context_dim)]
    future_cols = [f"x{i}" for i in range(cfg.future_dim)]
    return ["example_id", "split", "route", *past_cols, *future_cols]


def write_dataset(path: Path, examples: Sequence[DataExample], cfg: ScenarioConfig) -> Path:
    """
    Write examples as tab-separated records with full float precision.

    Args:
        path: Target file
        examples: Examples to write
        cfg: Scenario settings (fixes H, T, D)

    Returns:
        Path to the written file
    """
    rows = [
        [
            ex.example_id,
            ex.split,
            ex.route or "",
            *[float(v) for v in ex.past.ravel()],
            *[float(v) for v in ex.future.ravel()],
        ]
        for ex in examples
    ]
    write_table(path, dataset_columns(cfg), rows)
    logger.info("Wrote %d examples to %s", len(rows), path)
    return Path(path)


def read_dataset(path: Path, cfg: ScenarioConfig) -> list[DataExample]:
    """
    Read a dataset file written by write_dataset.

    Raises:
        ConfigurationError: If the file is missing or its columns do not
            match cfg
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Dataset not found: {path}")

    columns, rows = read_table(path)
    if columns != dataset_columns(cfg):
        raise ConfigurationError(f"Dataset {path} does not match the scenario dimensions")

    h_dim, x_dim = cfg.context_dim, cfg.future_dim
    examples = []
    for row in rows:
        values = [float(v) for v in row[3:]]
        examples.append(
            DataExample(
                example_id=int(row[0]),
                split=row[1],
                route=row[2] or None,
                past=np.array(values[:h_dim]).reshape(cfg.past_steps, cfg.dims),
                future=np.array(values[h_dim : h_dim + x_dim]).reshape(
                    cfg.future_steps, cfg.dims
                ),
            )
        )
    return examples
