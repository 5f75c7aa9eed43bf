"""
Multi-modal forecast evaluation for dpp-forecaster.

Each test example is augmented with the futures of every example whose
context (flattened past trajectory) lies within eps of its own. Forecasts
are scored against that set:

- ADE / FDE: distance of the closest sample to each ground-truth future
  (mean per-step Euclidean distance / final-step distance), averaged over
  the set
- ASD / FSD: distance of each sample to its closest other sample, averaged
  over the forecast
- mode coverage: fraction of the three routes present among the samples

Distances are unsquared Euclidean throughout.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from dpp_forecaster.errors import EvaluationError
from dpp_forecaster.services.synthdata import ROUTES, DataExample, classify_route, stack_examples
from dpp_forecaster.utils.logger import get_logger
from dpp_forecaster.utils.validators import ensure_valid, validate_positive

logger = get_logger(__name__)

REPORT_COLUMNS = (
    "method",
    "num_samples",
    "regime",
    "seed",
    "ade",
    "fde",
    "asd",
    "fsd",
    "coverage",
    "mean_set_size",
    "instability_events",
)

Forecaster = Callable[[DataExample, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class GroundTruthSet:
    """
    Futures of all examples whose context is within eps of the anchor's.

    Attributes:
        anchor_id: Position of the anchor example in the evaluated dataset
        member_ids: Positions of all members, ascending (includes the anchor)
        futures: (M, T, D) member futures in member_ids order
    """

    anchor_id: int
    member_ids: tuple[int, ...]
    futures: np.ndarray

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class MetricsReport:
    """
    Averaged metrics of one method.

    A report with seed None is the mean over its per_seed breakdown.
    """

    method: str
    ade: float
    fde: float
    asd: float
    fsd: float
    coverage: float
    mean_set_size: float
    num_samples: int | None = None
    regime: str = ""
    seed: int | None = None
    instability_events: int = 0
    per_seed: tuple[MetricsReport, ...] = field(default=(), compare=False)

    def as_row(self) -> list[Any]:
        """Values in REPORT_COLUMNS order."""
        return [
            self.method,
            "" if self.num_samples is None else self.num_samples,
            self.regime,
            "mean" if self.seed is None else self.seed,
            self.ade,
            self.fde,
            self.asd,
            self.fsd,
            self.coverage,
            self.mean_set_size,
            self.instability_events,
        ]

    def rows(self) -> list[list[Any]]:
        """Per-seed rows followed by the mean row."""
        return [report.as_row() for report in self.per_seed] + [self.as_row()]


def cluster_contexts(examples: Sequence[DataExample], eps: float) -> list[GroundTruthSet]:
    """
    Build one ground-truth set per example from eps-neighbourhoods of contexts.

    Args:
        examples: Dataset to augment
        eps: Neighbourhood radius on flattened past trajectories (> 0)

    Returns:
        GroundTruthSet per example, in dataset order
    """
    ensure_valid(validate_positive(eps, "eps"))
    contexts, futures = stack_examples(examples)
    distances = cdist(contexts, contexts)

    sets = []
    for i in range(len(examples)):
        members = np.flatnonzero(distances[i] <= eps)
        sets.append(
            GroundTruthSet(
                anchor_id=i,
                member_ids=tuple(int(j) for j in members),
                futures=futures[members],
            )
        )
    logger.debug(
        "Clustered %d contexts at eps=%s (median set size %s)",
        len(sets),
        eps,
        float(np.median([s.size for s in sets])),
    )
    return sets


def _as_samples(samples: np.ndarray | Sequence[np.ndarray], what: str = "Forecast") -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise EvaluationError(f"{what} must be a non-empty (n, T, D) set, got shape {arr.shape}")
    return arr


def _futures(gt: GroundTruthSet | np.ndarray) -> np.ndarray:
    futures = gt.futures if isinstance(gt, GroundTruthSet) else gt
    return _as_samples(futures, "Ground-truth set")


def _mean_step_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(|a|, |b|) matrix of mean per-step Euclidean distances."""
    steps = np.linalg.norm(a[:, np.newaxis] - b[np.newaxis, :], axis=-1)
    return steps.mean(axis=-1)


def ade(gt: GroundTruthSet | np.ndarray, samples: np.ndarray) -> float:
    """
    Average displacement error.

    Args:
        gt: Ground-truth set or (M, T, D) futures
        samples: (n, T, D) forecast

    Returns:
        Mean over ground-truth futures of the closest sample's mean per-step distance

    Raises:
        EvaluationError: If either set is empty
    """
    dist = _mean_step_distances(_futures(gt), _as_samples(samples))
    return float(dist.min(axis=1).mean())


def fde(gt: GroundTruthSet | np.ndarray, samples: np.ndarray) -> float:
    """Final displacement error; the closest sample is chosen by final position."""
    dist = cdist(_futures(gt)[:, -1], _as_samples(samples)[:, -1])
    return float(dist.min(axis=1).mean())


def _self_distance(dist: np.ndarray) -> float:
    if dist.shape[0] == 1:
        return 0.0
    np.fill_diagonal(dist, np.inf)
    return float(dist.min(axis=1).mean())


def asd(samples: np.ndarray) -> float:
    """
    Average self distance: mean distance of each sample to its nearest other sample.

    A single sample gives 0.

    Raises:
        EvaluationError: If the forecast is empty
    """
    arr = _as_samples(samples)
    return _self_distance(_mean_step_distances(arr, arr))


def fsd(samples: np.ndarray) -> float:
    """Final self distance: asd on final positions only."""
    finals = _as_samples(samples)[:, -1]
    return _self_distance(cdist(finals, finals))


def mode_coverage(samples: np.ndarray, origin: np.ndarray | None = None) -> float:
    """
    Fraction of the routes present among the forecast samples.

    Args:
        samples: (n, T, D) forecast
        origin: Current position (last past position); defaults to the origin

    Returns:
        Distinct classified routes / 3; unclassifiable samples count for none
    """
    return _coverage(_route_labels(_as_samples(samples), origin))


def _route_labels(samples: np.ndarray, origin: np.ndarray | None) -> list[str | None]:
    return [classify_route(sample, origin) for sample in samples]


def _coverage(labels: list[str | None]) -> float:
    return len({label for label in labels if label is not None}) / len(ROUTES)


def _score_seed(
    method: str,
    forecaster: Forecaster,
    examples: Sequence[DataExample],
    sets: Sequence[GroundTruthSet],
    seed: int,
) -> tuple[dict[str, float], int]:
    """Mean scores for one seed and the number of samples matching no route."""
    totals = dict.fromkeys(("ade", "fde", "asd", "fsd", "coverage", "mean_set_size"), 0.0)
    unclassified = 0
    for example, gt in zip(examples, sets, strict=True):
        samples = _as_samples(forecaster(example, seed), f"{method} forecast")
        totals["ade"] += ade(gt, samples)
        totals["fde"] += fde(gt, samples)
        totals["asd"] += asd(samples)
        totals["fsd"] += fsd(samples)
        labels = _route_labels(samples, example.past[-1])
        unclassified += labels.count(None)
        totals["coverage"] += _coverage(labels)
        totals["mean_set_size"] += samples.shape[0]
    return {name: value / len(examples) for name, value in totals.items()}, unclassified


def evaluate(
    method: str,
    forecaster: Forecaster,
    examples: Sequence[DataExample],
    eps: float = 0.1,
    seeds: Sequence[int] = tuple(range(10)),
    deterministic: bool = False,
    num_samples: int | None = None,
    regime: str = "",
    instability_events: int = 0,
) -> MetricsReport:
    """
    Score a forecaster on a dataset, averaged over examples and seeds.

    The forecaster is called as forecaster(example, seed). Deterministic
    methods run for the first seed only; their report is repeated for the
    remaining seeds.

    Args:
        method: Method label
        forecaster: Sample generator
        examples: Test examples
        eps: Context clustering radius
        seeds: Seed list
        deterministic: Whether the forecaster ignores its seed
        num_samples: Sampling budget, echoed into the report
        regime: Data regime label, echoed into the report
        instability_events: Training instability count, echoed into the report

    Returns:
        Mean report with the per-seed breakdown attached

    Raises:
        EvaluationError: If there are no examples, no seeds, or a forecast is empty
    """
    if not examples:
        raise EvaluationError("Nothing to evaluate: the dataset is empty")
    if not seeds:
        raise EvaluationError("At least one seed is required")

    sets = cluster_contexts(examples, eps)
    echo = {
        "method": method,
        "num_samples": num_samples,
        "regime": regime,
        "instability_events": instability_events,
    }

    per_seed: list[MetricsReport] = []
    shared: dict[str, float] | None = None
    for seed in seeds:
        if deterministic and shared is not None:
            scores = shared
        else:
            scores, unclassified = _score_seed(method, forecaster, examples, sets, int(seed))
            shared = scores
            if unclassified:
                logger.warning(
                    "%s seed %d: %d forecast samples match no route and cover no mode",
                    method,
                    seed,
                    unclassified,
                )
        per_seed.append(MetricsReport(seed=int(seed), **scores, **echo))
        logger.debug("%s seed %d: ADE %.6f ASD %.6f", method, seed, scores["ade"], scores["asd"])

    names = ("ade", "fde", "asd", "fsd", "coverage", "mean_set_size")
    means = {name: float(np.mean([getattr(r, name) for r in per_seed])) for name in names}
    report = MetricsReport(seed=None, per_seed=tuple(per_seed), **means, **echo)
    logger.info(
        "%s: ADE %.4f FDE %.4f ASD %.4f FSD %.4f coverage %.3f",
        method,
        report.ade,
        report.fde,
        report.asd,
        report.fsd,
        report.coverage,
    )
    return report

