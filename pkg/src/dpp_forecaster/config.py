"""
Configuration module for dpp-forecaster.

Provides environment-aware runtime settings (logging, default output
directory) and the typed experiment configuration with its JSON form.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv

from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.models.cvae import CvaeConfig
from dpp_forecaster.models.dsf import DsfTrainConfig
from dpp_forecaster.services.export_utils import atomic_write_text
from dpp_forecaster.services.synthdata import ScenarioConfig
from dpp_forecaster.utils.validators import (
    ensure_valid,
    validate_choice,
    validate_positive,
    validate_positive_int,
)

# Existing environment variables are never overridden
load_dotenv()

BALANCED = "balanced"
IMBALANCED = "imbalanced"
REGIMES = (BALANCED, IMBALANCED)


class Settings:
    """
    Base runtime settings.

    Read from the environment (or a .env file) at import time.
    """

    LOG_LEVEL = os.environ.get("DPP_FORECASTER_LOG_LEVEL", "INFO")
    LOG_FILE: Path | None = (
        Path(os.environ["DPP_FORECASTER_LOG_FILE"])
        if os.environ.get("DPP_FORECASTER_LOG_FILE")
        else None
    )
    OUTPUT_DIR = Path(os.environ.get("DPP_FORECASTER_OUT", "runs/default"))


class DevelopmentSettings(Settings):
    """Verbose logging for local experiments."""

    LOG_LEVEL = os.environ.get("DPP_FORECASTER_LOG_LEVEL", "DEBUG")


class TestingSettings(Settings):
    """Quiet logging, no log file."""

    LOG_LEVEL = "WARNING"
    LOG_FILE = None


settings = {
    "development": DevelopmentSettings,
    "testing": TestingSettings,
    "default": Settings,
}


def get_settings() -> type[Settings]:
    """Settings class selected by DPP_FORECASTER_ENV (default: "default")."""
    return settings.get(os.environ.get("DPP_FORECASTER_ENV", "default"), Settings)


def derive_seed(base: int, *keys: int) -> int:
    """
    Derive an independent integer seed from a base seed and integer keys.

    Goes through numpy's SeedSequence, so (base, keys) pairs never share a
    stream and results do not depend on the order work is scheduled in.

    Example:
        derive_seed(0, 17)  # seed for context 17 of run seed 0
    """
    entropy = [int(base), *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass(frozen=True)
class EvaluationConfig:
    """
    Evaluation settings.

    Attributes:
        eps: Context clustering radius
        num_seeds: Seeds averaged per stochastic method
        omega_test: Test-time base quality of DSF greedy MAP inference
    """

    eps: float = 0.1
    num_seeds: int = 10
    omega_test: float = 1.0

    def __post_init__(self) -> None:
        ensure_valid(validate_positive(self.eps, "eps"))
        ensure_valid(validate_positive_int(self.num_seeds, "num_seeds"))
        ensure_valid(validate_positive(self.omega_test, "omega_test"))


def _route_probs(regime: str) -> tuple[float, float, float]:
    factory = ScenarioConfig.balanced if regime == BALANCED else ScenarioConfig.imbalanced
    return factory().route_probs


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Complete experiment configuration.

    The base seed drives every stochastic stage; the seed fields of the
    cVAE and DSF sections are overwritten with it.

    Attributes:
        regime: "balanced" or "imbalanced" route distribution
        scenario: Crossroad settings (route_probs default to the regime's)
        cvae: cVAE training settings
        dsf: DSF training settings
        evaluation: Evaluation settings
        seed: Base seed
        output_dir: Directory receiving every artifact
        train_size: Training examples
        test_size: Test examples
    """

    regime: str = BALANCED
    scenario: ScenarioConfig | None = None
    cvae: CvaeConfig = field(default_factory=CvaeConfig)
    dsf: DsfTrainConfig = field(default_factory=DsfTrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    train_size: int = 1100
    test_size: int = 1000

    def __post_init__(self) -> None:
        ensure_valid(validate_choice(self.regime, REGIMES, "regime"))
        ensure_valid(validate_positive_int(self.train_size, "train_size"))
        ensure_valid(validate_positive_int(self.test_size, "test_size"))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.scenario is None:
            object.__setattr__(
                self, "scenario", ScenarioConfig(route_probs=_route_probs(self.regime))
            )
        object.__setattr__(self, "cvae", replace(self.cvae, seed=self.seed))
        object.__setattr__(self, "dsf", replace(self.dsf, seed=self.seed))

    @property
    def scene(self) -> ScenarioConfig:
        assert self.scenario is not None
        return self.scenario

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def eval_seeds(self) -> tuple[int, ...]:
        """Run seeds of the evaluation: base, base + 1, ..."""
        return tuple(self.seed + i for i in range(self.evaluation.num_seeds))

    def with_overrides(
        self,
        seed: int | None = None,
        output_dir: str | Path | None = None,
        num_samples: int | None = None,
        omega_test: float | None = None,
    ) -> ExperimentConfig:
        """Apply command-line overrides."""
        updated = self
        if seed is not None:
            updated = replace(updated, seed=seed)
        if output_dir is not None:
            updated = replace(updated, output_dir=str(output_dir))
        if num_samples is not None:
            updated = replace(updated, dsf=replace(updated.dsf, num_samples=num_samples))
        if omega_test is not None:
            updated = replace(
                updated, evaluation=replace(updated.evaluation, omega_test=omega_test)
            )
        return updated

    def to_dict(self) -> dict[str, Any]:
        """
        Serialize to plain JSON types.

        Returns:
            Dictionary with one section per sub-configuration
        """
        scenario = asdict(self.scene)
        scenario["route_probs"] = list(self.scene.route_probs)
        cvae = asdict(self.cvae)
        dsf = asdict(self.dsf)
        del cvae["seed"], dsf["seed"]
        return {
            "regime": self.regime,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "scenario": scenario,
            "cvae": cvae,
            "dsf": dsf,
            "evaluation": asdict(self.evaluation),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        """
        Build a configuration from its dictionary form.

        Missing keys take their defaults. The scenario's route_probs default
        to the regime's probabilities.

        Raises:
            ConfigurationError: On unknown keys or invalid values
        """
        if not isinstance(data, dict):
            raise ConfigurationError("Configuration must be a JSON object")

        sections: dict[str, type] = {
            "scenario": ScenarioConfig,
            "cvae": CvaeConfig,
            "dsf": DsfTrainConfig,
            "evaluation": EvaluationConfig,
        }
        scalars = {"regime", "seed", "output_dir", "train_size", "test_size"}
        unknown = set(data) - scalars - set(sections)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

        kwargs: dict[str, Any] = {key: data[key] for key in scalars if key in data}
        regime = kwargs.get("regime", BALANCED)
        ensure_valid(validate_choice(regime, REGIMES, "regime"))

        for name, section_cls in sections.items():
            values = dict(data.get(name) or {})
            allowed = {f.name for f in fields(section_cls) if f.init} - {"seed"}
            extra = set(values) - allowed
            if extra:
                raise ConfigurationError(
                    f"Unknown keys in section {name!r}: {', '.join(sorted(extra))}"
                )
            if name == "scenario":
                values["route_probs"] = tuple(values.get("route_probs", _route_probs(regime)))
            try:
                kwargs[name] = section_cls(**values)
            except TypeError as e:
                raise ConfigurationError(f"Invalid section {name!r}: {e}") from e

        return cls(**kwargs)


def load_config(path: Path | None) -> ExperimentConfig:
    """
    Read an experiment configuration file; None gives the defaults.

    Raises:
        ConfigurationError: If the file is missing, not JSON, or invalid
    """
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration file {path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    """Canonical JSON text of a configuration."""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def save_config(path: Path, config: ExperimentConfig) -> Path:
    """Write a configuration file atomically."""
    atomic_write_text(Path(path), dump_config(config))
    return Path(path)
