"""
Checkpoint persistence for dpp-forecaster.

Stores one or more named networks plus a metadata header in a single JSON
document. Floats are serialized with Python's shortest round-trip repr, so
save -> load reproduces every parameter bit-for-bit.
"""

import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.models.network import DenseNet, ParamStore
from dpp_forecaster.services.export_utils import atomic_write_text
from dpp_forecaster.utils.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "dpp-forecaster-checkpoint"
CHECKPOINT_VERSION = "1.0"

NetworkEntry = tuple[DenseNet, ParamStore]


def _is_version_compatible(version: str) -> bool:
    """
    Check if a checkpoint version can be read.

    Args:
        version: Version string from the checkpoint

    Returns:
        True if the major version matches
    """
    try:
        major = int(str(version).split(".")[0])
    except ValueError:
        return False
    return major == int(CHECKPOINT_VERSION.split(".")[0])


def network_to_dict(net: DenseNet, params: ParamStore) -> dict[str, Any]:
    """Serialize one network and its parameters to plain JSON types."""
    net.check_params(params)
    return {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "output_activation": net.output_activation,
        "params": {
            name: {
                "shape": list(value.shape),
                "values": [float(v) for v in value.ravel()],
            }
            for name, value in params.items()
        },
    }


def network_from_dict(data: Mapping[str, Any]) -> NetworkEntry:
    """
    Rebuild a network from its serialized form.

    Raises:
        ConfigurationError: If an entry's value count does not match its shape
    """
    try:
        net = DenseNet(
            layer_dims=tuple(int(d) for d in data["layer_dims"]),
            activation=data["activation"],
            output_activation=data["output_activation"],
        )
        entries: dict[str, np.ndarray] = {}
        for name, entry in data["params"].items():
            shape = tuple(int(s) for s in entry["shape"])
            values = np.array(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ConfigurationError(
                    f"Entry {name}: {values.size} values for shape {shape}"
                )
            entries[name] = values.reshape(shape)
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"Malformed network entry: {e}") from e

    params = ParamStore(entries)
    net.check_params(params)
    return net, params


def save_checkpoint(
    path: Path,
    networks: Mapping[str, NetworkEntry],
    metadata: Mapping[str, Any],
) -> Path:
    """
    Write networks and metadata to a checkpoint file.

    Args:
        path: Target file
        networks: Mapping of network role (e.g. "encoder") to (net, params)
        metadata: JSON-serializable header (dimensions, seeds, config echo)

    Returns:
        Path to the written checkpoint

    Example:
        save_checkpoint(Path("cvae.json"), {"decoder": (net, params)}, {"seed": 0})
    """
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": dict(metadata),
        "networks": {
            role: network_to_dict(net, params) for role, (net, params) in networks.items()
        },
    }
    try:
        text = json.dumps(document, indent=1, allow_nan=False)
    except ValueError as e:
        raise ConfigurationError(f"Checkpoint contains non-finite values: {e}") from e

    atomic_write_text(Path(path), text + "\n")
    logger.info("Saved checkpoint %s (%s)", path, ", ".join(networks))
    return Path(path)


def load_checkpoint(path: Path) -> tuple[dict[str, NetworkEntry], dict[str, Any]]:
    """
    Read a checkpoint file.

    Args:
        path: Checkpoint file

    Returns:
        Tuple of (networks by role, metadata)

    Raises:
        ConfigurationError: If the file is missing, corrupted or incompatible
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Checkpoint not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Checkpoint {path} is corrupted: {e}") from e

    if document.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a dpp-forecaster checkpoint")

    version = document.get("version", "0.0")
    if not _is_version_compatible(version):
        raise ConfigurationError(f"Incompatible checkpoint version: {version}")

    networks = {
        role: network_from_dict(entry)
        for role, entry in document.get("networks", {}).items()
    }
    logger.debug("Loaded checkpoint %s (%s)", path, ", ".join(networks))
    return networks, dict(document.get("metadata", {}))
