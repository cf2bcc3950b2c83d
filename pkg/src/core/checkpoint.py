"""
Checkpoint files: a torch-serialized container with the configuration,
the special-token table and all named parameter tensors.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Tuple

import torch

from ..config import SystemConfig
from ..errors import CheckpointError
from .system import MultimodalSystem, build_system

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "medorch-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Path, system: MultimodalSystem, step: int) -> Path:
    """
    Write a self-describing checkpoint.

    Args:
        path: Output file (.pt)
        system: Model to save
        step: Optimizer steps taken

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    container: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": system.config.to_dict(),
        "special_tokens": system.tokenizer.special_table(),
        "vocab_size": system.config.orchestrator.vocab_size,
        "step": step,
        "state_dict": {k: v.detach().cpu() for k, v in system.state_dict().items()},
    }
    torch.save(container, path)
    logger.info(f"Saved checkpoint at step {step}: {path}")
    return path


def load_checkpoint(path: Path, device: str = "cpu") -> Tuple[MultimodalSystem, int]:
    """
    Rebuild a system from a checkpoint.

    Returns:
        (system, step)

    Raises:
        CheckpointError: Missing file, unknown format or mismatched tensors
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        container = torch.load(path, map_location=device, weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if not isinstance(container, dict) or container.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a MedOrch checkpoint")
    if container.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {container.get('version')} in {path}")

    config_dict = container["config"]
    config_dict["training"]["device"] = device
    config = SystemConfig.from_dict(config_dict)
    system = build_system(config)
    if system.tokenizer.special_table() != container["special_tokens"]:
        raise CheckpointError(f"Special-token table in {path} does not match its configuration")
    try:
        system.load_state_dict(container["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(f"Parameter mismatch loading {path}: {e}") from e

    logger.info(f"Loaded checkpoint {path} (step {container['step']})")
    return system, int(container["step"])
