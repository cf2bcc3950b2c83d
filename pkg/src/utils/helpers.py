"""
Common helper utilities for MedOrch.
"""

import logging
import random
import shutil
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

logger = logging.getLogger(__name__)


def seed_everything(seed: int) -> np.random.Generator:
    """
    Seed python, numpy and torch; return a fresh numpy Generator for the run.

    Args:
        seed: Run seed

    Returns:
        np.random.Generator seeded with `seed`
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def zip_directory(
    dir_path: Path,
    output_path: Optional[Path] = None,
    exclude_dirs: Optional[List[str]] = None
) -> Path:
    """
    Create zip archive of a run directory.

    Args:
        dir_path: Directory to zip
        output_path: Output zip path (defaults to dir_path.zip)
        exclude_dirs: Subdirectory names to leave out (e.g. intermediate checkpoints)

    Returns:
        Path to created zip file
    """
    dir_path = Path(dir_path)
    exclude = set(exclude_dirs or [])
    output_path = Path(output_path) if output_path else dir_path.parent / f"{dir_path.name}.zip"

    logger.info(f"Zipping {dir_path} to {output_path}")

    staging = output_path.parent / f"_staging_{dir_path.name}"
    if staging.exists():
        shutil.rmtree(staging)
    shutil.copytree(dir_path, staging, ignore=lambda d, names: [n for n in names if n in exclude and Path(d) == dir_path])
    try:
        shutil.make_archive(str(output_path.with_suffix('')), 'zip', staging)
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    logger.info(f"Created zip archive: {output_path}")
    return output_path


def ensure_directory(path: Path) -> Path:
    """
    Ensure directory exists, create if necessary.

    Args:
        path: Directory path

    Returns:
        Path object
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def get_file_size_mb(file_path: Path) -> float:
    """File size in MB, 0 if missing."""
    file_path = Path(file_path)
    if not file_path.exists():
        return 0.0
    return file_path.stat().st_size / (1024 * 1024)


def count_parameters(module: torch.nn.Module, trainable_only: bool = False) -> int:
    """Number of scalar parameters of a module."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
