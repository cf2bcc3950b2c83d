"""
Path management for MedOrch runs.

Manages the layout of a training run directory in a centralized way.
"""

from pathlib import Path
from typing import Optional
import logging

from ..config import get_output_dir
from ..errors import ConfigError

logger = logging.getLogger(__name__)


class RunPaths:
    """Manages all paths of one run directory."""

    def __init__(self, run_dir: Optional[Path] = None, run_name: Optional[str] = None):
        """
        Initialize run paths.

        Args:
            run_dir: Run directory (defaults to <MEDORCH_OUTPUT_DIR>/<run_name>)
            run_name: Run name, used when run_dir is not given
        """
        if run_dir is None:
            if not run_name:
                raise ConfigError("Either run_dir or run_name is required")
            run_dir = get_output_dir() / run_name
        self.run_dir = Path(run_dir)
        self.run_name = run_name or self.run_dir.name

        self.checkpoint_dir = self.run_dir / "checkpoints"
        self.loss_log = self.run_dir / "loss_log.jsonl"
        self.train_log = self.run_dir / "train.log"
        self.config_file = self.run_dir / "config.json"
        self.loss_curve = self.run_dir / "loss_curve.png"
        self.final_checkpoint = self.run_dir / "checkpoint_final.pt"
        self.summary_file = self.run_dir / "RUN_SUMMARY.txt"

    def checkpoint(self, step: int) -> Path:
        """Step-indexed checkpoint path."""
        return self.checkpoint_dir / f"checkpoint_{step:07d}.pt"

    def create_all_directories(self) -> None:
        """Create all necessary directories."""
        for directory in (self.run_dir, self.checkpoint_dir):
            directory.mkdir(parents=True, exist_ok=True)
            logger.debug(f"Ensured directory exists: {directory}")

    def __str__(self) -> str:
        return (
            f"RunPaths(\n"
            f"  run_dir={self.run_dir}\n"
            f"  checkpoints={self.checkpoint_dir}\n"
            f"  loss_log={self.loss_log}\n"
            f")"
        )
