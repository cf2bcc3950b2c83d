"""
Training run orchestrator for MedOrch.

Coordinates the complete training pipeline: run directory setup, manifest
loading, model construction, the domain-aware training loop, checkpoints
and the run report.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import matplotlib.pyplot as plt
import pandas as pd

from ..config import SystemConfig
from ..data.dataset import SampleFactory
from ..data.manifest import ManifestRecord, filter_split, load_manifest
from ..errors import DataError
from ..instructions.bank import load_template_bank
from ..training.sampler import partition_dataset
from ..training.trainer import StepRecord, Trainer
from ..utils.helpers import count_parameters, seed_everything, zip_directory
from ..utils.logging import attach_log_file, detach_log_file, log_section
from .checkpoint import save_checkpoint
from .paths import RunPaths
from .system import MultimodalSystem, build_system

logger = logging.getLogger(__name__)


def plot_loss_curve(loss_log: Path, output_path: Path, window: int = 10) -> Optional[Path]:
    """
    Plot total loss per logged step, one line per (modality, task) group.

    Args:
        loss_log: JSONL loss log
        output_path: PNG file to write
        window: Rolling-mean window over logged steps

    Returns:
        output_path, or None when the log is empty
    """
    loss_log = Path(loss_log)
    if not loss_log.exists() or loss_log.stat().st_size == 0:
        logger.warning(f"No loss log to plot: {loss_log}")
        return None
    frame = pd.read_json(loss_log, lines=True)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for group, rows in frame.groupby("group", sort=True):
        rows = rows.sort_values("step")
        ax.plot(rows["step"], rows["total"].rolling(window, min_periods=1).mean(), label=group, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.grid(True, which="both", linestyle="--", linewidth=0.6, alpha=0.5)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output_path, dpi=160)
    plt.close(fig)
    return output_path


class TrainingRun:
    """Orchestrates one training run from a manifest."""

    def __init__(
        self,
        config: SystemConfig,
        manifest: Path,
        run_dir: Path,
        num_steps: Optional[int] = None,
        system: Optional[MultimodalSystem] = None,
        start_step: int = 0,
    ):
        """
        Initialize a training run.

        Args:
            config: Full configuration
            manifest: JSON Lines manifest; its train split is used
            run_dir: Run output directory
            num_steps: Steps to run (defaults to schedule.total_steps - start_step)
            system: Existing system to continue training (built from config otherwise)
            start_step: Optimizer step the system has already taken
        """
        self.config = config
        self.manifest = Path(manifest)
        self.paths = RunPaths(run_dir=run_dir)
        self.num_steps = num_steps if num_steps is not None else config.schedule.total_steps - start_step
        self.system = system
        self.start_step = start_step
        self.start_time = datetime.now()
        self.trainer: Optional[Trainer] = None
        self.records: List[StepRecord] = []

    def run(self, create_zip: bool = False) -> Path:
        """
        Execute the complete training pipeline.

        Returns:
            Path to the final checkpoint

        Raises:
            MedOrchError: Any validation or runtime failure, after logging it
        """
        log_handler = attach_log_file(self.paths.train_log)
        try:
            logger.info("=" * 60)
            logger.info(f"MedOrch training run: {self.paths.run_name}")
            logger.info("=" * 60)
            logger.info(f"Start time: {self.start_time}")

            log_section(logger, "Phase 1: Setup", self.start_time)
            self._setup()

            log_section(logger, "Phase 2: Data", self.start_time)
            train_records = self._load_data()

            log_section(logger, "Phase 3: Model", self.start_time)
            self._build_model(train_records)

            log_section(logger, "Phase 4: Training", self.start_time)
            self.records = self.trainer.train(
                self.num_steps, loss_log=self.paths.loss_log, on_checkpoint=self._save_step_checkpoint,
            )

            log_section(logger, "Phase 5: Checkpoint & Report", self.start_time)
            final = save_checkpoint(self.paths.final_checkpoint, self.system, self.trainer.step)
            plot_loss_curve(self.paths.loss_log, self.paths.loss_curve)
            self._write_summary()
            if create_zip:
                zip_directory(self.paths.run_dir, exclude_dirs=["checkpoints"])

            elapsed = datetime.now() - self.start_time
            logger.info("=" * 60)
            logger.info("✓ Training run complete!")
            logger.info(f"Total time: {elapsed}")
            logger.info(f"Output: {self.paths.run_dir}")
            logger.info("=" * 60)
            return final

        except Exception as e:
            logger.error(f"Training run failed: {e}")
            raise
        finally:
            detach_log_file(log_handler)

    def _setup(self) -> None:
        self.paths.create_all_directories()
        with open(self.paths.config_file, "w") as f:
            json.dump(self.config.to_dict(), f, indent=2)
        logger.info(f"   ✓ Run directory: {self.paths.run_dir}")

    def _load_data(self) -> List[ManifestRecord]:
        records = load_manifest(self.manifest)
        train_records = filter_split(records, "train")
        if not train_records:
            raise DataError(f"Manifest {self.manifest} has no train records")
        logger.info(f"   ✓ {len(train_records)} train records of {len(records)}")
        return train_records

    def _build_model(self, train_records: List[ManifestRecord]) -> None:
        seed = self.config.training.seed
        seed_everything(seed)
        if self.system is None:
            self.system = build_system(self.config, seed=seed)
        groups = partition_dataset(train_records)
        for (modality, task), group in sorted(groups.items()):
            logger.info(f"   {modality}/{task}: {len(group)} samples")
        factory = SampleFactory(train_records, self.config, bank=load_template_bank(), train_mode=True)
        self.trainer = Trainer(self.system, self.config, groups, factory)
        self.trainer.step = self.start_step
        logger.info(f"   ✓ Model: {count_parameters(self.system):,} parameters "
                    f"({count_parameters(self.system, trainable_only=True):,} trainable)")

    def _save_step_checkpoint(self, step: int) -> None:
        save_checkpoint(self.paths.checkpoint(step), self.system, step)

    def _write_summary(self) -> None:
        last = self.records[-1] if self.records else None
        summary = (
            f"{'=' * 60}\n"
            f"Run Summary: {self.paths.run_name}\n"
            f"{'=' * 60}\n\n"
            f"Manifest: {self.manifest}\n"
            f"Steps: {self.trainer.step}\n"
            f"Stage: {self.config.training.stage}\n"
            f"Trainable groups: {', '.join(self.trainer.param_groups)}\n"
        )
        if last:
            summary += f"Last logged loss: {last.total:.4f} ({last.group})\n"
        summary += f"\nOutput:\n  Location: {self.paths.run_dir}\n{'=' * 60}\n"
        self.paths.summary_file.write_text(summary)
        logger.info(f"   ✓ Summary saved: {self.paths.summary_file.name}")
