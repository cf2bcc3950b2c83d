"""
Domain-aware minibatch gradient descent over the full system.

Each step draws one homogeneous (modality, task) minibatch, runs the
coordinator and orchestrator with teacher forcing, feeds the target's
task-tag embeddings into the matching heads and applies one AdamW update
at the scheduled learning rate.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from ..config import SystemConfig
from ..coordinator.records import RANK_3D
from ..core.system import MultimodalSystem
from ..errors import ConfigError, DataError, DivergenceError
from ..instructions.samples import TrainingSample
from ..orchestrator.generation import TagKind
from ..utils.logging import ProgressLogger
from .losses import LossBreakdown, box_l1_loss, compose_loss, dice_loss, focal_loss
from .sampler import DomainAwareSampler, GroupKey, Minibatch, TaskGroup
from .schedule import lr_at, set_learning_rate

logger = logging.getLogger(__name__)

SampleBuilder = Callable[[str, np.random.Generator], TrainingSample]


def trainable_parameter_groups(system: MultimodalSystem, groups: Sequence[str]) -> Dict[str, List[nn.Parameter]]:
    """
    Mark exactly the parameters of the named groups as trainable.

    Args:
        system: Model
        groups: Subset of lora, special_tokens, adapters, encoders, heads

    Returns:
        Group name -> parameters, for the selected groups only
    """
    for param in system.parameters():
        param.requires_grad = False
    selected: Dict[str, List[nn.Parameter]] = {}
    for name, named in system.named_parameter_groups():
        if name in groups:
            params = [p for _, p in named]
            for p in params:
                p.requires_grad = True
            selected[name] = params
    unknown = set(groups) - {name for name, _ in system.named_parameter_groups()}
    if unknown:
        raise ConfigError(f"Unknown trainable groups: {sorted(unknown)}")
    return selected


@dataclass
class StepRecord:
    """One line of the JSONL loss log."""

    step: int
    group: str
    lm: float
    focal: float
    dice: float
    box: float
    total: float
    lr: float


class Trainer:
    """
    Single-writer training loop.

    Args:
        system: Model to train
        config: Full configuration (schedule, loss, training sections used)
        groups: (modality, task) groups from partition_dataset
        build_sample: Callable materializing a TrainingSample from an id
    """

    def __init__(
        self,
        system: MultimodalSystem,
        config: SystemConfig,
        groups: Mapping[GroupKey, TaskGroup],
        build_sample: SampleBuilder,
    ):
        self.system = system
        self.config = config
        self.schedule = config.schedule
        self.build_sample = build_sample
        self.sampler = DomainAwareSampler(
            groups, config.training.batch_size,
            config.training.modality_weights, config.training.task_weights,
        )
        self.rng = np.random.default_rng(config.training.seed)
        self.param_groups = trainable_parameter_groups(system, config.training.trainable_groups)
        self.trainable = [p for params in self.param_groups.values() for p in params]
        self.optimizer = torch.optim.AdamW(
            [{"params": params, "name": name} for name, params in self.param_groups.items()],
            lr=lr_at(0, self.schedule),
            weight_decay=self.schedule.weight_decay,
        )
        self.step = 0
        n_trainable = sum(p.numel() for p in self.trainable)
        logger.info(f"Trainable groups: {', '.join(self.param_groups)} ({n_trainable:,} parameters)")

    def next_batch(self) -> Minibatch:
        """Draw a minibatch and materialize its samples."""
        drawn = self.sampler.sample(self.rng)
        samples = [self.build_sample(sample_id, self.rng) for sample_id in drawn.sample_ids]
        return Minibatch(key=drawn.key, sample_ids=drawn.sample_ids, samples=samples)

    def compute_loss(self, batch: Minibatch, step: int = 0) -> LossBreakdown:
        """Forward the batch and compose the task's loss."""
        samples: List[TrainingSample] = batch.samples
        forward = self.system.forward_batch(
            [s.images for s in samples], [s.instruction for s in samples], [s.target for s in samples],
        )
        components = {"lm": forward.output.lm_loss}
        if batch.task == "detection":
            components["box"] = self._box_loss(samples, forward.tag_events, forward.output.lm_loss)
        elif batch.task == "segmentation":
            components["focal"], components["dice"] = self._mask_losses(samples, forward.tag_events)
        return compose_loss(batch.task, components, self.config.loss, step)

    def _box_loss(self, samples, tag_events, reference: torch.Tensor) -> torch.Tensor:
        embeddings, targets = [], []
        for sample, events in zip(samples, tag_events):
            det = [e for e in events if e.kind == TagKind.DET]
            if len(det) != len(sample.boxes):
                raise DataError(f"Sample {sample.sample_id!r}: {len(det)} <DET> tags for {len(sample.boxes)} boxes")
            embeddings.extend(e.embedding for e in det)
            targets.extend(box.as_list() for _, box in sample.boxes)
        if not embeddings:
            return reference.new_zeros(())
        pred = self.system.detection_head(torch.stack(embeddings))
        return box_l1_loss(pred, torch.tensor(targets, dtype=pred.dtype, device=pred.device))

    def _mask_losses(self, samples, tag_events):
        loss_cfg = self.config.loss
        rank = samples[0].rank
        kind = TagKind.SEG3D if rank == RANK_3D else TagKind.SEG2D
        head = self.system.unet3d if rank == RANK_3D else self.system.unet2d
        param = next(head.parameters())

        images, embeddings, masks = [], [], []
        for sample, events in zip(samples, tag_events):
            seg = [e for e in events if e.kind == kind]
            if not seg:
                raise DataError(f"Sample {sample.sample_id!r}: target has no {kind.value} tag")
            main = min(sample.images, key=lambda r: r.index)
            images.append(main.to_tensor())
            embeddings.append(seg[0].embedding)
            masks.append(torch.from_numpy(sample.mask))
        probs = head(torch.stack(images).to(param), torch.stack(embeddings).to(param))
        target = torch.stack(masks).to(probs)
        return (
            focal_loss(probs, target, loss_cfg.focal_gamma, loss_cfg.focal_alpha),
            dice_loss(probs, target, loss_cfg.dice_smooth),
        )

    def train_step(self, batch: Minibatch, step: Optional[int] = None) -> LossBreakdown:
        """
        One AdamW update on a homogeneous minibatch.

        Raises:
            DivergenceError: Non-finite loss; no update is applied
        """
        step = self.step if step is None else step
        batch.check_homogeneous()
        lr = lr_at(min(step, self.schedule.total_steps), self.schedule)
        set_learning_rate(self.optimizer, lr)

        self.system.train()
        self.optimizer.zero_grad(set_to_none=True)
        breakdown = self.compute_loss(batch, step)
        if not breakdown.is_finite():
            group = f"{batch.modality}/{batch.task}"
            logger.error(f"Divergence at step {step} in group {group}: {breakdown.as_floats()}")
            raise DivergenceError(step, group, breakdown.as_floats())

        breakdown.total.backward()
        if self.config.training.grad_clip and self.config.training.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.trainable, self.config.training.grad_clip)
        self.optimizer.step()
        self.step = step + 1
        return breakdown

    def train(
        self,
        num_steps: int,
        loss_log: Optional[Path] = None,
        on_checkpoint: Optional[Callable[[int], None]] = None,
    ) -> List[StepRecord]:
        """
        Run `num_steps` steps, appending a StepRecord to `loss_log` every log_every steps.

        Args:
            num_steps: Steps to run from the current step
            loss_log: JSONL file, appended to
            on_checkpoint: Called with the step count every checkpoint_every steps

        Returns:
            All logged records
        """
        cfg = self.config.training
        progress = ProgressLogger(logger, num_steps, "Training")
        records: List[StepRecord] = []
        log_file = open(loss_log, "a") if loss_log else None
        try:
            for i in range(num_steps):
                batch = self.next_batch()
                step = self.step
                breakdown = self.train_step(batch, step)
                if step % cfg.log_every == 0 or i == num_steps - 1:
                    values = breakdown.as_floats()
                    record = StepRecord(
                        step=step, group=f"{batch.modality}/{batch.task}",
                        lm=values["lm"], focal=values["focal"], dice=values["dice"], box=values["box"],
                        total=values["total"], lr=self.optimizer.param_groups[0]["lr"],
                    )
                    records.append(record)
                    if log_file:
                        log_file.write(json.dumps(record.__dict__) + "\n")
                        log_file.flush()
                    logger.debug(f"step {step} {record.group} total={record.total:.4f} lr={record.lr:.2e}")
                if on_checkpoint and cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    on_checkpoint(self.step)
                progress.update(last_loss=breakdown.total.item())
        finally:
            if log_file:
                log_file.close()
        progress.finish()
        return records
