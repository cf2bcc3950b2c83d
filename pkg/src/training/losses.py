"""
Per-task loss terms and their composition.
"""

from dataclasses import dataclass, fields
from typing import Dict, Optional

import torch
import torch.nn.functional as F

from ..config import VL_TASKS, LossConfig
from ..errors import LossCompositionError, ShapeError

EPS = 1e-6


def _check_shapes(probs: torch.Tensor, target: torch.Tensor, name: str) -> None:
    if probs.shape != target.shape:
        raise ShapeError(f"{name}: prediction shape {tuple(probs.shape)} != target shape {tuple(target.shape)}")


def focal_loss(probs: torch.Tensor, target: torch.Tensor, gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    """
    Binary focal loss on probabilities, averaged over elements.

    positives: -alpha (1 - p)^gamma ln p
    negatives: -(1 - alpha) p^gamma ln(1 - p)
    """
    _check_shapes(probs, target, "focal_loss")
    p = probs.clamp(EPS, 1.0 - EPS)
    t = target.to(p.dtype)
    positive = -alpha * (1.0 - p).pow(gamma) * torch.log(p)
    negative = -(1.0 - alpha) * p.pow(gamma) * torch.log(1.0 - p)
    return (t * positive + (1.0 - t) * negative).mean()


def dice_loss(probs: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """1 - (2 sum(p t) + smooth) / (sum p + sum t + smooth) over all elements."""
    _check_shapes(probs, target, "dice_loss")
    t = target.to(probs.dtype)
    intersection = (probs * t).sum()
    return 1.0 - (2.0 * intersection + smooth) / (probs.sum() + t.sum() + smooth)


def box_l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between (k, 4) box tensors."""
    _check_shapes(pred, target, "box_l1_loss")
    return F.l1_loss(pred, target.to(pred.dtype))


@dataclass
class LossBreakdown:
    """Loss terms of one training step; terms not used by the task are 0."""

    lm: torch.Tensor
    box: torch.Tensor
    focal: torch.Tensor
    dice: torch.Tensor
    total: torch.Tensor
    step: int = 0

    def as_floats(self) -> Dict[str, float]:
        return {k: float(v) if isinstance(v, torch.Tensor) else v for k, v in ((f.name, getattr(self, f.name)) for f in fields(self))}

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t.detach()).all()) for t in (self.lm, self.box, self.focal, self.dice, self.total))


def compose_loss(
    task: str,
    components: Dict[str, Optional[torch.Tensor]],
    config: Optional[LossConfig] = None,
    step: int = 0,
) -> LossBreakdown:
    """
    Combine loss terms for a task kind.

    vision-language: total = lm
    detection:       total = lm + box_weight * box
    segmentation:    total = lm + focal_weight * focal + dice_weight * dice

    Raises:
        LossCompositionError: A component required by the task is missing
    """
    config = config or LossConfig()
    required = {"detection": ("lm", "box"), "segmentation": ("lm", "focal", "dice")}.get(task, ("lm",))
    if task not in VL_TASKS and task not in ("detection", "segmentation"):
        raise LossCompositionError(f"Unknown task kind '{task}'")
    missing = [name for name in required if components.get(name) is None]
    if missing:
        raise LossCompositionError(f"Task '{task}' is missing loss components: {missing}")

    lm = components["lm"]
    zero = lm.new_zeros(())
    box = components.get("box") if task == "detection" else None
    focal = components.get("focal") if task == "segmentation" else None
    dice = components.get("dice") if task == "segmentation" else None

    total = lm
    if task == "detection":
        total = total + config.box_weight * box
    elif task == "segmentation":
        total = total + config.focal_weight * focal + config.dice_weight * dice

    return LossBreakdown(
        lm=lm,
        box=box if box is not None else zero,
        focal=focal if focal is not None else zero,
        dice=dice if dice is not None else zero,
        total=total,
        step=step,
    )
