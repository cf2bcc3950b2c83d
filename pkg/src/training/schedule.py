"""
Learning-rate schedule: linear warm-up, then cosine decay to the minimum.
"""

import math

from ..config import OptimizerSchedule
from ..errors import ConfigError


def lr_at(step: int, schedule: OptimizerSchedule) -> float:
    """
    Learning rate at an optimizer step.

    Linear from warmup_start_lr to max_lr over [0, warmup_steps], cosine from
    max_lr to min_lr over (warmup_steps, total_steps].

    Raises:
        ConfigError: step outside [0, total_steps]
    """
    if step < 0 or step > schedule.total_steps:
        raise ConfigError(f"step {step} outside [0, {schedule.total_steps}]")
    warmup = schedule.warmup_steps
    if step == warmup:
        return schedule.max_lr
    if step < warmup:
        return schedule.warmup_start_lr + (schedule.max_lr - schedule.warmup_start_lr) * step / warmup
    if step == schedule.total_steps:
        return schedule.min_lr
    progress = (step - warmup) / (schedule.total_steps - warmup)
    return schedule.min_lr + 0.5 * (schedule.max_lr - schedule.min_lr) * (1.0 + math.cos(math.pi * progress))


def set_learning_rate(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
