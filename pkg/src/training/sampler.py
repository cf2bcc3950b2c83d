"""
Domain-aware minibatch sampling.

Training data is partitioned by (modality, task). Each minibatch comes from
one group, chosen by first drawing a modality and then a task available for
that modality.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config import MODALITIES, TASK_KINDS
from ..errors import ManifestError, SamplerStateError

logger = logging.getLogger(__name__)

GroupKey = Tuple[str, str]  # (modality, task)


@dataclass
class TaskGroup:
    modality: str
    task: str
    sample_ids: List[str] = field(default_factory=list)

    @property
    def key(self) -> GroupKey:
        return (self.modality, self.task)

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass
class Minibatch:
    """Samples that all share one (modality, task) key."""

    key: GroupKey
    sample_ids: List[str]
    samples: list = field(default_factory=list)

    def __post_init__(self):
        self.check_homogeneous()

    def check_homogeneous(self) -> None:
        for sample in self.samples:
            if (sample.modality, sample.task) != self.key:
                raise SamplerStateError(
                    f"Minibatch {self.key} holds sample {sample.sample_id!r} of "
                    f"({sample.modality}, {sample.task})"
                )

    @property
    def modality(self) -> str:
        return self.key[0]

    @property
    def task(self) -> str:
        return self.key[1]

    def __len__(self) -> int:
        return len(self.sample_ids)


def partition_dataset(records: Iterable) -> Dict[GroupKey, TaskGroup]:
    """
    Group records by (modality, task).

    Args:
        records: Objects with `id`, `modality` and `task` attributes
                 (and optionally `rank`)

    Returns:
        Mapping (modality, task) -> TaskGroup; empty groups never appear

    Raises:
        ManifestError: Unknown modality or task, duplicate id, or a group
                       mixing 2D and 3D records
    """
    groups: Dict[GroupKey, TaskGroup] = {}
    ranks: Dict[GroupKey, str] = {}
    seen = set()
    for record in records:
        if record.modality not in MODALITIES:
            raise ManifestError(f"unknown modality '{record.modality}'", record_id=record.id)
        if record.task not in TASK_KINDS:
            raise ManifestError(f"unknown task '{record.task}'", record_id=record.id)
        if record.id in seen:
            raise ManifestError("duplicate record id", record_id=record.id)
        seen.add(record.id)

        key = (record.modality, record.task)
        rank = getattr(record, "rank", None)
        if rank is not None:
            if ranks.setdefault(key, rank) != rank:
                raise ManifestError(f"group {key} mixes {ranks[key]} and {rank} inputs", record_id=record.id)
        groups.setdefault(key, TaskGroup(modality=record.modality, task=record.task)).sample_ids.append(record.id)

    logger.info(f"Partitioned {len(seen)} records into {len(groups)} (modality, task) groups")
    return groups


class DomainAwareSampler:
    """
    Two-stage sampler: modality first, then a task of that modality.

    Args:
        groups: Output of partition_dataset
        batch_size: Maximum minibatch size
        modality_weights: Optional relative weights per modality (uniform otherwise)
        task_weights: Optional relative weights per task (uniform otherwise)
    """

    def __init__(
        self,
        groups: Mapping[GroupKey, TaskGroup],
        batch_size: int,
        modality_weights: Optional[Mapping[str, float]] = None,
        task_weights: Optional[Mapping[str, float]] = None,
    ):
        if not groups:
            raise SamplerStateError("Cannot sample minibatches from an empty set of groups")
        self.groups = dict(groups)
        self.batch_size = batch_size
        self.modalities: List[str] = sorted({m for m, _ in self.groups})
        self.tasks_by_modality: Dict[str, List[str]] = defaultdict(list)
        for modality, task in sorted(self.groups):
            self.tasks_by_modality[modality].append(task)
        self.modality_probs = _normalized(self.modalities, modality_weights)
        self.task_probs = {m: _normalized(ts, task_weights) for m, ts in self.tasks_by_modality.items()}

    def draw_key(self, rng: np.random.Generator) -> GroupKey:
        modality = self.modalities[int(rng.choice(len(self.modalities), p=self.modality_probs))]
        tasks = self.tasks_by_modality[modality]
        task = tasks[int(rng.choice(len(tasks), p=self.task_probs[modality]))]
        return modality, task

    def sample(self, rng: np.random.Generator) -> Minibatch:
        key = self.draw_key(rng)
        ids = self.groups[key].sample_ids
        replace = len(ids) < self.batch_size
        size = self.batch_size if replace else min(self.batch_size, len(ids))
        picks = rng.choice(len(ids), size=size, replace=replace)
        return Minibatch(key=key, sample_ids=[ids[int(i)] for i in picks])


def _normalized(names: Sequence[str], weights: Optional[Mapping[str, float]]) -> np.ndarray:
    raw = np.array([float(weights.get(n, 1.0)) if weights else 1.0 for n in names])
    if np.any(raw < 0) or raw.sum() <= 0:
        raise SamplerStateError(f"Sampling weights must be non-negative with a positive sum: {dict(zip(names, raw))}")
    return raw / raw.sum()


def sample_minibatch(
    groups: Mapping[GroupKey, TaskGroup],
    batch_size: int,
    rng: np.random.Generator,
    modality_weights: Optional[Mapping[str, float]] = None,
    task_weights: Optional[Mapping[str, float]] = None,
) -> Minibatch:
    """One domain-aware draw; see DomainAwareSampler."""
    return DomainAwareSampler(groups, batch_size, modality_weights, task_weights).sample(rng)
