"""
Structured outputs of the vision heads.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class BoundingBox:
    """Normalized xyxy box."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        values = self.as_list()
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ShapeError(f"Box coordinates must lie in [0, 1], got {values}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ShapeError(f"Box corners out of order: {values}")

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @classmethod
    def from_sequence(cls, values) -> "BoundingBox":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


@dataclass
class SegMask:
    """Per-pixel (or per-voxel) foreground probabilities."""

    probabilities: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        if self.probabilities.ndim not in (2, 3):
            raise ShapeError(f"Mask must be H×W or D×H×W, got shape {self.probabilities.shape}")
        if self.probabilities.size and (self.probabilities.min() < 0.0 or self.probabilities.max() > 1.0):
            raise ShapeError("Mask probabilities must lie in [0, 1]")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.probabilities.shape)

    def binary(self) -> np.ndarray:
        return (self.probabilities >= self.threshold).astype(np.uint8)
