"""
Detection head: one normalized box per tag embedding.
"""

from typing import List

import torch
import torch.nn as nn

from ..errors import InputError, ShapeError
from .outputs import BoundingBox


class DetectionHead(nn.Module):
    """LayerNorm -> Linear(d, hidden) -> ReLU -> LayerNorm -> Linear(hidden, 4) -> sigmoid."""

    def __init__(self, d_model: int, hidden: int = 256):
        super().__init__()
        self.d_model = d_model
        self.mlp = nn.Sequential(
            nn.LayerNorm(d_model),
            nn.Linear(d_model, hidden),
            nn.ReLU(),
            nn.LayerNorm(hidden),
            nn.Linear(hidden, 4),
        )

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """
        Args:
            embeddings: (k, d_model)

        Returns:
            (k, 4) boxes as x1, y1, x2, y2 with x1 <= x2 and y1 <= y2
        """
        if embeddings.dim() != 2 or embeddings.shape[-1] != self.d_model:
            raise ShapeError(
                f"Detection head expects (k, {self.d_model}) embeddings, got {tuple(embeddings.shape)}"
            )
        raw = torch.sigmoid(self.mlp(embeddings))
        xs, ys = raw[:, 0::2], raw[:, 1::2]
        x1, x2 = xs.min(dim=1).values, xs.max(dim=1).values
        y1, y2 = ys.min(dim=1).values, ys.max(dim=1).values
        return torch.stack([x1, y1, x2, y2], dim=1)


def detect(head: DetectionHead, embeddings: torch.Tensor) -> List[BoundingBox]:
    """Run the head on k >= 1 embeddings and return k boxes."""
    if embeddings.dim() == 1:
        embeddings = embeddings[None]
    if embeddings.shape[0] == 0:
        raise InputError("detect needs at least one embedding")
    with torch.no_grad():
        boxes = head(embeddings).double().clamp(0.0, 1.0).cpu().tolist()
    return [BoundingBox(*row) for row in boxes]
