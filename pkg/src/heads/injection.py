"""
Prompting a segmentation network with a tag embedding: project the
embedding to the channel count of a feature map and add it everywhere.
"""

import torch
import torch.nn as nn

from ..errors import ShapeError


class EmbeddingInjection(nn.Module):
    """Linear projection d_model -> channels (zero bias) broadcast-added over space."""

    def __init__(self, d_model: int, channels: int):
        super().__init__()
        self.d_model = d_model
        self.proj = nn.Linear(d_model, channels)
        nn.init.zeros_(self.proj.bias)

    def forward(self, features: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        """
        Args:
            features: (B, C, *spatial)
            embedding: (B, d_model) or (d_model,)

        Returns:
            Tensor shaped like `features`
        """
        if embedding.dim() == 1:
            embedding = embedding[None]
        if embedding.shape[-1] != self.d_model:
            raise ShapeError(f"Injection expects width {self.d_model}, got {embedding.shape[-1]}")
        offset = self.proj(embedding.to(features.dtype))
        offset = offset.view(offset.shape[0], offset.shape[1], *([1] * (features.dim() - 2)))
        return features + offset


def inject_embedding(injection: EmbeddingInjection, features: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
    """Functional entry point; output - input is constant over space."""
    return injection(features, embedding)
