"""
Vision-language adapter: adaptive average pooling to a fixed token count,
layer normalization, then a linear projection into the language space.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InputError, ShapeError
from .records import VisualTokenBlock


class VisionLanguageAdapter(nn.Module):
    """Three-layer adapter; one independent instance per encoder rank."""

    def __init__(self, d_vis: int, d_model: int, pooled_tokens: int = 9):
        super().__init__()
        self.d_vis = d_vis
        self.pooled_tokens = pooled_tokens
        self.norm = nn.LayerNorm(d_vis)
        self.proj = nn.Linear(d_vis, d_model)

    def pool(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, N_raw, d_vis) -> (B, P, d_vis) by adaptive average pooling over the token axis."""
        if tokens.shape[1] == 0:
            raise InputError("Cannot adapt an empty visual token sequence")
        if tokens.shape[-1] != self.d_vis:
            raise ShapeError(f"Adapter expects width {self.d_vis}, got {tokens.shape[-1]}")
        return F.adaptive_avg_pool1d(tokens.transpose(1, 2), self.pooled_tokens).transpose(1, 2)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.proj(self.norm(self.pool(tokens)))


def adapt_visual_tokens(adapter: VisionLanguageAdapter, raw_tokens: torch.Tensor, image_id: str) -> VisualTokenBlock:
    """
    Map one image's raw encoder tokens to a VisualTokenBlock.

    Args:
        adapter: The adapter matching the encoder that produced the tokens
        raw_tokens: (N_raw, d_vis)
        image_id: Source image id ('imgK')

    Returns:
        VisualTokenBlock with exactly `pooled_tokens` vectors of width d_model
    """
    if raw_tokens.dim() != 2 or raw_tokens.shape[0] == 0:
        raise InputError(f"Raw tokens for {image_id} must be a nonempty (N, d) matrix, "
                         f"got {tuple(raw_tokens.shape)}")
    return VisualTokenBlock(source_image_id=image_id, tokens=adapter(raw_tokens[None])[0])
