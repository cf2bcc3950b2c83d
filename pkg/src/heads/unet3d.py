"""
3D segmentation head: the 3D UNet encoder shared in design with the
coordinator's volume encoder, plus a mirrored decoder.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..coordinator.encoders import ConvBlock3D, UNet3DEncoder
from ..coordinator.records import RANK_3D, ImageRecord
from ..errors import RankMismatchError
from .injection import EmbeddingInjection
from .outputs import SegMask


class UNet3D(nn.Module):
    def __init__(self, in_channels: int, d_model: int, base_width: int = 16, n_down: int = 3, num_groups: int = 16):
        super().__init__()
        self.encoder = UNet3DEncoder(in_channels, base_width, n_down, num_groups)
        widths = self.encoder.widths
        self.injection = EmbeddingInjection(d_model, widths[-1])
        self.decoder = nn.ModuleList(
            ConvBlock3D(widths[i + 1] + widths[i], widths[i], num_groups) for i in reversed(range(n_down))
        )
        self.out = nn.Conv3d(widths[0], 1, 1)

    def forward(self, volumes: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        """
        Args:
            volumes: (B, C, D, H, W), dims multiples of 2**n_down
            embedding: (B, d_model)

        Returns:
            (B, D, H, W) foreground probabilities
        """
        features = self.encoder.forward_features(volumes)
        x = self.injection(features.pop(), embedding)
        for block in self.decoder:
            skip = features.pop()
            x = F.interpolate(x, size=skip.shape[-3:], mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.out(x))[:, 0]


def segment_3d(head: UNet3D, volume: ImageRecord, embedding: torch.Tensor, threshold: float = 0.5) -> SegMask:
    """Segment one volume prompted by a tag embedding."""
    if volume.rank != RANK_3D:
        raise RankMismatchError(f"segment_3d needs a 3D record, {volume.id} is {volume.rank}")
    param = next(head.parameters())
    with torch.no_grad():
        probs = head(volume.to_tensor().to(param)[None], embedding.reshape(1, -1).to(param))[0]
    return SegMask(probabilities=probs.clamp(0.0, 1.0).cpu().numpy().astype(np.float32), threshold=threshold)
