"""
2D segmentation head: ResNet-style encoder, nearest-upsampling decoder with
skip connections, tag embedding injected at the bottleneck.
"""

from typing import List

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..coordinator.records import RANK_2D, ImageRecord
from ..errors import ConfigError, RankMismatchError
from .injection import EmbeddingInjection
from .outputs import SegMask


def _norm(channels: int, num_groups: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(num_groups, channels), channels)


class ResidualBlock2D(nn.Module):
    """Basic residual block; strided 1x1 projection on the shortcut when shapes change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, num_groups: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(out_channels, num_groups)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = _norm(out_channels, num_groups)
        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                _norm(out_channels, num_groups),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class DecoderBlock2D(nn.Module):
    def __init__(self, in_channels: int, skip_channels: int, out_channels: int, num_groups: int = 16):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_channels + skip_channels, out_channels, 3, padding=1, bias=False),
            _norm(out_channels, num_groups),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            _norm(out_channels, num_groups),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        return self.layers(torch.cat([x, skip], dim=1))


class UNet2D(nn.Module):
    """
    Encoder-decoder segmentation network prompted by a d_model embedding.

    Args:
        in_channels: Image channels
        d_model: Width of the tag embedding
        base_width: Channels of the full-resolution stem
        stages: Number of stride-2 residual stages
        num_groups: GroupNorm groups
    """

    def __init__(self, in_channels: int, d_model: int, base_width: int = 32, stages: int = 4, num_groups: int = 16):
        super().__init__()
        self.stages = stages
        widths = [base_width * (2 ** i) for i in range(stages)]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, base_width, 3, padding=1, bias=False),
            _norm(base_width, num_groups),
            nn.ReLU(inplace=True),
        )
        in_widths = [base_width] + widths[:-1]
        self.encoder = nn.ModuleList(
            ResidualBlock2D(i, o, stride=2, num_groups=num_groups) for i, o in zip(in_widths, widths)
        )
        self.injection = EmbeddingInjection(d_model, widths[-1])

        skip_widths = [base_width] + widths[:-1]  # stem, then every stage but the deepest
        decoder = []
        current = widths[-1]
        for skip in reversed(skip_widths):
            decoder.append(DecoderBlock2D(current, skip, skip, num_groups))
            current = skip
        self.decoder = nn.ModuleList(decoder)
        self.out = nn.Conv2d(base_width, 1, 1)

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.stages

    def forward(self, images: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        """
        Args:
            images: (B, C, H, W), H and W multiples of 2**stages
            embedding: (B, d_model)

        Returns:
            (B, H, W) foreground probabilities
        """
        factor = self.downsample_factor
        height, width = images.shape[-2:]
        if height % factor or width % factor:
            raise ConfigError(f"Image size {height}×{width} must be a multiple of {factor}")

        skips: List[torch.Tensor] = [self.stem(images)]
        x = skips[0]
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        x = self.injection(skips.pop(), embedding)
        for block in self.decoder:
            x = block(x, skips.pop())
        return torch.sigmoid(self.out(x))[:, 0]


def segment_2d(head: UNet2D, image: ImageRecord, embedding: torch.Tensor, threshold: float = 0.5) -> SegMask:
    """Segment one 2D record prompted by a tag embedding."""
    if image.rank != RANK_2D:
        raise RankMismatchError(f"segment_2d needs a 2D record, {image.id} is {image.rank}")
    param = next(head.parameters())
    with torch.no_grad():
        probs = head(image.to_tensor().to(param)[None], embedding.reshape(1, -1).to(param))[0]
    return SegMask(probabilities=probs.clamp(0.0, 1.0).cpu().numpy().astype(np.float32), threshold=threshold)
