"""
General vision encoders of the coordinator.

The 2D encoder is a patch-embedding transformer with global or windowed
attention; the 3D encoder is the contracting path of a 3D UNet. Both return
a sequence of raw feature vectors that the vision-language adapters pool
and project.
"""

import logging
from typing import List

import torch
import torch.nn as nn

from ..config import Encoder2DConfig, Encoder3DConfig
from ..errors import ConfigError, RankMismatchError
from .records import RANK_2D, RANK_3D, ImageRecord

logger = logging.getLogger(__name__)


def sincos_position_embedding_2d(grid_h: int, grid_w: int, dim: int) -> torch.Tensor:
    """Fixed 2D sine-cosine position table of shape (grid_h * grid_w, dim)."""
    if dim % 4 != 0:
        raise ConfigError(f"Position embedding width must be a multiple of 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys, xs = torch.meshgrid(
        torch.arange(grid_h, dtype=torch.float64),
        torch.arange(grid_w, dtype=torch.float64),
        indexing="ij",
    )
    out_y = ys.reshape(-1, 1) * omega[None]
    out_x = xs.reshape(-1, 1) * omega[None]
    table = torch.cat([out_y.sin(), out_y.cos(), out_x.sin(), out_x.cos()], dim=1)
    return table.float()


def window_attention_mask(grid_h: int, grid_w: int, window: int) -> torch.Tensor:
    """
    Boolean (N, N) mask that keeps attention inside window×window patch tiles.

    True marks a blocked pair, as nn.TransformerEncoder expects. Edge tiles
    are smaller when the grid is not a multiple of the window.
    """
    if window < 1:
        raise ConfigError(f"window_size must be >= 1, got {window}")
    ys, xs = torch.meshgrid(torch.arange(grid_h), torch.arange(grid_w), indexing="ij")
    tiles_per_row = -(-grid_w // window)
    tile = ((ys // window) * tiles_per_row + xs // window).reshape(-1)
    return tile[:, None] != tile[None, :]


class PatchEncoder2D(nn.Module):
    """Patch embedding followed by a pre-norm transformer encoder, optionally windowed."""

    def __init__(self, config: Encoder2DConfig, in_channels: int = 3):
        super().__init__()
        self.config = config
        self.patch_embed = nn.Conv2d(in_channels, config.d_vis, kernel_size=config.patch_size,
                                     stride=config.patch_size)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_vis,
            nhead=config.n_heads,
            dim_feedforward=4 * config.d_vis,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=config.n_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(config.d_vis)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, N, d_vis) patch features without positions."""
        patch = self.config.patch_size
        height, width = images.shape[-2:]
        if height % patch or width % patch:
            raise ConfigError(f"Image size {height}×{width} is not a multiple of patch size {patch}")
        features = self.patch_embed(images)
        return features.flatten(2).transpose(1, 2)

    def encode_patches(self, patches: torch.Tensor, grid_h: int, grid_w: int) -> torch.Tensor:
        """Add positions to (B, N, d_vis) patch features and run the transformer."""
        pos = sincos_position_embedding_2d(grid_h, grid_w, self.config.d_vis).to(patches)
        mask = None
        if self.config.window_size is not None:
            mask = window_attention_mask(grid_h, grid_w, self.config.window_size).to(patches.device)
        return self.norm(self.blocks(patches + pos[None], mask=mask))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        patch = self.config.patch_size
        patches = self.patchify(images)
        return self.encode_patches(patches, images.shape[-2] // patch, images.shape[-1] // patch)


class ConvBlock3D(nn.Module):
    """Two (Conv3d, GroupNorm, LeakyReLU) layers."""

    def __init__(self, in_channels: int, out_channels: int, num_groups: int = 16):
        super().__init__()
        groups = min(num_groups, out_channels)
        self.layers = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1, padding_mode="replicate"),
            nn.GroupNorm(groups, out_channels),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1, padding_mode="replicate"),
            nn.GroupNorm(groups, out_channels),
            nn.LeakyReLU(0.01, inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class UNet3DEncoder(nn.Module):
    """Contracting path of a 3D UNet; also used by the 3D segmentation head."""

    def __init__(self, in_channels: int, base_width: int = 16, n_down: int = 3, num_groups: int = 16):
        super().__init__()
        self.n_down = n_down
        widths = [base_width * (2 ** i) for i in range(n_down + 1)]
        self.widths = widths
        self.stem = ConvBlock3D(in_channels, widths[0], num_groups)
        self.down = nn.ModuleList(
            ConvBlock3D(widths[i], widths[i + 1], num_groups) for i in range(n_down)
        )
        self.pool = nn.MaxPool3d(2)

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.n_down

    def check_shape(self, spatial: torch.Size) -> None:
        factor = self.downsample_factor
        if any(int(s) % factor for s in spatial):
            raise ConfigError(
                f"Volume dims {tuple(int(s) for s in spatial)} must be multiples of {factor} "
                f"({self.n_down} downsamplings)"
            )

    def forward_features(self, volumes: torch.Tensor) -> List[torch.Tensor]:
        """All encoder feature maps, full resolution first, bottleneck last."""
        self.check_shape(volumes.shape[-3:])
        features = [self.stem(volumes)]
        for block in self.down:
            features.append(block(self.pool(features[-1])))
        return features

    def forward(self, volumes: torch.Tensor) -> torch.Tensor:
        return self.forward_features(volumes)[-1]


class VolumeEncoder3D(nn.Module):
    """Flattens the 3D UNet bottleneck into a token sequence."""

    def __init__(self, config: Encoder3DConfig, in_channels: int = 1):
        super().__init__()
        self.config = config
        self.encoder = UNet3DEncoder(in_channels, config.base_width, config.n_down, config.num_groups)

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def forward(self, volumes: torch.Tensor) -> torch.Tensor:
        """(B, C, D, H, W) -> (B, D'·H'·W', out_channels)."""
        bottleneck = self.encoder(volumes)
        return bottleneck.flatten(2).transpose(1, 2)


def encode_2d(encoder: PatchEncoder2D, record: ImageRecord) -> torch.Tensor:
    """
    Encode one 2D record into raw visual feature vectors.

    Returns:
        (N_raw, d_vis) tensor, N_raw = (H / patch) · (W / patch)
    """
    if record.rank != RANK_2D:
        raise RankMismatchError(f"encode_2d needs a 2D record, {record.id} is {record.rank}")
    param = next(encoder.parameters())
    return encoder(record.to_tensor().to(param)[None])[0]


def encode_3d(encoder: VolumeEncoder3D, record: ImageRecord) -> torch.Tensor:
    """
    Encode one 3D record into raw visual feature vectors.

    Returns:
        (N_raw, out_channels) tensor of flattened bottleneck positions
    """
    if record.rank != RANK_3D:
        raise RankMismatchError(f"encode_3d needs a 3D record, {record.id} is {record.rank}")
    param = next(encoder.parameters())
    return encoder(record.to_tensor().to(param)[None])[0]


def expected_token_count_2d(image_size: int, patch_size: int) -> int:
    """Raw token count of the 2D encoder for a square image."""
    return (image_size // patch_size) ** 2
