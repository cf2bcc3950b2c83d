"""
Low-rank adaptation of frozen linear layers.

y = W x + b + (alpha / rank) · B (A x), with W and b frozen, A Kaiming
initialized and B zero initialized so a fresh adapter is an exact no-op.
"""

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError


def lora_linear(
    base_weight: torch.Tensor,
    base_bias: Optional[torch.Tensor],
    lora_a: torch.Tensor,
    lora_b: torch.Tensor,
    scale: float,
    x: torch.Tensor,
) -> torch.Tensor:
    """
    Apply a LoRA-adapted linear map.

    Args:
        base_weight: (out, in) frozen weight
        base_bias: (out,) frozen bias or None
        lora_a: (rank, in)
        lora_b: (out, rank)
        scale: alpha / rank
        x: (..., in)

    Returns:
        (..., out)
    """
    out_features, in_features = base_weight.shape
    rank = lora_a.shape[0]
    if lora_a.shape != (rank, in_features) or lora_b.shape != (out_features, rank):
        raise ConfigError(
            f"LoRA shapes A{tuple(lora_a.shape)} B{tuple(lora_b.shape)} do not fit "
            f"base weight {tuple(base_weight.shape)}"
        )
    if x.shape[-1] != in_features:
        raise ConfigError(f"Input width {x.shape[-1]} does not match in_features {in_features}")
    return F.linear(x, base_weight, base_bias) + scale * F.linear(F.linear(x, lora_a), lora_b)


class LoRALinear(nn.Module):
    """nn.Linear with a frozen base and a trainable low-rank update."""

    def __init__(self, in_features: int, out_features: int, rank: int, alpha: float, bias: bool = True):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.lora_A = nn.Parameter(torch.empty(rank, in_features))
        self.lora_B = nn.Parameter(torch.zeros(out_features, rank))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        for p in self.base.parameters():
            p.requires_grad = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return lora_linear(self.base.weight, self.base.bias, self.lora_A, self.lora_B, self.scale, x)

    def merged_weight(self) -> torch.Tensor:
        """Base weight with the low-rank update folded in."""
        return self.base.weight + self.scale * (self.lora_B @ self.lora_A)

    def extra_repr(self) -> str:
        return f"in={self.base.in_features}, out={self.base.out_features}, rank={self.rank}, alpha={self.alpha}"
