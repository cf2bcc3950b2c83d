"""
Image records and visual token blocks exchanged between the coordinator stages.
"""

import re
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from ..config import MODALITIES
from ..errors import InputError, RankMismatchError

RANK_2D = "2D"
RANK_3D = "3D"

_IMAGE_ID_RE = re.compile(r"^img(\d+)$")


def image_index(image_id: str) -> int:
    """Numeric index of an image id of the form 'imgK'."""
    match = _IMAGE_ID_RE.match(image_id)
    if not match:
        raise InputError(f"Image id must look like 'img<K>', got '{image_id}'")
    return int(match.group(1))


@dataclass
class ImageRecord:
    """A preprocessed 2D image (H×W×C) or 3D volume (D×H×W×C), values in [0, 1]."""

    id: str
    modality: str
    rank: str
    pixels: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InputError(f"Unknown modality '{self.modality}' for image {self.id}")
        expected_ndim = {RANK_2D: 3, RANK_3D: 4}.get(self.rank)
        if expected_ndim is None:
            raise InputError(f"Unknown rank '{self.rank}' for image {self.id}")
        if self.pixels.ndim != expected_ndim:
            raise RankMismatchError(
                f"{self.rank} record {self.id} needs {expected_ndim} axes, got shape {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise InputError(f"Image {self.id} has non-finite pixel values")

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return tuple(self.pixels.shape[:-1])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[-1])

    @property
    def index(self) -> int:
        return image_index(self.id)

    def to_tensor(self) -> torch.Tensor:
        """Channels-first float tensor: (C, H, W) or (C, D, H, W)."""
        array = np.moveaxis(self.pixels, -1, 0)
        return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))


@dataclass
class VisualTokenBlock:
    """Pooled and projected visual tokens of one image."""

    source_image_id: str
    tokens: torch.Tensor  # (P, d_model)

    def __post_init__(self):
        if self.tokens.dim() != 2:
            raise InputError(f"Visual tokens must be (P, d_model), got {tuple(self.tokens.shape)}")
        if not bool(torch.isfinite(self.tokens.detach()).all()):
            raise InputError(f"Visual tokens of {self.source_image_id} contain non-finite values")

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def index(self) -> int:
        return image_index(self.source_image_id)
