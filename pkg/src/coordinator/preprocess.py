"""
Image and volume preprocessing for the coordinator.

All functions are pure given an explicit numpy Generator. Eval mode never
touches the generator, so two eval calls on the same input are bit-identical.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..config import PreprocessConfig
from ..errors import InputError, ShapeError
from .records import RANK_2D, RANK_3D, ImageRecord

logger = logging.getLogger(__name__)


def normalize_pixels(raw: np.ndarray) -> np.ndarray:
    """
    Bring raw pixel values into [0, 1] as float32.

    Integer images are divided by their dtype maximum. Float images already
    inside [0, 1] are kept; anything else is min-max scaled (a constant
    out-of-range image maps to zeros).
    """
    array = np.asarray(raw)
    if array.size == 0:
        raise InputError("Image has zero size")
    if np.issubdtype(array.dtype, np.integer):
        return (array.astype(np.float64) / np.iinfo(array.dtype).max).astype(np.float32)
    array = array.astype(np.float32)
    if not np.all(np.isfinite(array)):
        raise InputError("Image has non-finite pixel values")
    lo, hi = float(array.min()), float(array.max())
    if lo >= 0.0 and hi <= 1.0:
        return array
    if hi == lo:
        return np.zeros_like(array)
    return (array - lo) / (hi - lo)


def match_channels(array: np.ndarray, channels: int) -> np.ndarray:
    """Return a channels-last array with exactly `channels` channels."""
    if array.ndim == 2:
        array = array[..., None]
    current = array.shape[-1]
    if current == channels:
        return array
    if current == 1:
        return np.repeat(array, channels, axis=-1)
    if current == 4 and channels == 3:
        return array[..., :3]
    if channels == 1 and current in (3, 4):
        return array[..., :3].mean(axis=-1, keepdims=True)
    raise InputError(f"Cannot convert {current}-channel image to {channels} channels")


def sample_crop_fraction(rng: np.random.Generator, min_area: float = 0.5, max_area: float = 1.0) -> float:
    """Draw the fraction of image area kept by a random crop."""
    return float(rng.uniform(min_area, max_area))


def random_crop(array: np.ndarray, rng: np.random.Generator, min_area: float, max_area: float) -> np.ndarray:
    """
    Crop a window covering a random fraction of the area, original aspect ratio kept.

    Sides are rounded up, so the realized area never falls below `min_area`.
    """
    height, width = array.shape[:2]
    scale = np.sqrt(sample_crop_fraction(rng, min_area, max_area))
    crop_h = min(height, max(1, int(np.ceil(height * scale))))
    crop_w = min(width, max(1, int(np.ceil(width * scale))))
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    return array[top:top + crop_h, left:left + crop_w]


def resize_2d(array: np.ndarray, size: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a channels-last H×W×C array to size×size; identity when already that size."""
    if array.shape[0] == size and array.shape[1] == size:
        return array
    tensor = torch.from_numpy(np.ascontiguousarray(np.moveaxis(array, -1, 0), dtype=np.float32))[None]
    if mode == "nearest":
        out = F.interpolate(tensor, size=(size, size), mode="nearest")
    else:
        out = F.interpolate(tensor, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    return np.moveaxis(out[0].clamp(0.0, 1.0).numpy(), 0, -1)


def resize_3d(array: np.ndarray, size: Tuple[int, int, int], mode: str = "trilinear") -> np.ndarray:
    """Resize a channels-last D×H×W×C array; identity when already that size."""
    if tuple(array.shape[:3]) == tuple(size):
        return array
    tensor = torch.from_numpy(np.ascontiguousarray(np.moveaxis(array, -1, 0), dtype=np.float32))[None]
    if mode == "nearest":
        out = F.interpolate(tensor, size=tuple(size), mode="nearest")
    else:
        out = F.interpolate(tensor, size=tuple(size), mode="trilinear", align_corners=False)
    return np.moveaxis(out[0].clamp(0.0, 1.0).numpy(), 0, -1)


def preprocess_2d(
    raw: np.ndarray,
    train_mode: bool,
    rng: Optional[np.random.Generator],
    config: Optional[PreprocessConfig] = None,
    image_id: str = "img0",
    modality: str = "synthetic",
) -> ImageRecord:
    """
    Preprocess a 2D image for vision-language tasks.

    Args:
        raw: H×W or H×W×C image, any numeric dtype
        train_mode: Apply a random crop covering min..max of the area before resizing
        rng: Generator used in train mode
        config: Preprocessing settings
        image_id: Identifier of the resulting record ('imgK')
        modality: Imaging modality

    Returns:
        ImageRecord of shape image_size×image_size×channels_2d
    """
    config = config or PreprocessConfig()
    array = np.asarray(raw)
    if array.size == 0 or array.shape[0] == 0 or array.shape[1] == 0:
        raise InputError(f"Image {image_id} has zero size: shape {array.shape}")
    array = match_channels(normalize_pixels(array), config.channels_2d)

    if train_mode and config.augment:
        if rng is None:
            raise InputError("train_mode preprocessing needs an rng")
        array = random_crop(array, rng, config.min_crop_area, config.max_crop_area)

    array = resize_2d(array, config.image_size)
    return ImageRecord(id=image_id, modality=modality, rank=RANK_2D, pixels=np.ascontiguousarray(array))


def preprocess_2d_segmentation(
    raw: np.ndarray,
    mask: np.ndarray,
    train_mode: bool,
    rng: Optional[np.random.Generator],
    config: Optional[PreprocessConfig] = None,
    image_id: str = "img0",
    modality: str = "synthetic",
) -> Tuple[ImageRecord, np.ndarray]:
    """
    Preprocess a 2D image together with its binary mask.

    Both are resized (mask with nearest neighbour); in train mode a random
    horizontal flip is applied to both.

    Returns:
        (record, mask) with mask of shape image_size×image_size, values {0, 1}
    """
    config = config or PreprocessConfig()
    array = np.asarray(raw)
    mask = np.asarray(mask)
    if array.size == 0:
        raise InputError(f"Image {image_id} has zero size")
    if mask.shape[:2] != array.shape[:2]:
        raise ShapeError(f"Mask shape {mask.shape} does not match image shape {array.shape[:2]}")

    array = match_channels(normalize_pixels(array), config.channels_2d)
    mask = (mask > 0).astype(np.float32)[..., None]

    if train_mode and config.augment:
        if rng is None:
            raise InputError("train_mode preprocessing needs an rng")
        if rng.random() < config.hflip_prob:
            array = array[:, ::-1]
            mask = mask[:, ::-1]

    array = resize_2d(array, config.image_size)
    mask = resize_2d(mask, config.image_size, mode="nearest")[..., 0]
    record = ImageRecord(id=image_id, modality=modality, rank=RANK_2D, pixels=np.ascontiguousarray(array))
    return record, np.ascontiguousarray((mask > 0.5).astype(np.float32))


def preprocess_3d(
    raw: np.ndarray,
    mask: Optional[np.ndarray],
    train_mode: bool,
    rng: Optional[np.random.Generator],
    config: Optional[PreprocessConfig] = None,
    image_id: str = "img0",
    modality: str = "ct",
) -> Tuple[ImageRecord, Optional[np.ndarray]]:
    """
    Preprocess a volume (D×H×W or D×H×W×C) and optional D×H×W mask.

    In train mode the volume (and mask) is flipped over one randomly chosen
    spatial axis.

    Returns:
        (record, mask) resized to config.volume_size
    """
    config = config or PreprocessConfig()
    array = np.asarray(raw)
    if array.size == 0:
        raise InputError(f"Volume {image_id} has zero size")
    if array.ndim == 3:
        array = array[..., None]
    if array.ndim != 4:
        raise ShapeError(f"Volume {image_id} must be D×H×W[×C], got shape {array.shape}")
    array = normalize_pixels(array)
    if array.shape[-1] != config.channels_3d:
        array = match_channels(array, config.channels_3d)

    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != array.shape[:3]:
            raise ShapeError(f"Mask shape {mask.shape} does not match volume shape {array.shape[:3]}")
        mask = (mask > 0).astype(np.float32)[..., None]

    if train_mode and config.augment:
        if rng is None:
            raise InputError("train_mode preprocessing needs an rng")
        axis = int(rng.integers(0, 3))
        array = np.flip(array, axis=axis)
        if mask is not None:
            mask = np.flip(mask, axis=axis)

    array = resize_3d(array, config.volume_size)
    record = ImageRecord(id=image_id, modality=modality, rank=RANK_3D, pixels=np.ascontiguousarray(array))
    if mask is None:
        return record, None
    mask = resize_3d(mask, config.volume_size, mode="nearest")[..., 0]
    return record, np.ascontiguousarray((mask > 0.5).astype(np.float32))
