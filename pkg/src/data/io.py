"""
Image, mask and volume file I/O.

2D images and masks are 8-bit PNG (masks encoded 0/255). Volumes and 3D
masks are raw little-endian blobs with a JSON sidecar next to them
(`<file>.json`, {"shape": [...], "dtype": "float32" | "uint8"}).
"""

import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image

from ..errors import DataError

logger = logging.getLogger(__name__)

VOLUME_DTYPES = {"float32": "<f4", "uint8": "u1"}


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_png(path: Path) -> np.ndarray:
    """Read a PNG as uint8, H×W×C (grayscale gets C = 1)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Image not found: {path}")
    with Image.open(path) as image:
        if image.mode not in ("L", "RGB", "RGBA"):
            image = image.convert("RGB")
        array = np.asarray(image, dtype=np.uint8)
    if array.ndim == 2:
        array = array[..., None]
    return array


def write_png(path: Path, array: np.ndarray) -> Path:
    """Write an H×W or H×W×{1,3,4} uint8 array as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DataError(f"PNG output must be uint8, got {array.dtype}")
    if array.ndim == 3 and array.shape[-1] == 1:
        array = array[..., 0]
    Image.fromarray(array).save(path, format="PNG")
    return path


def write_mask_png(path: Path, mask: np.ndarray, threshold: float = 0.5) -> Path:
    """Threshold a probability or binary mask and write it as 0/255 PNG."""
    binary = (np.asarray(mask) >= threshold).astype(np.uint8) * 255
    return write_png(path, binary)


def read_mask_png(path: Path) -> np.ndarray:
    """Read a 0/255 mask PNG as float32 {0, 1}, H×W."""
    array = read_png(path)
    return (array[..., 0] > 127).astype(np.float32)


def write_volume(path: Path, array: np.ndarray, dtype: str = "float32") -> Tuple[Path, Path]:
    """
    Write a raw volume blob plus its JSON sidecar.

    Returns:
        (blob path, sidecar path)
    """
    if dtype not in VOLUME_DTYPES:
        raise DataError(f"Unsupported volume dtype '{dtype}', expected one of {sorted(VOLUME_DTYPES)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(array, dtype=VOLUME_DTYPES[dtype])
    path.write_bytes(array.tobytes())
    sidecar = sidecar_path(path)
    sidecar.write_text(json.dumps({"shape": list(array.shape), "dtype": dtype}))
    return path, sidecar


def read_volume(path: Path) -> np.ndarray:
    """Read a raw volume blob using its sidecar; dtype defaults to float32."""
    path = Path(path)
    sidecar = sidecar_path(path)
    if not path.exists():
        raise DataError(f"Volume not found: {path}")
    if not sidecar.exists():
        raise DataError(f"Volume sidecar not found: {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        shape = tuple(int(s) for s in meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed volume sidecar {sidecar}: {e}")
    dtype = meta.get("dtype", "float32")
    if dtype not in VOLUME_DTYPES:
        raise DataError(f"Unsupported volume dtype '{dtype}' in {sidecar}")
    data = np.frombuffer(path.read_bytes(), dtype=VOLUME_DTYPES[dtype])
    if data.size != int(np.prod(shape)):
        raise DataError(f"Volume {path} holds {data.size} values but sidecar shape is {shape}")
    return data.reshape(shape).astype(np.float32 if dtype == "float32" else np.uint8)
