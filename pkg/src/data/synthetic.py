"""
Synthetic shapes dataset generator.

Produces colored shapes on a dark canvas with exact masks, tight boxes,
class labels and templated captions, for every (modality, task) count in a
SyntheticSpec. Volumetric modalities (ct, mr) get 3D volumes with cuboid,
ellipsoid and cross objects. Output is a pure function of the spec.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..config import MODALITIES, TASK_KINDS
from ..errors import ConfigError
from .io import write_mask_png, write_png, write_volume
from .manifest import BoxTarget, ManifestRecord, write_manifest

logger = logging.getLogger(__name__)

VOLUMETRIC_MODALITIES = ("ct", "mr")
DEFAULT_SHAPES = {"rectangle": "square", "ellipse": "circle", "cross": "cross"}
TASKS_3D = ("captioning", "classification", "segmentation", "vqa")


@dataclass
class SyntheticSpec:
    """
    Args:
        seed: Generator seed
        counts: modality -> task -> number of samples
        image_size: Square 2D canvas size
        volume_size: D, H, W of 3D volumes
        shapes: Shape kind -> class name
        noise: Gaussian noise std in [0, 1] intensity units
        splits: Split name -> fraction, must sum to 1
    """

    seed: int = 0
    counts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    image_size: int = 64
    volume_size: Tuple[int, int, int] = (16, 32, 32)
    shapes: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SHAPES))
    noise: float = 0.02
    splits: Dict[str, float] = field(default_factory=lambda: {"train": 1.0})

    def __post_init__(self):
        self.volume_size = tuple(int(v) for v in self.volume_size)
        unknown_kinds = set(self.shapes) - set(DEFAULT_SHAPES)
        if unknown_kinds or not self.shapes:
            raise ConfigError(f"Shape vocabulary must use {sorted(DEFAULT_SHAPES)}, got {sorted(self.shapes)}")
        if len(set(self.shapes.values())) != len(self.shapes):
            raise ConfigError("Shape class names must be distinct")
        if self.image_size < 16 or self.image_size % 16:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if any(v < 8 or v % 8 for v in self.volume_size):
            raise ConfigError(f"volume_size entries must be multiples of 8, got {self.volume_size}")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"noise must be in [0, 1], got {self.noise}")
        if abs(sum(self.splits.values()) - 1.0) > 1e-9 or set(self.splits) - {"train", "val", "test"}:
            raise ConfigError(f"splits must be fractions over train/val/test summing to 1, got {self.splits}")
        for modality, tasks in self.counts.items():
            if modality not in MODALITIES:
                raise ConfigError(f"Unknown modality '{modality}' in counts")
            for task, count in tasks.items():
                if task not in TASK_KINDS:
                    raise ConfigError(f"Unknown task '{task}' in counts")
                if count < 0:
                    raise ConfigError(f"Count for {modality}/{task} must be >= 0, got {count}")
                if modality in VOLUMETRIC_MODALITIES and task not in TASKS_3D:
                    raise ConfigError(f"Task '{task}' is not generated for volumetric modality '{modality}'")

    @classmethod
    def from_json(cls, path: Path) -> "SyntheticSpec":
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Malformed synthetic spec {path}: {e}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**data)


# =============================================================================
# Rasterization
# =============================================================================

def rasterize(kind: str, shape: Tuple[int, ...], center: Tuple[float, ...], radii: Tuple[float, ...]) -> np.ndarray:
    """
    Boolean mask of one shape on a grid of `shape` (2D or 3D).

    rectangle: axis-aligned box; ellipse: ellipse/ellipsoid; cross: one bar
    per axis through the center, bar half-width a third of the radius.
    """
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    offsets = [(g + 0.5 - c) / r for g, c, r in zip(grids, center, radii)]
    if kind == "rectangle":
        mask = np.ones(shape, dtype=bool)
        for o in offsets:
            mask = mask & (np.abs(o) <= 1.0)
        return mask
    if kind == "ellipse":
        return sum(o ** 2 for o in offsets) <= 1.0
    if kind == "cross":
        inside = [np.abs(o) <= 1.0 for o in offsets]
        thin = [np.abs(o) <= 1.0 / 3.0 for o in offsets]
        mask = np.zeros(shape, dtype=bool)
        for axis in range(len(shape)):
            bar = np.ones(shape, dtype=bool)
            for other in range(len(shape)):
                bar = bar & (inside[other] if other == axis else thin[other])
            mask = mask | bar
        return mask
    raise ConfigError(f"Unknown shape kind '{kind}'")


def tight_box(mask: np.ndarray) -> List[float]:
    """Normalized xyxy bounding rectangle of a nonempty 2D mask."""
    rows, cols = ndimage.find_objects(mask.astype(np.int32))[0]
    height, width = mask.shape
    return [cols.start / width, rows.start / height, cols.stop / width, rows.stop / height]


@dataclass
class PlacedShape:
    kind: str
    class_name: str
    mask: np.ndarray
    color: np.ndarray


class SceneBuilder:
    """Places non-overlapping shapes into the cells of a 2×2 (×2) grid."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.kinds = list(spec.shapes)

    def place(self, grid_shape: Tuple[int, ...], kinds: List[str]) -> List[PlacedShape]:
        cells = [np.unravel_index(i, (2,) * len(grid_shape)) for i in range(2 ** len(grid_shape))]
        chosen = self.rng.choice(len(cells), size=len(kinds), replace=False)
        shapes = []
        for kind, cell_index in zip(kinds, chosen):
            cell = cells[int(cell_index)]
            center, radii = [], []
            for axis, size in enumerate(grid_shape):
                half = size / 2.0
                radius = float(self.rng.uniform(0.45, 0.8)) * half / 2.0
                lo = cell[axis] * half + radius + 1
                hi = (cell[axis] + 1) * half - radius - 1
                center.append(float(self.rng.uniform(lo, max(lo, hi))))
                radii.append(max(radius, 2.0))
            mask = rasterize(kind, grid_shape, tuple(center), tuple(radii))
            color = self.rng.uniform(0.5, 1.0, size=3)
            shapes.append(PlacedShape(kind, self.spec.shapes[kind], mask, color))
        return shapes

    def draw_2d(self, shapes: List[PlacedShape]) -> np.ndarray:
        size = self.spec.image_size
        canvas = np.full((size, size, 3), 0.1)
        for s in shapes:
            canvas[s.mask] = s.color
        canvas = canvas + self.rng.normal(0.0, self.spec.noise, canvas.shape) if self.spec.noise else canvas
        return (np.clip(canvas, 0.0, 1.0) * 255).round().astype(np.uint8)

    def draw_3d(self, shapes: List[PlacedShape]) -> np.ndarray:
        volume = np.full(self.spec.volume_size, 0.1)
        for s in shapes:
            volume[s.mask] = float(s.color.mean())
        if self.spec.noise:
            volume = volume + self.rng.normal(0.0, self.spec.noise, volume.shape)
        return np.clip(volume, 0.0, 1.0).astype(np.float32)

    def random_kinds(self, count: int) -> List[str]:
        idx = self.rng.choice(len(self.kinds), size=min(count, len(self.kinds)), replace=False)
        return [self.kinds[int(i)] for i in idx]


def caption_for(class_name: str) -> str:
    return f"an image containing a {class_name}"


# =============================================================================
# Generation
# =============================================================================

class SyntheticGenerator:
    """Writes assets and a manifest.jsonl for a SyntheticSpec."""

    def __init__(self, spec: SyntheticSpec, out_dir: Path):
        self.spec = spec
        self.out_dir = Path(out_dir)
        self.rng = np.random.default_rng(spec.seed)
        self.scenes = SceneBuilder(spec, self.rng)

    def _split(self) -> str:
        names = sorted(self.spec.splits)
        probs = np.array([self.spec.splits[n] for n in names])
        return names[int(self.rng.choice(len(names), p=probs / probs.sum()))]

    def _save_image(self, name: str, shapes: List[PlacedShape]) -> str:
        relative = f"images/{name}.png"
        write_png(self.out_dir / relative, self.scenes.draw_2d(shapes))
        return relative

    def _save_mask(self, name: str, mask: np.ndarray) -> str:
        relative = f"masks/{name}.png"
        write_mask_png(self.out_dir / relative, mask.astype(np.float32))
        return relative

    def generate(self) -> List[ManifestRecord]:
        records: List[ManifestRecord] = []
        for modality in sorted(self.spec.counts):
            for task in sorted(self.spec.counts[modality]):
                for i in range(self.spec.counts[modality][task]):
                    sample_id = f"{modality}-{task}-{i:04d}"
                    if modality in VOLUMETRIC_MODALITIES:
                        record = self._volume_record(sample_id, modality, task)
                    else:
                        record = self._image_record(sample_id, modality, task)
                    record.split = self._split()
                    records.append(record)
        write_manifest(records, self.out_dir / "manifest.jsonl")
        logger.info(f"Generated {len(records)} synthetic records in {self.out_dir}")
        return records

    def _image_record(self, sample_id: str, modality: str, task: str) -> ManifestRecord:
        size = (self.spec.image_size, self.spec.image_size)
        scenes = self.scenes
        record = ManifestRecord(id=sample_id, modality=modality, task=task)

        if task in ("captioning", "classification"):
            shapes = scenes.place(size, scenes.random_kinds(1))
            record.images = [self._save_image(sample_id, shapes)]
            name = shapes[0].class_name
            record.answer = caption_for(name) if task == "captioning" else name
        elif task == "vqa":
            shapes = scenes.place(size, scenes.random_kinds(int(self.rng.integers(1, 3))))
            record.images = [self._save_image(sample_id, shapes)]
            asked = self.spec.shapes[scenes.random_kinds(1)[0]]
            record.question = f"Is there a {asked} in the image?"
            record.answer = "yes" if asked in {s.class_name for s in shapes} else "no"
        elif task == "detection":
            shapes = scenes.place(size, scenes.random_kinds(int(self.rng.integers(0, 3))))
            record.images = [self._save_image(sample_id, shapes)]
            record.classes = sorted(self.spec.shapes.values())
            record.boxes = [BoxTarget(s.class_name, tight_box(s.mask)) for s in shapes]
        elif task == "segmentation":
            shapes = scenes.place(size, scenes.random_kinds(int(self.rng.integers(1, 3))))
            record.images = [self._save_image(sample_id, shapes)]
            target = shapes[int(self.rng.integers(len(shapes)))]
            record.classes = [target.class_name]
            record.mask = self._save_mask(sample_id, target.mask)
        elif task == "region_captioning":
            shapes = scenes.place(size, scenes.random_kinds(2))
            record.images = [self._save_image(sample_id, shapes)]
            target = shapes[int(self.rng.integers(len(shapes)))]
            record.region_box = tight_box(target.mask)
            record.answer = f"a {target.class_name}"
        elif task == "longitudinal_captioning":
            prior = scenes.place(size, scenes.random_kinds(int(self.rng.integers(1, 3))))
            add = len(prior) < len(self.spec.shapes) and (len(prior) == 1 or self.rng.random() < 0.5)
            if add:
                missing = [k for k in self.spec.shapes if k not in {s.kind for s in prior}]
                kind = missing[int(self.rng.integers(len(missing)))]
                extra = self._place_apart(size, kind, prior)
                current = prior + [extra]
                record.answer = f"a {extra.class_name} was added"
            else:
                removed = prior[int(self.rng.integers(len(prior)))]
                current = [s for s in prior if s is not removed]
                record.answer = f"a {removed.class_name} was removed"
            record.images = [self._save_image(f"{sample_id}-current", current),
                             self._save_image(f"{sample_id}-prior", prior)]
            record.reference_ids = ["img1"]
        return record

    def _place_apart(self, size: Tuple[int, int], kind: str, existing: List[PlacedShape]) -> PlacedShape:
        """Place one more shape avoiding the existing ones (falls back to the last draw)."""
        occupied = np.zeros(size, dtype=bool)
        for s in existing:
            occupied |= s.mask
        candidate = None
        for _ in range(16):
            candidate = self.scenes.place(size, [kind])[0]
            if not (candidate.mask & occupied).any():
                break
        return candidate

    def _volume_record(self, sample_id: str, modality: str, task: str) -> ManifestRecord:
        scenes = self.scenes
        grid = self.spec.volume_size
        shapes = scenes.place(grid, scenes.random_kinds(1 if task != "vqa" else int(self.rng.integers(1, 3))))
        record = ManifestRecord(id=sample_id, modality=modality, task=task)
        volume_path = f"volumes/{sample_id}.f32"
        write_volume(self.out_dir / volume_path, scenes.draw_3d(shapes)[..., None], "float32")
        record.volume = volume_path

        name = shapes[0].class_name
        if task == "captioning":
            record.answer = caption_for(name)
        elif task == "classification":
            record.answer = name
        elif task == "vqa":
            asked = self.spec.shapes[scenes.random_kinds(1)[0]]
            record.question = f"Is there a {asked} in the image?"
            record.answer = "yes" if asked in {s.class_name for s in shapes} else "no"
        elif task == "segmentation":
            record.classes = [name]
            mask_path = f"masks/{sample_id}.u8"
            write_volume(self.out_dir / mask_path, shapes[0].mask.astype(np.uint8), "uint8")
            record.mask = mask_path
        return record


def generate_synthetic(spec: SyntheticSpec, out_dir: Path) -> List[ManifestRecord]:
    """
    Generate a synthetic dataset.

    Args:
        spec: Generation settings
        out_dir: Output directory (images/, masks/, volumes/, manifest.jsonl)

    Returns:
        Records written to out_dir/manifest.jsonl
    """
    return SyntheticGenerator(spec, out_dir).generate()
