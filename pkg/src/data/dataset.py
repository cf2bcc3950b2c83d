"""
Materialize TrainingSamples from manifest records.

Raw pixels are cached per file; preprocessing and instruction sampling run
on every call so each draw gets fresh augmentation and template choices.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..config import SystemConfig
from ..coordinator.preprocess import preprocess_2d, preprocess_2d_segmentation, preprocess_3d
from ..coordinator.records import ImageRecord
from ..errors import DataError
from ..heads.outputs import BoundingBox
from ..instructions.bank import TemplateBank, default_bank
from ..instructions.samples import (
    TrainingSample,
    build_detection_sample,
    build_segmentation_sample,
    build_vl_sample,
)
from .io import read_mask_png, read_png, read_volume
from .manifest import ManifestRecord

logger = logging.getLogger(__name__)

# Boxes must stay valid, so only these tasks get the random crop.
CROP_TASKS = ("captioning", "classification", "vqa", "longitudinal_captioning")


class SampleFactory:
    """
    Build TrainingSamples by record id.

    Args:
        records: Manifest records
        config: System configuration (preprocessing section used)
        bank: Instruction bank
        train_mode: Apply augmentation
    """

    def __init__(
        self,
        records: Sequence[ManifestRecord],
        config: SystemConfig,
        bank: Optional[TemplateBank] = None,
        train_mode: bool = True,
    ):
        self.records: Dict[str, ManifestRecord] = {r.id: r for r in records}
        self.config = config
        self.bank = bank or default_bank()
        self.train_mode = train_mode
        self._cache: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __call__(self, sample_id: str, rng: np.random.Generator) -> TrainingSample:
        return self.build(sample_id, rng)

    def _load(self, record: ManifestRecord, relative: str, kind: str) -> np.ndarray:
        path = record.resolve(relative)
        key = f"{kind}:{path}"
        if key not in self._cache:
            if kind == "image":
                self._cache[key] = read_png(path)
            elif kind == "mask":
                self._cache[key] = read_mask_png(path)
            else:
                self._cache[key] = read_volume(path)
        return self._cache[key]

    def images_for(self, record: ManifestRecord, rng: Optional[np.random.Generator],
                   train_mode: Optional[bool] = None) -> List[ImageRecord]:
        """Preprocess every 2D image of a record ('img0', 'img1', ... in file order)."""
        train = self.train_mode if train_mode is None else train_mode
        crop = train and record.task in CROP_TASKS
        return [
            preprocess_2d(self._load(record, path, "image"), crop, rng if crop else None,
                          self.config.preprocess, f"img{i}", record.modality)
            for i, path in enumerate(record.images)
        ]

    def build(self, sample_id: str, rng: np.random.Generator) -> TrainingSample:
        """
        Args:
            sample_id: Manifest record id
            rng: Generator for augmentation and template choice

        Returns:
            TrainingSample

        Raises:
            DataError: Unknown id or unsupported record
        """
        record = self.records.get(sample_id)
        if record is None:
            raise DataError(f"Unknown sample id {sample_id!r}")
        pre = self.config.preprocess

        if record.task == "segmentation":
            if record.volume:
                volume = self._load(record, record.volume, "volume")
                mask = self._load(record, record.mask, "volume")
                image, mask = preprocess_3d(volume, mask, self.train_mode, rng, pre, "img0", record.modality)
            else:
                image, mask = preprocess_2d_segmentation(
                    self._load(record, record.images[0], "image"), self._load(record, record.mask, "mask"),
                    self.train_mode, rng, pre, "img0", record.modality,
                )
            return build_segmentation_sample([image], record.classes[0], mask, image.rank, rng, self.bank,
                                             sample_id=record.id)

        images = self.volume_images(record, rng) if record.volume else self.images_for(record, rng)

        if record.task == "detection":
            boxes: Dict[str, List[BoundingBox]] = {}
            for target in record.boxes or []:
                boxes.setdefault(target.class_name, []).append(BoundingBox.from_sequence(target.box))
            universe = {name: name in boxes for name in record.classes}
            return build_detection_sample(images, universe, boxes, rng, self.bank, sample_id=record.id)

        reference_ids = list(record.reference_ids)
        return build_vl_sample(
            record.task, record.answer, images, rng, self.bank,
            reference_ids=reference_ids, box=record.region_box, question=record.question,
            sample_id=record.id,
        )

    def volume_images(self, record: ManifestRecord, rng: Optional[np.random.Generator],
                      train_mode: Optional[bool] = None) -> List[ImageRecord]:
        train = self.train_mode if train_mode is None else train_mode
        volume = self._load(record, record.volume, "volume")
        image, _ = preprocess_3d(volume, None, train, rng if train else None, self.config.preprocess,
                                 "img0", record.modality)
        return [image]

    def inference_images(self, record: ManifestRecord) -> List[ImageRecord]:
        """Eval-mode preprocessing of a record's inputs."""
        if record.volume:
            return self.volume_images(record, None, train_mode=False)
        return self.images_for(record, None, train_mode=False)

    def target_mask(self, record: ManifestRecord) -> np.ndarray:
        """Ground-truth mask at the preprocessed resolution (eval mode)."""
        if record.volume:
            _, mask = preprocess_3d(self._load(record, record.volume, "volume"),
                                    self._load(record, record.mask, "volume"), False, None,
                                    self.config.preprocess, "img0", record.modality)
        else:
            _, mask = preprocess_2d_segmentation(
                self._load(record, record.images[0], "image"), self._load(record, record.mask, "mask"),
                False, None, self.config.preprocess, "img0", record.modality,
            )
        return mask

