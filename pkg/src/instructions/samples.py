"""
Training-sample construction: rendered instruction plus the task-specific
target text, boxes and masks.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import TASK_KINDS, VL_TASKS
from ..coordinator.records import RANK_2D, RANK_3D, ImageRecord
from ..coordinator.tokenizer import DET, NA, SEG2D, SEG3D
from ..errors import DataError, TemplatingError
from ..heads.outputs import BoundingBox
from .bank import TemplateBank, render_template, sample_instruction

logger = logging.getLogger(__name__)

MAX_DETECTION_CLASSES = 9

_DETECTION_TAG_RE = re.compile(f"({re.escape(DET)}|{re.escape(NA)})")


@dataclass
class TrainingSample:
    """One instruction-tuning example."""

    images: List[ImageRecord]
    task: str
    instruction: str
    target: str
    boxes: List[Tuple[str, BoundingBox]] = field(default_factory=list)
    mask: Optional[np.ndarray] = None
    classes: List[str] = field(default_factory=list)
    sample_id: str = ""

    def __post_init__(self):
        if self.task not in TASK_KINDS:
            raise DataError(f"Unknown task kind '{self.task}'")
        any_present = any(tag == DET for _, tag in parse_detection_target(self.target)) \
            if self.task == "detection" else False
        if bool(self.boxes) != any_present:
            raise DataError(f"Sample {self.sample_id!r}: boxes must be present exactly for detection "
                            f"samples with a present class")
        if (self.mask is not None) != (self.task == "segmentation"):
            raise DataError(f"Sample {self.sample_id!r}: mask must be present exactly for segmentation")

    @property
    def modality(self) -> str:
        return self.images[0].modality if self.images else "synthetic"

    @property
    def rank(self) -> str:
        return self.images[0].rank if self.images else RANK_2D


def format_box(box: Union[BoundingBox, Sequence[float]]) -> str:
    """Render a normalized box as '[x1,y1,x2,y2]' with two decimals."""
    values = box.as_list() if isinstance(box, BoundingBox) else list(box)
    return "[" + ",".join(f"{v:.2f}" for v in values) + "]"


def union_box(boxes: Sequence[BoundingBox]) -> BoundingBox:
    """Smallest box covering all given boxes."""
    return BoundingBox(
        min(b.x1 for b in boxes), min(b.y1 for b in boxes),
        max(b.x2 for b in boxes), max(b.y2 for b in boxes),
    )


def parse_detection_target(text: str) -> List[Tuple[str, str]]:
    """
    Recover (class name, tag) pairs from a detection target or model output.

    Text before each <DET>/<N/A> tag (whitespace trimmed) is its class name;
    tags with no preceding name are dropped.
    """
    pieces = _DETECTION_TAG_RE.split(text)
    pairs = []
    for name, tag in zip(pieces[0::2], pieces[1::2]):
        name = name.strip()
        if name:
            pairs.append((name, tag))
    return pairs


def _main_ids(images: Sequence[ImageRecord], main_ids: Optional[Sequence[str]]) -> List[str]:
    if main_ids:
        return list(main_ids)
    return [img.id for img in sorted(images, key=lambda r: r.index)]


def build_detection_sample(
    images: Sequence[ImageRecord],
    universe: Mapping[str, bool],
    boxes: Mapping[str, Sequence[BoundingBox]],
    rng: np.random.Generator,
    bank: Optional[TemplateBank] = None,
    main_ids: Optional[Sequence[str]] = None,
    sample_id: str = "",
) -> TrainingSample:
    """
    Build a detection sample over up to nine randomly chosen classes.

    Args:
        images: Input images
        universe: Class name -> presence flag
        boxes: Class name -> boxes of that class (required for present classes)
        rng: Random generator
        bank: Instruction bank (defaults to the shipped one)
        main_ids: Image ids for the main slot (defaults to all images)
        sample_id: Identifier carried into errors

    Returns:
        TrainingSample whose target reads "c1 <DET> c2 <N/A> ..."

    Raises:
        DataError: Empty universe or a present class without a box
    """
    names = list(universe)
    if not names:
        raise DataError(f"Sample {sample_id!r}: detection needs at least one candidate class")
    for name in names:
        if universe[name] and not boxes.get(name):
            raise DataError(f"Sample {sample_id!r}: present class '{name}' has no box")

    count = min(MAX_DETECTION_CLASSES, len(names))
    chosen = [names[i] for i in rng.choice(len(names), size=count, replace=False)]

    target = " ".join(f"{name} {DET if universe[name] else NA}" for name in chosen)
    box_targets = [(name, union_box(list(boxes[name]))) for name in chosen if universe[name]]

    template = sample_instruction("detection", rng, bank)
    instruction = render_template(template, _main_ids(images, main_ids), ", ".join(chosen))
    return TrainingSample(
        images=list(images), task="detection", instruction=instruction, target=target,
        boxes=box_targets, classes=chosen, sample_id=sample_id,
    )


def segmentation_target(class_name: str, rank: str) -> str:
    tag = SEG3D if rank == RANK_3D else SEG2D
    return f"The segmentation mask of {class_name} is {tag}"


def build_segmentation_sample(
    images: Sequence[ImageRecord],
    class_name: str,
    mask: np.ndarray,
    rank: str,
    rng: np.random.Generator,
    bank: Optional[TemplateBank] = None,
    main_ids: Optional[Sequence[str]] = None,
    sample_id: str = "",
) -> TrainingSample:
    """
    Build a segmentation sample for one class.

    Raises:
        TemplatingError: Empty class name
        DataError: Mask shape differs from the image's spatial shape, or rank is unknown
    """
    if not class_name or not class_name.strip():
        raise TemplatingError(f"Sample {sample_id!r}: segmentation needs a class name")
    if rank not in (RANK_2D, RANK_3D):
        raise DataError(f"Sample {sample_id!r}: unknown rank '{rank}'")
    mask = np.asarray(mask)
    if images:
        expected = images[0].spatial_shape
        if tuple(mask.shape) != tuple(expected):
            raise DataError(f"Sample {sample_id!r}: mask shape {mask.shape} does not match image {expected}")
        if images[0].rank != rank:
            raise DataError(f"Sample {sample_id!r}: rank {rank} does not match image rank {images[0].rank}")

    template = sample_instruction("segmentation", rng, bank)
    instruction = render_template(template, _main_ids(images, main_ids), class_name)
    return TrainingSample(
        images=list(images), task="segmentation", instruction=instruction,
        target=segmentation_target(class_name, rank), mask=(mask > 0).astype(np.float32),
        classes=[class_name], sample_id=sample_id,
    )


def build_vl_sample(
    task: str,
    answer: str,
    images: Sequence[ImageRecord],
    rng: np.random.Generator,
    bank: Optional[TemplateBank] = None,
    main_ids: Optional[Sequence[str]] = None,
    reference_ids: Optional[Sequence[str]] = None,
    box: Optional[Union[BoundingBox, Sequence[float]]] = None,
    question: Optional[str] = None,
    variant: Optional[str] = None,
    sample_id: str = "",
) -> TrainingSample:
    """
    Build a vision-language sample whose target is the answer verbatim.

    Region captioning renders `box` into the slot, longitudinal captioning
    the reference image ids, VQA the question.

    Raises:
        DataError: Empty answer or unknown task
    """
    if task not in VL_TASKS:
        raise DataError(f"Sample {sample_id!r}: '{task}' is not a vision-language task")
    if not answer or not answer.strip():
        raise DataError(f"Sample {sample_id!r}: answer text is empty")

    slot: Optional[str] = None
    refs = list(reference_ids or [])
    if task == "region_captioning":
        if box is None:
            raise DataError(f"Sample {sample_id!r}: region captioning needs a box")
        slot = format_box(box)
    elif task == "longitudinal_captioning":
        if not refs:
            raise DataError(f"Sample {sample_id!r}: longitudinal captioning needs reference image ids")
        slot = "".join(f"<{r}>" if not r.startswith("<") else r for r in refs)
    elif task == "vqa":
        if not question:
            raise DataError(f"Sample {sample_id!r}: vqa needs a question")
        slot = question

    if main_ids:
        mains = list(main_ids)
    else:
        ref_set = {r.strip("<>") for r in refs}
        mains = [i for i in _main_ids(images, None) if i not in ref_set]

    template = sample_instruction(task, rng, bank, variant)
    instruction = render_template(template, mains, slot)
    return TrainingSample(
        images=list(images), task=task, instruction=instruction, target=answer,
        sample_id=sample_id,
    )


def class_presence(present: Sequence[str], absent: Sequence[str]) -> Dict[str, bool]:
    """Presence-flag universe from two name lists, present first."""
    universe = {name: True for name in present}
    universe.update({name: False for name in absent if name not in universe})
    return universe
