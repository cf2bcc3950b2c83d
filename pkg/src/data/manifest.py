"""
JSON Lines dataset manifest: one record per line, validated against the
requirements of its task kind. Relative paths resolve against the
manifest's directory.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from ..config import MODALITIES, TASK_KINDS, VL_TASKS
from ..coordinator.records import RANK_2D, RANK_3D
from ..errors import ManifestError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class BoxTarget:
    class_name: str
    box: List[float]  # normalized x1, y1, x2, y2


@dataclass
class ManifestRecord:
    """
    One dataset record.

    `images` are PNG paths for 2D records; `volume` is a raw blob path for
    3D records. `classes` is the candidate class list for detection and the
    target class (first entry) for segmentation.
    """

    id: str
    modality: str
    task: str
    split: str = "train"
    images: List[str] = field(default_factory=list)
    volume: Optional[str] = None
    classes: List[str] = field(default_factory=list)
    reference_ids: List[str] = field(default_factory=list)
    region_box: Optional[List[float]] = None
    question: Optional[str] = None
    answer: Optional[str] = None
    boxes: Optional[List[BoxTarget]] = None
    mask: Optional[str] = None
    base_dir: Optional[Path] = field(default=None, repr=False, compare=False)

    @property
    def rank(self) -> str:
        return RANK_3D if self.volume else RANK_2D

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("base_dir")
        if self.boxes is not None:
            data["boxes"] = [{"class": b.class_name, "box": list(b.box)} for b in self.boxes]
        # An empty box list is meaningful for detection (every class absent).
        return {k: v for k, v in data.items() if v is not None and (v != [] or k == "boxes")}


def _validate_box(values, where: str, line: int, record_id: str) -> List[float]:
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        raise ManifestError(f"{where} must be 4 numbers", line, record_id)
    box = [float(v) for v in values]
    if any(not 0.0 <= v <= 1.0 for v in box) or box[0] > box[2] or box[1] > box[3]:
        raise ManifestError(f"{where} {box} is not a normalized xyxy box", line, record_id)
    return box


def parse_record(data: Dict[str, Any], line: int = 0, base_dir: Optional[Path] = None,
                 check_paths: bool = True) -> ManifestRecord:
    """
    Validate one decoded manifest line.

    Raises:
        ManifestError: Naming the line and record id
    """
    record_id = data.get("id")
    if not record_id or not isinstance(record_id, str):
        raise ManifestError("missing 'id'", line)
    for key in ("modality", "task"):
        if key not in data:
            raise ManifestError(f"missing '{key}'", line, record_id)
    if data["modality"] not in MODALITIES:
        raise ManifestError(f"unknown modality '{data['modality']}'", line, record_id)
    if data["task"] not in TASK_KINDS:
        raise ManifestError(f"unknown task '{data['task']}'", line, record_id)
    split = data.get("split", "train")
    if split not in SPLITS:
        raise ManifestError(f"unknown split '{split}'", line, record_id)
    known = {f for f in ManifestRecord.__dataclass_fields__ if f != "base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ManifestError(f"unknown fields {sorted(unknown)}", line, record_id)

    boxes = None
    if data.get("boxes") is not None:
        boxes = []
        for i, item in enumerate(data["boxes"]):
            if not isinstance(item, dict) or "class" not in item or "box" not in item:
                raise ManifestError(f"boxes[{i}] needs 'class' and 'box'", line, record_id)
            boxes.append(BoxTarget(item["class"], _validate_box(item["box"], f"boxes[{i}]", line, record_id)))

    record = ManifestRecord(
        id=record_id,
        modality=data["modality"],
        task=data["task"],
        split=split,
        images=list(data.get("images") or []),
        volume=data.get("volume"),
        classes=list(data.get("classes") or []),
        reference_ids=list(data.get("reference_ids") or []),
        region_box=_validate_box(data["region_box"], "region_box", line, record_id)
        if data.get("region_box") is not None else None,
        question=data.get("question"),
        answer=data.get("answer"),
        boxes=boxes,
        mask=data.get("mask"),
        base_dir=base_dir,
    )
    validate_record(record, line, check_paths)
    return record


def validate_record(record: ManifestRecord, line: int = 0, check_paths: bool = True) -> None:
    """Check the fields a record's task kind requires."""
    rid = record.id
    task = record.task
    if not record.images and not record.volume:
        raise ManifestError("needs 'images' or 'volume'", line, rid)
    if record.images and record.volume:
        raise ManifestError("give either 'images' or 'volume', not both", line, rid)

    if task == "segmentation":
        if not record.mask:
            raise ManifestError("segmentation record needs 'mask'", line, rid)
        if not record.classes:
            raise ManifestError("segmentation record needs a class in 'classes'", line, rid)
    elif task == "detection":
        if record.boxes is None:
            raise ManifestError("detection record needs 'boxes'", line, rid)
        if not record.classes:
            raise ManifestError("detection record needs candidate 'classes'", line, rid)
        if record.volume:
            raise ManifestError("detection needs a 2D image", line, rid)
        stray = {b.class_name for b in record.boxes} - set(record.classes)
        if stray:
            raise ManifestError(f"boxes name classes not in 'classes': {sorted(stray)}", line, rid)
    elif task in VL_TASKS:
        if not record.answer or not record.answer.strip():
            raise ManifestError(f"{task} record needs a nonempty 'answer'", line, rid)
        if task == "region_captioning" and record.region_box is None:
            raise ManifestError("region_captioning record needs 'region_box'", line, rid)
        if task == "longitudinal_captioning":
            if not record.reference_ids:
                raise ManifestError("longitudinal_captioning record needs 'reference_ids'", line, rid)
            if len(record.images) < 2:
                raise ManifestError("longitudinal_captioning record needs current and prior images", line, rid)
        if task == "vqa" and not record.question:
            raise ManifestError("vqa record needs a 'question'", line, rid)

    if check_paths:
        paths = list(record.images) + [p for p in (record.volume, record.mask) if p]
        for relative in paths:
            if not record.resolve(relative).exists():
                raise ManifestError(f"dangling path '{relative}'", line, rid)


def load_manifest(path: Path, check_paths: bool = True) -> List[ManifestRecord]:
    """
    Load and validate a JSON Lines manifest.

    Args:
        path: Manifest file
        check_paths: Require every referenced file to exist

    Returns:
        Records in file order

    Raises:
        ManifestError: Malformed line, missing field, dangling path or duplicate id
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"Manifest not found: {path}")

    records: List[ManifestRecord] = []
    seen = set()
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed JSON: {e.msg}", line_no)
            if not isinstance(data, dict):
                raise ManifestError("each line must be a JSON object", line_no)
            record = parse_record(data, line_no, path.parent, check_paths)
            if record.id in seen:
                raise ManifestError("duplicate record id", line_no, record.id)
            seen.add(record.id)
            records.append(record)

    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def write_manifest(records: Iterable[ManifestRecord], path: Path) -> Path:
    """Write records as JSON Lines (inverse of load_manifest)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    return path


def filter_split(records: Iterable[ManifestRecord], split: str) -> List[ManifestRecord]:
    return [r for r in records if r.split == split]
