"""
Evaluate a trained system on one manifest split.

Every record is turned into an eval-mode sample (fixed seed for the
instruction choice), run through the orchestrated inference workflow and
scored per sample. Scores are gathered in a pandas DataFrame and reduced
per (task, metric) with a percentile bootstrap interval.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..coordinator.tokenizer import DET
from ..core.system import InferenceResult, MultimodalSystem
from ..data.dataset import SampleFactory
from ..data.manifest import ManifestRecord, filter_split
from ..errors import DataError
from ..instructions.samples import TrainingSample, parse_detection_target
from ..utils.logging import ProgressLogger
from .bootstrap import DEFAULT_RESAMPLES, bootstrap_ci
from .metrics import bleu4, dice_score, exact_match, iou, multilabel_f1

logger = logging.getLogger(__name__)

CAPTION_TASKS = ("captioning", "region_captioning", "longitudinal_captioning")


@dataclass
class ReportRow:
    task: str
    metric: str
    value: float
    ci_lower: float
    ci_upper: float
    n: int
    seed: int


def score_sample(sample: TrainingSample, result: InferenceResult,
                 reference_mask: Optional[np.ndarray] = None) -> List[Dict]:
    """
    Per-sample score rows {task, metric, sample_id, value} for one inference.

    Detection yields one tag-accuracy row per queried class and one IoU row
    per present class (0 when no box was predicted for it).
    """
    rows = []

    def add(metric: str, value: float) -> None:
        rows.append({"task": sample.task, "metric": metric, "sample_id": sample.sample_id, "value": float(value)})

    if sample.task in CAPTION_TASKS:
        add("bleu4", bleu4(result.text, [sample.target]))
        add("exact_match", exact_match(result.text, sample.target))
    elif sample.task in ("classification", "vqa"):
        add("accuracy", exact_match(result.text, sample.target))
    elif sample.task == "detection":
        predicted = dict(parse_detection_target(result.text))
        for name, tag in parse_detection_target(sample.target):
            add("tag_accuracy", predicted.get(name) == tag)
        boxes = {}
        for output in result.boxes:
            boxes.setdefault(output.class_name, output.box)
        for name, box in sample.boxes:
            add("iou", iou(boxes[name], box) if name in boxes else 0.0)
    elif sample.task == "segmentation":
        truth = reference_mask if reference_mask is not None else sample.mask
        if result.masks:
            add("dice", dice_score(result.masks[0].mask.binary(), truth))
        else:
            add("dice", 0.0)
    return rows


def classification_f1_rows(frame: pd.DataFrame, seed: int, n_resamples: int) -> List[ReportRow]:
    """Macro and micro F1 over the classification label vocabulary."""
    if frame.empty:
        return []
    classes = sorted(set(frame["label"]) | set(frame["prediction"]))
    labels = np.array([[float(lab == c) for c in classes] for lab in frame["label"]])
    preds = np.array([[float(p == c) for c in classes] for p in frame["prediction"]])
    joined = np.concatenate([preds, labels], axis=1)
    width = len(classes)

    rows = []
    for average in ("macro", "micro"):
        def aggregate(sample: np.ndarray, average=average) -> float:
            return multilabel_f1(sample[:, :width], sample[:, width:], average).value

        value = multilabel_f1(preds, labels, average).value
        ci = bootstrap_ci(joined, aggregate, n_resamples, seed=seed)
        rows.append(ReportRow("classification", f"{average}_f1", value, ci.lower, ci.upper, len(frame), seed))
    return rows


def summarize(scores: pd.DataFrame, seed: int, n_resamples: int = DEFAULT_RESAMPLES) -> List[ReportRow]:
    """Mean per (task, metric) with a bootstrap CI over its per-sample values."""
    rows = []
    if scores.empty:
        return rows
    for (task, metric), group in scores.groupby(["task", "metric"], sort=True):
        values = group["value"].to_numpy()
        ci = bootstrap_ci(values, np.mean, n_resamples, seed=seed)
        rows.append(ReportRow(task, metric, float(values.mean()), ci.lower, ci.upper, len(values), seed))
    return rows


def evaluate(
    system: MultimodalSystem,
    records: Sequence[ManifestRecord],
    split: str = "test",
    seed: int = 0,
    n_resamples: int = DEFAULT_RESAMPLES,
    max_new_tokens: int = 64,
    on_sample: Optional[Callable[[TrainingSample, InferenceResult], None]] = None,
) -> List[ReportRow]:
    """
    Evaluate on the records of one split.

    Args:
        system: Trained system
        records: Manifest records (filtered to `split`)
        split: Split name
        seed: Seed for instruction choice and bootstrap
        n_resamples: Bootstrap resamples
        max_new_tokens: Lower bound on the generation budget (raised to fit long targets)
        on_sample: Optional callback per inference

    Returns:
        Report rows sorted by (task, metric)

    Raises:
        DataError: The split holds no records
    """
    selected = filter_split(records, split)
    if not selected:
        raise DataError(f"No records in split '{split}'")

    factory = SampleFactory(selected, system.config, train_mode=False)
    rng = np.random.default_rng(seed)
    score_rows: List[Dict] = []
    class_rows: List[Dict] = []
    progress = ProgressLogger(logger, len(selected), f"Evaluating {split}")

    for record in selected:
        sample = factory.build(record.id, rng)
        budget = max(max_new_tokens, len(system.tokenizer.encode(sample.target)) + 8)
        result = system.infer(sample.images, sample.instruction, budget)
        score_rows.extend(score_sample(sample, result))
        if sample.task == "classification":
            class_rows.append({"label": sample.target.strip().lower(), "prediction": result.text.strip().lower()})
        if on_sample:
            on_sample(sample, result)
        progress.update()
    progress.finish()

    scores = pd.DataFrame(score_rows, columns=["task", "metric", "sample_id", "value"])
    report = summarize(scores, seed, n_resamples)
    report.extend(classification_f1_rows(pd.DataFrame(class_rows, columns=["label", "prediction"]),
                                         seed, n_resamples))
    report.sort(key=lambda r: (r.task, r.metric))
    for row in report:
        logger.info(f"{row.task:<24} {row.metric:<14} {row.value:.4f} "
                    f"[{row.ci_lower:.4f}, {row.ci_upper:.4f}] n={row.n}")
    return report


def write_report(rows: Sequence[ReportRow], path: Path) -> Path:
    """Write report rows as a JSON list."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump([asdict(r) for r in rows], f, indent=2)
    logger.info(f"Wrote evaluation report: {path}")
    return path
