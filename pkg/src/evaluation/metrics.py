"""
Task metrics: F1, IoU, DICE, BLEU-4, exact match and accuracy.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..errors import InputError, ShapeError
from ..heads.outputs import BoundingBox

logger = logging.getLogger(__name__)

BLEU_EPSILON = 1e-9
BoxLike = Union[BoundingBox, Sequence[float]]


@dataclass
class MetricScore:
    """Aggregate metric value with the per-sample values it came from."""

    name: str
    value: float
    per_sample: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.per_sample:
            raise InputError(f"Metric {self.name} has no per-sample values")


def _binary_inputs(probabilities, labels, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(labels)
    if probs.size == 0:
        raise InputError("F1 needs at least one prediction")
    if probs.shape != truth.shape:
        raise ShapeError(f"Predictions {probs.shape} and labels {truth.shape} differ in shape")
    if not np.all(np.isin(truth, (0, 1))):
        raise InputError("Labels must be binary")
    return probs >= threshold, truth.astype(bool)


def _f1_from_counts(tp: float, fp: float, fn: float) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1(probabilities: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> MetricScore:
    """
    Binary F1 after thresholding.

    Per-sample values are 1.0 where the thresholded prediction is correct.

    Raises:
        InputError: Empty input or non-binary labels
    """
    pred, truth = _binary_inputs(probabilities, labels, threshold)
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    return MetricScore("f1", _f1_from_counts(tp, fp, fn), (pred == truth).astype(float).tolist())


def multilabel_f1(probabilities, labels, average: str = "macro", threshold: float = 0.5) -> MetricScore:
    """
    F1 over n samples × c classes.

    macro averages the per-class F1; micro pools the counts of all classes.
    """
    pred, truth = _binary_inputs(probabilities, labels, threshold)
    if pred.ndim != 2:
        raise ShapeError(f"Multilabel F1 needs n×c arrays, got shape {pred.shape}")
    tp = np.sum(pred & truth, axis=0).astype(float)
    fp = np.sum(pred & ~truth, axis=0).astype(float)
    fn = np.sum(~pred & truth, axis=0).astype(float)
    if average == "macro":
        value = float(np.mean([_f1_from_counts(*counts) for counts in zip(tp, fp, fn)]))
    elif average == "micro":
        value = _f1_from_counts(tp.sum(), fp.sum(), fn.sum())
    else:
        raise InputError(f"average must be 'macro' or 'micro', got '{average}'")
    per_sample = np.all(pred == truth, axis=1).astype(float).tolist()
    return MetricScore(f"{average}_f1", value, per_sample)


def iou(box_a: BoxLike, box_b: BoxLike) -> float:
    """Intersection over union of two xyxy boxes; 0 when both have zero area."""
    a = box_a.as_list() if isinstance(box_a, BoundingBox) else [float(v) for v in box_a]
    b = box_b.as_list() if isinstance(box_b, BoundingBox) else [float(v) for v in box_b]
    inter_w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    inter_h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    intersection = inter_w * inter_h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - intersection
    if union <= 0:
        return 0.0
    return intersection / union


def dice_score(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """2|A∩B| / (|A| + |B|) of binary masks; 1.0 when both are empty."""
    a = np.asarray(mask_a) > 0
    b = np.asarray(mask_b) > 0
    if a.shape != b.shape:
        raise ShapeError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace tokens."""
    return text.lower().split()


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Union[str, Sequence[str]], references: Sequence[Union[str, Sequence[str]]]) -> float:
    """
    Sentence BLEU-4: clipped 1..4-gram precisions, geometric mean, brevity penalty.

    Zero n-gram matches are floored at 1e-9 so the score stays defined.

    Args:
        candidate: Text or token list
        references: One or more texts or token lists
    """
    cand = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    refs = [tokenize(r) if isinstance(r, str) else list(r) for r in references]
    if not refs:
        raise InputError("BLEU needs at least one reference")
    if not cand:
        return 0.0

    log_precision = 0.0
    for n in range(1, 5):
        counts = ngram_counts(cand, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in ngram_counts(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        matched = sum(min(count, max_ref[gram]) for gram, count in counts.items())
        total = max(1, sum(counts.values()))
        log_precision += math.log(max(matched, BLEU_EPSILON) / total) / 4.0

    # Closest reference length, shorter one on ties.
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    brevity = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / len(cand))
    return brevity * math.exp(log_precision)


def exact_match(candidate: str, reference: str) -> float:
    """1.0 when the texts agree after whitespace and case normalization."""
    return float(tokenize(candidate) == tokenize(reference))


def accuracy(predictions: Sequence, labels: Sequence) -> MetricScore:
    if len(predictions) != len(labels):
        raise ShapeError(f"{len(predictions)} predictions for {len(labels)} labels")
    if not labels:
        raise InputError("Accuracy needs at least one label")
    per_sample = [float(p == t) for p, t in zip(predictions, labels)]
    return MetricScore("accuracy", float(np.mean(per_sample)), per_sample)
