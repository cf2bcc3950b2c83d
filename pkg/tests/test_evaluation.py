import json

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from src.core.system import DetectionOutput, InferenceResult, MaskOutput
from src.data.dataset import SampleFactory
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.errors import DataError, InputError, ShapeError
from src.evaluation import evaluator
from src.evaluation.bootstrap import bootstrap_ci
from src.evaluation.evaluator import classification_f1_rows, evaluate, score_sample, summarize, write_report
from src.evaluation.metrics import accuracy, bleu4, dice_score, exact_match, f1, iou, multilabel_f1
from src.heads.outputs import BoundingBox, SegMask
from src.instructions.samples import build_detection_sample

from conftest import image_record


def confusion_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    counts = np.bincount(2 * truth.astype(int) + pred.astype(int), minlength=4)
    tp, fp, fn = counts[3], counts[1], counts[2]
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def test_f1_oracle():
    score = f1([0.9, 0.8, 0.1, 0.6], [1, 0, 0, 1])
    # tp = 2, fp = 1, fn = 0
    assert score.value == pytest.approx(0.8)
    assert score.per_sample == [1.0, 0.0, 1.0, 1.0]


def test_f1_matches_confusion_matrix():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        probs = rng.random(n)
        labels = rng.integers(0, 2, n)
        score = f1(probs, labels)
        pred = probs >= 0.5
        assert score.value == pytest.approx(confusion_f1(pred, labels.astype(bool)), abs=1e-12)
        assert score.per_sample == (pred == labels.astype(bool)).astype(float).tolist()


def test_f1_errors():
    with pytest.raises(InputError):
        f1([], [])
    with pytest.raises(InputError):
        f1([0.5], [2])
    with pytest.raises(ShapeError):
        f1([0.5, 0.2], [1])


def test_multilabel_macro_and_micro():
    probs = np.array([[1, 0], [1, 0], [0, 1], [0, 0]], dtype=float)
    labels = np.array([[1, 0], [0, 0], [0, 1], [0, 1]])
    # class 0: tp 1 fp 1 -> 2/3; class 1: tp 1 fn 1 -> 2/3; pooled tp 2 fp 1 fn 1
    assert multilabel_f1(probs, labels, "macro").value == pytest.approx(2 / 3)
    assert multilabel_f1(probs, labels, "micro").value == pytest.approx(2 / 3)
    with pytest.raises(InputError):
        multilabel_f1(probs, labels, "weighted")


def test_iou_matches_pixel_count():
    size = 200
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        x0, x1 = np.sort(rng.integers(0, size + 1, 2))
        y0, y1 = np.sort(rng.integers(0, size + 1, 2))
        u0, u1 = np.sort(rng.integers(0, size + 1, 2))
        v0, v1 = np.sort(rng.integers(0, size + 1, 2))
        canvas_a = np.zeros((size, size), bool)
        canvas_b = np.zeros((size, size), bool)
        canvas_a[y0:y1, x0:x1] = True
        canvas_b[v0:v1, u0:u1] = True
        union = (canvas_a | canvas_b).sum()
        pixel = (canvas_a & canvas_b).sum() / union if union else 0.0
        value = iou([x0 / size, y0 / size, x1 / size, y1 / size], [u0 / size, v0 / size, u1 / size, v1 / size])
        worst = max(worst, abs(value - pixel))
    assert worst < 1e-4
    a = [0.1, 0.2, 0.5, 0.6]
    assert iou(BoundingBox(*a), BoundingBox(*a)) == pytest.approx(1.0)
    assert iou([0.2, 0.2, 0.2, 0.2], [0.2, 0.2, 0.2, 0.2]) == 0.0


def test_dice_score():
    a = np.zeros((4, 4))
    a[:2] = 1
    b = np.zeros((4, 4))
    b[1:3] = 1
    assert dice_score(a, b) == pytest.approx(0.5)
    assert dice_score(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ShapeError):
        dice_score(np.zeros((2, 2)), np.zeros((3, 3)))


def test_bleu4():
    text = "the cat sat on the mat"
    assert bleu4(text, [text]) == pytest.approx(1.0)
    assert bleu4("", [text]) == 0.0
    assert bleu4("dog", [text]) < 1e-6
    partial = bleu4("the cat sat on the rug", [text])
    assert 0.0 < partial < 1.0
    # Shorter candidate pays the brevity penalty.
    assert bleu4("the cat sat on", [text]) < 1.0
    with pytest.raises(InputError):
        bleu4(text, [])


def test_exact_match_and_accuracy():
    assert exact_match("A  Square ", "a square") == 1.0
    score = accuracy(["a", "b", "c"], ["a", "x", "c"])
    assert score.value == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        accuracy(["a"], [])


def test_bootstrap_normal_mean():
    # Evenly spaced normal quantiles: standard-normal scores with mean exactly 0.
    quantiles = stats.norm.ppf((np.arange(1000) + 0.5) / 1000)
    ci = bootstrap_ci(quantiles, seed=1)
    assert ci.n_resamples == 1000
    assert ci.lower == pytest.approx(-0.062, abs=0.015)
    assert ci.upper == pytest.approx(0.062, abs=0.015)

    values = np.random.default_rng(0).normal(0.0, 1.0, 1000)
    ci = bootstrap_ci(values, seed=1)
    assert ci.lower - values.mean() == pytest.approx(-0.062, abs=0.015)
    assert ci.upper - values.mean() == pytest.approx(0.062, abs=0.015)


def test_bootstrap_bounds_are_ordered():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        values = rng.normal(size=int(rng.integers(1, 30)))
        ci = bootstrap_ci(values, n_resamples=20, rng=rng)
        assert ci.lower <= ci.upper


def test_bootstrap_constant_scores():
    ci = bootstrap_ci([0.5] * 20, n_resamples=200)
    assert ci.lower == ci.upper == 0.5


def test_bootstrap_is_seeded():
    values = np.random.default_rng(3).random(50)
    assert bootstrap_ci(values, seed=4) == bootstrap_ci(values, seed=4)
    with pytest.raises(InputError):
        bootstrap_ci([])
    with pytest.raises(InputError):
        bootstrap_ci([1.0], n_resamples=0)


def test_summarize_groups_by_task_and_metric():
    scores = pd.DataFrame([
        {"task": "vqa", "metric": "accuracy", "sample_id": "a", "value": 1.0},
        {"task": "vqa", "metric": "accuracy", "sample_id": "b", "value": 0.0},
        {"task": "captioning", "metric": "bleu4", "sample_id": "c", "value": 0.5},
    ])
    rows = summarize(scores, seed=0, n_resamples=100)
    assert [(r.task, r.metric, r.n) for r in rows] == [("captioning", "bleu4", 1), ("vqa", "accuracy", 2)]
    assert rows[1].value == 0.5
    assert 0.0 <= rows[1].ci_lower <= rows[1].ci_upper <= 1.0


def test_classification_f1_rows():
    frame = pd.DataFrame({"label": ["square", "circle", "cross"], "prediction": ["square", "circle", "square"]})
    rows = classification_f1_rows(frame, seed=0, n_resamples=50)
    assert [r.metric for r in rows] == ["macro_f1", "micro_f1"]
    # square 2/3, circle 1, cross 0
    assert rows[0].value == pytest.approx((2 / 3 + 1.0 + 0.0) / 3)


def test_score_detection_sample():
    box = BoundingBox(0.1, 0.1, 0.5, 0.5)
    sample = build_detection_sample([image_record()], {"square": True, "circle": False}, {"square": [box]},
                                    np.random.default_rng(0))
    result = InferenceResult(text="square <DET> circle <DET>", token_ids=[],
                             boxes=[DetectionOutput("square", BoundingBox(0.1, 0.1, 0.5, 0.3))])
    rows = {(r["metric"], i): r["value"] for i, r in enumerate(score_sample(sample, result))}
    tag_rows = [v for (m, _), v in rows.items() if m == "tag_accuracy"]
    iou_rows = [v for (m, _), v in rows.items() if m == "iou"]
    assert sorted(tag_rows) == [0.0, 1.0]
    assert iou_rows == [pytest.approx(0.5)]


@pytest.fixture
def synthetic_records(tmp_path):
    spec = SyntheticSpec(
        seed=5, image_size=32, volume_size=(8, 16, 16),
        counts={"synthetic": {"captioning": 3, "classification": 3, "detection": 2, "segmentation": 2}},
        splits={"test": 1.0},
    )
    return generate_synthetic(spec, tmp_path / "synth")


def test_evaluate_with_oracle_inference(tiny_system, synthetic_records, monkeypatch, tmp_path):
    built = []

    class RecordingFactory(SampleFactory):
        def build(self, sample_id, rng):
            sample = super().build(sample_id, rng)
            built.append(sample)
            return sample

    def oracle(images, instruction, max_new_tokens=64):
        sample = built[-1]
        assert instruction == sample.instruction
        result = InferenceResult(text=sample.target, token_ids=[])
        result.boxes = [DetectionOutput(name, box) for name, box in sample.boxes]
        if sample.mask is not None:
            result.masks = [MaskOutput("SEG2D", "img0", SegMask(sample.mask))]
        return result

    monkeypatch.setattr(evaluator, "SampleFactory", RecordingFactory)
    monkeypatch.setattr(tiny_system, "infer", oracle)

    rows = evaluate(tiny_system, synthetic_records, "test", seed=0, n_resamples=50)
    by_key = {(r.task, r.metric): r for r in rows}
    assert by_key[("captioning", "exact_match")].value == 1.0
    assert by_key[("captioning", "bleu4")].value == pytest.approx(1.0)
    assert by_key[("classification", "accuracy")].value == 1.0
    assert by_key[("classification", "macro_f1")].value == 1.0
    assert by_key[("detection", "tag_accuracy")].value == 1.0
    assert by_key[("segmentation", "dice")].value == 1.0
    assert by_key[("captioning", "bleu4")].n == 3

    path = write_report(rows, tmp_path / "report.json")
    saved = json.loads(path.read_text())
    assert {"task", "metric", "value", "ci_lower", "ci_upper", "n", "seed"} == set(saved[0])


def test_evaluate_empty_split(tiny_system, synthetic_records):
    with pytest.raises(DataError):
        evaluate(tiny_system, synthetic_records, "val")
