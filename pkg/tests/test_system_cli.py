import json
import logging
import zipfile

import numpy as np
import pytest
import torch

from src.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, load_inference_images, main
from src.core.checkpoint import load_checkpoint, save_checkpoint
from src.core.paths import RunPaths
from src.core.runner import TrainingRun, plot_loss_curve
from src.core.system import MultimodalSystem
from src.data.io import read_mask_png, read_volume, write_png
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.errors import CheckpointError, ConfigError, InputError, RoutingError
from src.orchestrator.generation import GenerationOutput, TagEvent, TagKind

from conftest import image_record, make_tiny_config, volume_record


def scripted_generation(text, kinds, d_model=32):
    events = [TagEvent(kind=k, position=i, embedding=torch.zeros(d_model)) for i, k in enumerate(kinds)]

    def fake_generate(*args, **kwargs):
        return GenerationOutput(text=text, token_ids=list(range(len(kinds))), tag_events=events)

    return fake_generate


def test_infer_segmentation_tag_yields_one_mask(tiny_system, monkeypatch):
    monkeypatch.setattr(tiny_system, "generate", scripted_generation("<2DSEG>", [TagKind.SEG2D]))
    result = tiny_system.infer([image_record()], "Segment the square in <img0>.")
    assert result.boxes == []
    assert len(result.masks) == 1
    assert result.masks[0].image_id == "img0"
    assert result.masks[0].mask.shape == (32, 32)


def test_infer_detection_names_boxes(tiny_system, monkeypatch):
    monkeypatch.setattr(tiny_system, "generate",
                        scripted_generation("square <DET> circle <N/A>", [TagKind.DET]))
    result = tiny_system.infer([image_record()], "Detect square and circle in <img0>.")
    assert [b.class_name for b in result.boxes] == ["square"]
    box = result.boxes[0].box
    assert box.x1 <= box.x2 and box.y1 <= box.y2


def test_infer_3d_segmentation(tiny_system, monkeypatch):
    monkeypatch.setattr(tiny_system, "generate", scripted_generation("<3DSEG>", [TagKind.SEG3D]))
    result = tiny_system.infer([volume_record()], "Segment the square in <img0>.")
    assert result.masks[0].mask.shape == (8, 16, 16)


def test_infer_detection_on_volume_is_routing_error(tiny_system, monkeypatch):
    monkeypatch.setattr(tiny_system, "generate", scripted_generation("square <DET>", [TagKind.DET]))
    with pytest.raises(RoutingError) as info:
        tiny_system.infer([volume_record()], "Detect square in <img0>.")
    assert info.value.input_rank == "3D"


def test_infer_needs_images(tiny_system):
    with pytest.raises(InputError):
        tiny_system.infer([], "Describe <img0>.")


def test_infer_restores_training_mode(tiny_system, monkeypatch):
    monkeypatch.setattr(tiny_system, "generate", scripted_generation("a square", []))
    tiny_system.train()
    tiny_system.infer([image_record()], "Describe <img0>.")
    assert tiny_system.training


def test_checkpoint_round_trip(tiny_system, tmp_path):
    path = save_checkpoint(tmp_path / "model.pt", tiny_system, step=7)
    loaded, step = load_checkpoint(path)
    assert step == 7
    assert loaded.config.to_dict() == tiny_system.config.to_dict()
    original = tiny_system.state_dict()
    for name, tensor in loaded.state_dict().items():
        assert torch.equal(tensor, original[name]), name


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")
    bad = tmp_path / "bad.pt"
    torch.save({"format": "something-else"}, bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    garbage = tmp_path / "garbage.pt"
    garbage.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(garbage)


def test_run_paths(tmp_path):
    paths = RunPaths(run_dir=tmp_path / "run")
    paths.create_all_directories()
    assert paths.checkpoint_dir.is_dir()
    assert paths.checkpoint(12).name == "checkpoint_0000012.pt"
    assert paths.run_name == "run"
    with pytest.raises(ConfigError):
        RunPaths()


def test_plot_loss_curve(tmp_path):
    log = tmp_path / "loss_log.jsonl"
    assert plot_loss_curve(log, tmp_path / "curve.png") is None
    lines = [{"step": s, "group": g, "total": 1.0 / (s + 1)} for s in range(6) for g in ("a/captioning", "b/vqa")]
    log.write_text("\n".join(json.dumps(line) for line in lines) + "\n")
    assert plot_loss_curve(log, tmp_path / "curve.png", window=2).exists()


@pytest.fixture
def synth_manifest(tmp_path):
    spec = SyntheticSpec(seed=2, image_size=32, volume_size=(8, 16, 16),
                         counts={"synthetic": {"captioning": 2, "detection": 2, "segmentation": 2}})
    generate_synthetic(spec, tmp_path / "synth")
    return tmp_path / "synth" / "manifest.jsonl"


def test_training_run_writes_artifacts(synth_manifest, tmp_path, caplog):
    caplog.set_level(logging.INFO)
    config = make_tiny_config(checkpoint_every=2)
    run = TrainingRun(config, synth_manifest, tmp_path / "run", num_steps=3)
    final = run.run()
    paths = run.paths
    assert final == paths.final_checkpoint and final.exists()
    assert paths.checkpoint(2).exists()
    assert len(paths.loss_log.read_text().splitlines()) == 3
    assert "Phase 4: Training" in paths.train_log.read_text()
    assert json.loads(paths.config_file.read_text())["training"]["checkpoint_every"] == 2
    assert "Steps: 3" in paths.summary_file.read_text()
    _, step = load_checkpoint(final)
    assert step == 3


def test_cli_synth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"seed": 1, "image_size": 32, "counts": {"synthetic": {"captioning": 2}}}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert len((tmp_path / "out" / "manifest.jsonl").read_text().splitlines()) == 2


def test_cli_exit_codes(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"image_size": 40}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "out")]) == EXIT_VALIDATION
    assert main([]) == EXIT_VALIDATION
    image = write_png(tmp_path / "x.png", np.zeros((8, 8, 3), dtype=np.uint8))
    assert main(["infer", "--checkpoint", str(tmp_path / "none.pt"), "--image", str(image),
                 "--prompt", "Describe <img0>.", "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_cli_resume_rejects_config_flags(tiny_system, synth_manifest, tmp_path):
    checkpoint = save_checkpoint(tmp_path / "ckpt.pt", tiny_system, 4)
    base = ["train", "--manifest", str(synth_manifest), "--out", str(tmp_path / "run"), "--resume", str(checkpoint)]
    assert main(base + ["--seed", "3"]) == EXIT_VALIDATION
    assert main(base + ["--config", str(tmp_path / "any.ini")]) == EXIT_VALIDATION
    assert not (tmp_path / "run").exists()


def test_cli_create_template(tmp_path):
    path = tmp_path / "template.ini"
    assert main(["--create-template", str(path)]) == EXIT_OK
    assert "[ORCHESTRATOR]" in path.read_text()


def test_load_inference_images(tmp_path, tiny_config):
    png = write_png(tmp_path / "a.png", np.full((20, 24, 3), 200, dtype=np.uint8))
    records = load_inference_images([png, png], "xray", tiny_config)
    assert [r.id for r in records] == ["img0", "img1"]
    assert records[0].spatial_shape == (32, 32)
    with pytest.raises(InputError):
        load_inference_images([tmp_path / "a.jpg"], "xray", tiny_config)


def test_cli_infer_end_to_end(tiny_system, tmp_path, monkeypatch):
    checkpoint = save_checkpoint(tmp_path / "model.pt", tiny_system, step=0)
    image = write_png(tmp_path / "scan.png", np.full((32, 32, 3), 90, dtype=np.uint8))
    monkeypatch.setattr(MultimodalSystem, "generate",
                        lambda self, *a, **k: scripted_generation("<2DSEG>", [TagKind.SEG2D])())
    out = tmp_path / "out"
    code = main(["infer", "--checkpoint", str(checkpoint), "--image", str(image),
                 "--prompt", "Segment the square in <img0>.", "--out", str(out), "--device", "cpu", "--zip"])
    assert code == EXIT_OK
    assert (out / "text.txt").read_text() == "<2DSEG>"
    assert json.loads((out / "boxes.json").read_text()) == []
    summary = json.loads((out / "summary.json").read_text())
    assert summary["masks"][0]["tag"] == "SEG2D"
    assert read_mask_png(out / "mask_0.png").shape == (32, 32)
    assert read_volume(out / "mask_0.f32").shape == (32, 32)
    with zipfile.ZipFile(tmp_path / "out.zip") as archive:
        assert "summary.json" in archive.namelist()
