"""
Shared fixtures: a tiny system configuration, seeded generators and
synthetic image records.
"""

import numpy as np
import pytest
import torch

from src.config import (
    AdapterConfig,
    Encoder2DConfig,
    Encoder3DConfig,
    HeadConfig,
    OptimizerSchedule,
    OrchestratorConfig,
    PreprocessConfig,
    SystemConfig,
    TrainConfig,
)
from src.coordinator.records import RANK_2D, RANK_3D, ImageRecord
from src.core.system import build_system


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow behavioral tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long behavioral test, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_config(**training) -> SystemConfig:
    """A configuration small enough for CPU unit tests."""
    train_kwargs = dict(batch_size=2, seed=0, device="cpu", log_every=1, checkpoint_every=0)
    train_kwargs.update(training)
    return SystemConfig(
        preprocess=PreprocessConfig(image_size=32, volume_size=(8, 16, 16)),
        encoder_2d=Encoder2DConfig(patch_size=8, d_vis=32, n_layers=1, n_heads=2),
        encoder_3d=Encoder3DConfig(base_width=16, n_down=1, num_groups=16),
        adapter=AdapterConfig(pooled_tokens=9),
        orchestrator=OrchestratorConfig(d_model=32, n_layers=2, n_heads=2, max_seq_len=256, max_images=4,
                                        lora_rank=4, lora_alpha=8.0),
        heads=HeadConfig(detection_hidden=32, unet2d_base_width=16, unet2d_stages=2, unet3d_base_width=16,
                         unet3d_down=1, num_groups=16),
        schedule=OptimizerSchedule(max_lr=1e-3, min_lr=1e-5, warmup_steps=5, warmup_start_lr=1e-6,
                                   total_steps=1000),
        training=TrainConfig(**train_kwargs),
    )


@pytest.fixture
def tiny_config() -> SystemConfig:
    return make_tiny_config()


@pytest.fixture
def tiny_system(tiny_config):
    return build_system(tiny_config, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def image_record(image_id: str = "img0", size: int = 32, seed: int = 0, modality: str = "synthetic") -> ImageRecord:
    pixels = np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)
    return ImageRecord(id=image_id, modality=modality, rank=RANK_2D, pixels=pixels)


def volume_record(image_id: str = "img0", shape=(8, 16, 16), seed: int = 0, modality: str = "ct") -> ImageRecord:
    pixels = np.random.default_rng(seed).random((*shape, 1)).astype(np.float32)
    return ImageRecord(id=image_id, modality=modality, rank=RANK_3D, pixels=pixels)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
