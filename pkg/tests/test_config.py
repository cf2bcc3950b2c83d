import json

import pytest

from src.config import (
    ConfigManager,
    OptimizerSchedule,
    OrchestratorConfig,
    SystemConfig,
    TrainConfig,
)
from src.coordinator.tokenizer import special_token_layout
from src.errors import ConfigError


def test_desk_preset_defaults():
    config = SystemConfig.preset("desk")
    assert config.orchestrator.d_model == 256
    assert config.adapter.pooled_tokens == 9
    assert config.training.trainable_groups == ["lora", "special_tokens", "adapters", "encoders", "heads"]
    assert config.orchestrator.vocab_size == max(special_token_layout(8).values()) + 1


def test_full_scale_preset_shapes():
    config = SystemConfig.preset("full")
    assert config.orchestrator.d_model == 4096
    assert config.orchestrator.n_layers == 32
    assert config.schedule.total_steps == 500_000
    assert config.schedule.warmup_steps == 3_000


def test_unknown_preset():
    with pytest.raises(ConfigError):
        SystemConfig.preset("huge")


def test_rescaled_schedule_keeps_minimum_warmup():
    assert OptimizerSchedule.rescaled(5000).warmup_steps == 50
    assert OptimizerSchedule.rescaled(500_000).warmup_steps == 3000


def test_vocab_too_small():
    with pytest.raises(ConfigError):
        OrchestratorConfig(vocab_size=260)


def test_segmentation_finetune_trains_heads_only():
    config = SystemConfig(training=TrainConfig(stage="segmentation_finetune"))
    assert config.training.trainable_groups == ["heads"]
    assert config.schedule.max_lr == 1e-4


def test_image_size_must_fit_patches():
    from src.config import PreprocessConfig

    with pytest.raises(ConfigError):
        SystemConfig(preprocess=PreprocessConfig(image_size=100))


def test_ini_round_trip(tmp_path):
    path = tmp_path / "desk.ini"
    ConfigManager.create_default_ini(path)
    config = ConfigManager(config_file=path).load_config()
    assert config.orchestrator.lora_rank == 16
    assert config.schedule.total_steps == 5000
    assert config.training.trainable_groups == ["lora", "special_tokens", "adapters", "encoders", "heads"]


def test_json_config_with_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"TRAINING": {"batch_size": 4}, "SCHEDULE": {"total_steps": 200}}))
    config = ConfigManager(config_file=path, cli_overrides={"training.seed": 9}).load_config()
    assert config.training.batch_size == 4
    assert config.training.seed == 9
    assert config.schedule.warmup_steps == 50


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MEDORCH_SEED", "42")
    config = ConfigManager().load_config()
    assert config.training.seed == 42


def test_bad_seed_env(monkeypatch):
    monkeypatch.setenv("MEDORCH_SEED", "abc")
    with pytest.raises(ConfigError):
        ConfigManager().load_config()


def test_unknown_section_and_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[NOPE]\nx = 1\n")
    with pytest.raises(ConfigError):
        ConfigManager(config_file=path).load_config()
    with pytest.raises(ConfigError):
        ConfigManager(cli_overrides={"training.nonsense": 1}).load_config()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(config_file=tmp_path / "missing.ini")


def test_dict_round_trip(tiny_config):
    assert SystemConfig.from_dict(tiny_config.to_dict()) == tiny_config
