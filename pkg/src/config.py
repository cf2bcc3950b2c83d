"""
Configuration management for MedOrch.

Supports .ini and .json configuration files with CLI overrides.
Environment variables can be used to override the run seed, the output
root, the instruction-bank directory and the torch device.
"""

import configparser
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .coordinator.tokenizer import special_token_layout
from .errors import ConfigError

logger = logging.getLogger(__name__)

# =============================================================================
# Environment Variable Configuration
# =============================================================================

OUTPUT_DIR = Path(os.environ.get('MEDORCH_OUTPUT_DIR', './runs'))
TEMPLATE_DIR = os.environ.get('MEDORCH_TEMPLATE_DIR')
DEVICE = os.environ.get('MEDORCH_DEVICE', 'cpu')


def get_seed_override() -> Optional[int]:
    """Get the run seed override from MEDORCH_SEED, if set."""
    raw = os.environ.get('MEDORCH_SEED')
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"MEDORCH_SEED must be an integer, got '{raw}'")


def get_output_dir() -> Path:
    """Get run output root from environment or default."""
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
    return OUTPUT_DIR


def get_template_dir() -> Optional[Path]:
    """Get instruction-bank override directory, if configured."""
    return Path(TEMPLATE_DIR) if TEMPLATE_DIR else None


def get_device() -> str:
    """Get torch device name from environment or default."""
    return DEVICE


TASK_KINDS = (
    "captioning",
    "classification",
    "detection",
    "segmentation",
    "vqa",
    "region_captioning",
    "longitudinal_captioning",
)

VL_TASKS = (
    "captioning",
    "classification",
    "vqa",
    "region_captioning",
    "longitudinal_captioning",
)

MODALITIES = ("xray", "ct", "mr", "dermoscopy", "fundus", "endoscopy", "ultrasound", "synthetic")

TRAINABLE_GROUPS = ("lora", "special_tokens", "adapters", "encoders", "heads")


@dataclass
class PreprocessConfig:
    """Image and volume preprocessing."""

    image_size: int = 224
    channels_2d: int = 3
    channels_3d: int = 1
    volume_size: Tuple[int, int, int] = (16, 32, 32)  # D, H, W
    min_crop_area: float = 0.5
    max_crop_area: float = 1.0
    hflip_prob: float = 0.5
    augment: bool = True

    def __post_init__(self):
        self.volume_size = tuple(int(v) for v in self.volume_size)
        if self.image_size < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        if len(self.volume_size) != 3 or min(self.volume_size) < 1:
            raise ConfigError(f"volume_size must be three positive ints, got {self.volume_size}")
        if not 0.0 < self.min_crop_area <= self.max_crop_area <= 1.0:
            raise ConfigError(
                f"Crop area bounds must satisfy 0 < min <= max <= 1, got "
                f"({self.min_crop_area}, {self.max_crop_area})"
            )
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


@dataclass
class Encoder2DConfig:
    """Patch-embedding transformer that stands in for the windowed encoder."""

    patch_size: int = 16
    d_vis: int = 128
    n_layers: int = 2
    n_heads: int = 4
    # Non-overlapping attention windows in patches; None attends globally.
    window_size: Optional[int] = None

    def __post_init__(self):
        if self.d_vis % self.n_heads != 0:
            raise ConfigError(f"d_vis ({self.d_vis}) must be divisible by n_heads ({self.n_heads})")
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        if self.window_size is not None and self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")


@dataclass
class Encoder3DConfig:
    """3D UNet-style encoder for volumes."""

    base_width: int = 16
    n_down: int = 3
    num_groups: int = 16

    @property
    def out_channels(self) -> int:
        return self.base_width * (2 ** self.n_down)

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.n_down

    def __post_init__(self):
        if self.base_width % self.num_groups != 0:
            raise ConfigError(
                f"base_width ({self.base_width}) must be a multiple of num_groups ({self.num_groups})"
            )
        if self.n_down < 1:
            raise ConfigError(f"n_down must be >= 1, got {self.n_down}")


@dataclass
class AdapterConfig:
    """Vision-language adapter: pooled length shared by the 2D and 3D adapters."""

    pooled_tokens: int = 9

    def __post_init__(self):
        if self.pooled_tokens < 1:
            raise ConfigError(f"pooled_tokens must be >= 1, got {self.pooled_tokens}")


@dataclass
class OrchestratorConfig:
    """Decoder-only language model with low-rank adapters."""

    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    max_seq_len: int = 512
    max_images: int = 8
    vocab_size: Optional[int] = None  # derived from the tokenizer layout when unset
    lora_rank: int = 16
    lora_alpha: float = 16.0
    lora_targets: List[str] = field(default_factory=lambda: ["q", "k", "v", "o"])
    special_token_ids: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.lora_rank < 1:
            raise ConfigError(f"lora_rank must be >= 1, got {self.lora_rank}")
        unknown = set(self.lora_targets) - {"q", "k", "v", "o", "mlp_in", "mlp_out"}
        if unknown:
            raise ConfigError(f"Unknown LoRA targets: {sorted(unknown)}")

        layout = special_token_layout(self.max_images)
        required_vocab = max(layout.values()) + 1
        if self.vocab_size is None:
            self.vocab_size = required_vocab
        if self.vocab_size < required_vocab:
            raise ConfigError(
                f"vocab_size ({self.vocab_size}) too small for {self.max_images} image ids "
                f"(needs {required_vocab})"
            )
        if not self.special_token_ids:
            self.special_token_ids = dict(layout)
        ids = list(self.special_token_ids.values())
        if len(set(ids)) != len(ids):
            raise ConfigError("Special token ids must be distinct")
        if any(i < 0 or i >= self.vocab_size for i in ids):
            raise ConfigError("Special token ids must lie within the vocabulary")

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank


@dataclass
class HeadConfig:
    """Detection MLP and segmentation UNets."""

    detection_hidden: int = 256
    unet2d_base_width: int = 32
    unet2d_stages: int = 4
    unet3d_base_width: int = 16
    unet3d_down: int = 3
    num_groups: int = 16
    mask_threshold: float = 0.5

    def __post_init__(self):
        for name in ("unet2d_base_width", "unet3d_base_width"):
            width = getattr(self, name)
            if width % self.num_groups != 0:
                raise ConfigError(f"{name} ({width}) must be a multiple of num_groups ({self.num_groups})")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError(f"mask_threshold must be in (0, 1), got {self.mask_threshold}")


@dataclass
class LossConfig:
    """Per-task loss coefficients."""

    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_smooth: float = 1.0
    box_weight: float = 1.0
    focal_weight: float = 1.0
    dice_weight: float = 1.0

    def __post_init__(self):
        if self.dice_smooth <= 0:
            raise ConfigError(f"dice_smooth must be > 0, got {self.dice_smooth}")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ConfigError(f"focal_alpha must be in [0, 1], got {self.focal_alpha}")


FULL_TOTAL_STEPS = 500_000
FULL_WARMUP_STEPS = 3_000


@dataclass
class OptimizerSchedule:
    """Linear warm-up then cosine decay, AdamW weight decay."""

    max_lr: float = 3e-4
    min_lr: float = 3e-6
    warmup_steps: int = FULL_WARMUP_STEPS
    warmup_start_lr: float = 1e-7
    total_steps: int = FULL_TOTAL_STEPS
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if not self.warmup_start_lr < self.max_lr:
            raise ConfigError("warmup_start_lr must be below max_lr")
        if not self.min_lr < self.max_lr:
            raise ConfigError("min_lr must be below max_lr")
        if not self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"warmup_steps ({self.warmup_steps}) must be below total_steps ({self.total_steps})"
            )

    @classmethod
    def rescaled(cls, total_steps: int, **kwargs) -> "OptimizerSchedule":
        """Schedule for a shorter run, warm-up scaled proportionally (minimum 50 steps)."""
        warmup = max(50, round(FULL_WARMUP_STEPS * total_steps / FULL_TOTAL_STEPS))
        warmup = max(1, min(warmup, total_steps - 1))
        return cls(warmup_steps=warmup, total_steps=total_steps, **kwargs)


@dataclass
class TrainConfig:
    """Training loop settings."""

    batch_size: int = 8
    seed: int = 0
    stage: str = "joint"  # "joint" or "segmentation_finetune"
    trainable_groups: List[str] = field(default_factory=lambda: list(TRAINABLE_GROUPS))
    grad_clip: float = 1.0
    log_every: int = 10
    checkpoint_every: int = 1000
    modality_weights: Optional[Dict[str, float]] = None
    task_weights: Optional[Dict[str, float]] = None
    device: str = field(default_factory=get_device)
    high_precision: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage not in ("joint", "segmentation_finetune"):
            raise ConfigError(f"Unknown training stage: {self.stage}")
        unknown = set(self.trainable_groups) - set(TRAINABLE_GROUPS)
        if unknown:
            raise ConfigError(f"Unknown trainable groups: {sorted(unknown)}")
        if self.stage == "segmentation_finetune":
            self.trainable_groups = ["heads"]


@dataclass
class SystemConfig:
    """Complete configuration of the coordinator, orchestrator, heads and trainer."""

    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    encoder_2d: Encoder2DConfig = field(default_factory=Encoder2DConfig)
    encoder_3d: Encoder3DConfig = field(default_factory=Encoder3DConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: OptimizerSchedule = field(default_factory=lambda: OptimizerSchedule.rescaled(5000))
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        size = self.preprocess.image_size
        if size % self.encoder_2d.patch_size != 0:
            raise ConfigError(
                f"image_size ({size}) must be a multiple of patch_size ({self.encoder_2d.patch_size})"
            )
        factor = self.encoder_3d.downsample_factor
        if any(d % factor != 0 for d in self.preprocess.volume_size):
            raise ConfigError(
                f"volume_size {self.preprocess.volume_size} must be a multiple of {factor}"
            )
        if self.training.stage == "segmentation_finetune" and self.schedule.max_lr == 3e-4:
            self.schedule.max_lr = 1e-4

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SystemConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                section_cls = type(f.default_factory())
                kwargs[f.name] = _build_section(section_cls, data[f.name])
        return cls(**kwargs)

    @classmethod
    def preset(cls, name: str) -> "SystemConfig":
        """
        Build a named preset.

        Args:
            name: "desk" (CPU-sized defaults) or "full" (full-scale shapes)

        Returns:
            SystemConfig
        """
        if name == "desk":
            return cls()
        if name == "full":
            return cls(
                encoder_2d=Encoder2DConfig(patch_size=4, d_vis=128, n_layers=12, n_heads=4,
                                           window_size=7),
                orchestrator=OrchestratorConfig(d_model=4096, n_layers=32, n_heads=32,
                                                max_seq_len=4096, vocab_size=32000),
                preprocess=PreprocessConfig(volume_size=(64, 192, 192)),
                schedule=OptimizerSchedule(),
            )
        raise ConfigError(f"Unknown preset: {name}. Must be 'desk' or 'full'")


def _build_section(section_cls, values: Dict[str, Any]):
    """Instantiate a config dataclass from a plain mapping, rejecting unknown keys."""
    if is_dataclass(values):
        return values
    known = {f.name for f in fields(section_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown keys for {section_cls.__name__}: {sorted(unknown)}")
    return section_cls(**values)


# Section names in config files map to SystemConfig attributes.
SECTION_NAMES = {
    "PREPROCESS": "preprocess",
    "ENCODER2D": "encoder_2d",
    "ENCODER3D": "encoder_3d",
    "ADAPTER": "adapter",
    "ORCHESTRATOR": "orchestrator",
    "HEADS": "heads",
    "LOSS": "loss",
    "SCHEDULE": "schedule",
    "TRAINING": "training",
}


def _parse_ini_value(raw: str) -> Any:
    """Parse an .ini value: JSON literals first, then booleans, else the raw string."""
    text = raw.strip()
    for candidate in (text, text.lower()):
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    return text


class ConfigManager:
    """Manages configuration loading from .ini or .json files with CLI overrides."""

    def __init__(self, config_file: Optional[Path] = None, cli_overrides: Optional[Dict[str, Any]] = None):
        """
        Initialize configuration manager.

        Args:
            config_file: Path to .ini or .json configuration file
            cli_overrides: Dotted-key overrides, e.g. {"training.batch_size": 4}
        """
        self.config_file = Path(config_file) if config_file else None
        self.cli_overrides = cli_overrides or {}

        if self.config_file and not self.config_file.exists():
            raise ConfigError(f"Configuration file not found: {config_file}")

    def load_config(self) -> SystemConfig:
        """
        Load configuration from file and apply overrides.

        Returns:
            SystemConfig object

        Raises:
            ConfigError: If configuration is invalid
        """
        preset = "desk"
        sections: Dict[str, Dict[str, Any]] = {}

        if self.config_file:
            logger.info(f"Loading configuration from {self.config_file}")
            if self.config_file.suffix.lower() == ".json":
                preset, sections = self._load_from_json()
            else:
                preset, sections = self._load_from_ini()
        else:
            logger.info("No configuration file provided, using preset defaults")

        if self.cli_overrides:
            logger.info(f"Applying {len(self.cli_overrides)} CLI overrides")
            for dotted, value in self.cli_overrides.items():
                if "." not in dotted:
                    raise ConfigError(f"Override keys must be 'section.key', got '{dotted}'")
                section, key = dotted.split(".", 1)
                sections.setdefault(section, {})[key] = value

        seed = get_seed_override()
        if seed is not None:
            logger.info(f"Seed overridden by MEDORCH_SEED: {seed}")
            sections.setdefault("training", {})["seed"] = seed

        base = SystemConfig.preset(preset).to_dict()
        for section, values in sections.items():
            if section not in base:
                raise ConfigError(f"Unknown configuration section: {section}")
            base[section].update(values)

        # The schedule follows total_steps unless warmup is pinned explicitly.
        schedule_values = sections.get("schedule", {})
        if "total_steps" in schedule_values and "warmup_steps" not in schedule_values and preset == "desk":
            rescaled = OptimizerSchedule.rescaled(int(schedule_values["total_steps"]))
            base["schedule"]["warmup_steps"] = rescaled.warmup_steps

        # Derived special-token table is rebuilt from max_images.
        if "orchestrator" in sections:
            if "special_token_ids" not in sections["orchestrator"]:
                base["orchestrator"]["special_token_ids"] = {}
            if "vocab_size" not in sections["orchestrator"] and preset == "desk":
                base["orchestrator"]["vocab_size"] = None

        try:
            return SystemConfig.from_dict(base)
        except TypeError as e:
            raise ConfigError(f"Invalid configuration: {e}")

    def _load_from_json(self) -> Tuple[str, Dict[str, Dict[str, Any]]]:
        """Load configuration from a .json file with the same sections as the .ini form."""
        with open(self.config_file, 'r') as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Malformed JSON in {self.config_file}: {e}")

        preset = raw.pop("preset", "desk")
        sections = {}
        for name, values in raw.items():
            key = SECTION_NAMES.get(name.upper(), name)
            sections[key] = dict(values)
        return preset, sections

    def _load_from_ini(self) -> Tuple[str, Dict[str, Dict[str, Any]]]:
        """Load configuration from an .ini file."""
        config = configparser.ConfigParser(
            delimiters="=",
            inline_comment_prefixes=("#",)
        )
        # Keys are dataclass field names; keep their case.
        config.optionxform = str
        config.read(self.config_file)

        preset = "desk"
        if "GENERAL" in config:
            preset = config["GENERAL"].get("PRESET", "desk")

        sections: Dict[str, Dict[str, Any]] = {}
        for section_name in config.sections():
            if section_name == "GENERAL":
                continue
            if section_name not in SECTION_NAMES:
                raise ConfigError(f"Unknown configuration section: [{section_name}]")
            sections[SECTION_NAMES[section_name]] = {
                key: _parse_ini_value(value) for key, value in config[section_name].items()
            }
        return preset, sections

    @staticmethod
    def create_default_ini(output_path: Path) -> None:
        """
        Create a default .ini configuration file.

        Args:
            output_path: Path where to save the .ini file
        """
        config = configparser.ConfigParser(delimiters="=")
        config.optionxform = str

        config["GENERAL"] = {"PRESET": "desk"}
        config["ORCHESTRATOR"] = {
            "d_model": "256",
            "n_layers": "4",
            "n_heads": "4",
            "lora_rank": "16",
            "lora_alpha": "16",
        }
        config["ADAPTER"] = {"pooled_tokens": "9"}
        config["SCHEDULE"] = {
            "max_lr": "3e-4",
            "min_lr": "3e-6",
            "warmup_start_lr": "1e-7",
            "total_steps": "5000",
            "weight_decay": "0.01",
        }
        config["TRAINING"] = {
            "batch_size": "8",
            "seed": "0",
            "trainable_groups": '["lora", "special_tokens", "adapters", "encoders", "heads"]',
            "grad_clip": "1.0",
        }
        config["LOSS"] = {
            "focal_gamma": "2.0",
            "focal_alpha": "0.25",
            "dice_smooth": "1.0",
            "box_weight": "1.0",
        }

        with open(output_path, 'w') as f:
            config.write(f)

        logger.info(f"Created default configuration file: {output_path}")
