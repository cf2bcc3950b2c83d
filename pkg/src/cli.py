"""
Command-line interface for MedOrch.

Subcommands for synthetic data generation, training, evaluation and
inference. Configuration comes from .ini or .json files with command-line
overrides.
"""

import argparse
import sys
import logging
from pathlib import Path
from typing import Dict, List, Optional

from .config import ConfigManager, get_device
from .errors import ConfigError, InputError, MedOrchRuntimeError, ValidationError
from .utils.logging import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

VOLUME_SUFFIXES = (".f32", ".u8")


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Returns:
        Parsed arguments
    """
    parser = argparse.ArgumentParser(
        prog="medorch",
        description="MedOrch - orchestrated multimodal medical image interpretation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate a synthetic dataset
  python -m src.cli synth --spec configs/synthetic_spec.json --out data/synth

  # Train from a manifest
  python -m src.cli train --config configs/desk.ini --manifest data/synth/manifest.jsonl --out runs/desk

  # Evaluate a checkpoint
  python -m src.cli eval --checkpoint runs/desk/checkpoint_final.pt \\
                         --manifest data/synth/manifest.jsonl --split test --report report.json

  # Inference on one image
  python -m src.cli infer --checkpoint runs/desk/checkpoint_final.pt --image scan.png \\
                          --prompt "Segment square in <img0>." --out out/
        """
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level"
    )
    parser.add_argument("--log-file", type=Path, help="Log to file")
    parser.add_argument("--create-template", type=Path,
                        help="Create template .ini file and exit")
    parser.add_argument("--version", action="version", version="MedOrch 0.1.0")

    sub = parser.add_subparsers(dest="command")

    synth = sub.add_parser("synth", help="Generate a synthetic shapes dataset")
    synth.add_argument("--spec", type=Path, required=True, help="SyntheticSpec JSON file")
    synth.add_argument("--out", type=Path, required=True, help="Output directory")

    train = sub.add_parser("train", help="Train on a manifest")
    train.add_argument("--config", "-c", type=Path, help="Path to .ini or .json configuration file")
    train.add_argument("--manifest", type=Path, required=True, help="JSON Lines manifest")
    train.add_argument("--out", type=Path, required=True, help="Run directory")
    train.add_argument("--steps", type=int, help="Number of steps (defaults to schedule total_steps)")
    train.add_argument("--resume", type=Path, help="Checkpoint to continue from")
    train.add_argument("--batch-size", type=int, help="Minibatch size")
    train.add_argument("--seed", type=int, help="Run seed")
    train.add_argument("--stage", choices=["joint", "segmentation_finetune"], help="Training stage")
    train.add_argument("--device", help="Torch device")
    train.add_argument("--zip", action="store_true", help="Zip the run directory when done")

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    evaluate.add_argument("--manifest", type=Path, required=True, help="JSON Lines manifest")
    evaluate.add_argument("--split", default="test", choices=["train", "val", "test"], help="Split to evaluate")
    evaluate.add_argument("--report", type=Path, required=True, help="JSON report output")
    evaluate.add_argument("--seed", type=int, default=0, help="Evaluation seed")
    evaluate.add_argument("--resamples", type=int, default=1000, help="Bootstrap resamples")
    evaluate.add_argument("--device", help="Torch device")

    infer = sub.add_parser("infer", help="Run inference on images")
    infer.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    infer.add_argument("--image", type=Path, action="append", required=True,
                       help="Input image (PNG) or volume blob (.f32/.u8 with sidecar); repeat for <img1>, ...")
    infer.add_argument("--prompt", required=True, help="Request text referring to <img0>, <img1>, ...")
    infer.add_argument("--modality", default="synthetic", help="Imaging modality of the inputs")
    infer.add_argument("--max-new-tokens", type=int, default=64, help="Generation budget")
    infer.add_argument("--out", type=Path, required=True, help="Output directory")
    infer.add_argument("--device", help="Torch device")
    infer.add_argument("--zip", action="store_true", help="Zip the output directory")

    return parser.parse_args(argv)


def _train_overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    if args.batch_size is not None:
        overrides["training.batch_size"] = args.batch_size
    if args.seed is not None:
        overrides["training.seed"] = args.seed
    if args.stage:
        overrides["training.stage"] = args.stage
    if args.device:
        overrides["training.device"] = args.device
    return overrides


def run_synth(args: argparse.Namespace) -> int:
    from .data.synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.from_json(args.spec)
    records = generate_synthetic(spec, args.out)
    print(f"Wrote {len(records)} records to {args.out / 'manifest.jsonl'}")
    return EXIT_OK


def run_train(args: argparse.Namespace) -> int:
    from .core.runner import TrainingRun

    overrides = _train_overrides(args)
    system, start_step = None, 0
    if args.resume:
        flags = {"--config": args.config, "--batch-size": args.batch_size, "--seed": args.seed,
                 "--stage": args.stage}
        ignored = [flag for flag, value in flags.items() if value is not None]
        if ignored:
            raise ConfigError(
                f"--resume restores the checkpoint's configuration; drop {', '.join(ignored)}"
            )
        from .core.checkpoint import load_checkpoint

        system, start_step = load_checkpoint(args.resume, args.device or get_device())
        config = system.config
        logger.info(f"Resuming from {args.resume} at step {start_step}")
    else:
        config = ConfigManager(config_file=args.config, cli_overrides=overrides).load_config()

    logger.info("=" * 60)
    logger.info("MedOrch")
    logger.info("=" * 60)
    logger.info(f"Manifest: {args.manifest}")
    logger.info(f"Stage: {config.training.stage}, batch size {config.training.batch_size}, "
                f"seed {config.training.seed}")
    logger.info(f"Orchestrator: d_model {config.orchestrator.d_model}, {config.orchestrator.n_layers} layers, "
                f"LoRA rank {config.orchestrator.lora_rank}")

    run = TrainingRun(config, args.manifest, args.out, num_steps=args.steps, system=system, start_step=start_step)
    final = run.run(create_zip=args.zip)
    print(f"Final checkpoint: {final}")
    return EXIT_OK


def run_eval(args: argparse.Namespace) -> int:
    from .core.checkpoint import load_checkpoint
    from .data.manifest import load_manifest
    from .evaluation.evaluator import evaluate, write_report

    system, _ = load_checkpoint(args.checkpoint, args.device or get_device())
    records = load_manifest(args.manifest)
    rows = evaluate(system, records, args.split, seed=args.seed, n_resamples=args.resamples)
    write_report(rows, args.report)
    return EXIT_OK


def load_inference_images(paths: List[Path], modality: str, config) -> list:
    """Read and eval-mode preprocess CLI inputs as img0, img1, ..."""
    from .coordinator.preprocess import preprocess_2d, preprocess_3d
    from .data.io import read_png, read_volume

    records = []
    for i, path in enumerate(paths):
        image_id = f"img{i}"
        if path.suffix.lower() in VOLUME_SUFFIXES:
            record, _ = preprocess_3d(read_volume(path), None, False, None, config.preprocess, image_id, modality)
        elif path.suffix.lower() == ".png":
            record = preprocess_2d(read_png(path), False, None, config.preprocess, image_id, modality)
        else:
            raise InputError(f"Unsupported input file {path}: expected .png, .f32 or .u8")
        records.append(record)
    return records


def run_infer(args: argparse.Namespace) -> int:
    from .core.checkpoint import load_checkpoint
    from .output.packaging import package_inference

    system, _ = load_checkpoint(args.checkpoint, args.device or get_device())
    images = load_inference_images(args.image, args.modality, system.config)
    result = system.infer(images, args.prompt, args.max_new_tokens)
    package_inference(result, args.out, prompt=args.prompt, image_paths=args.image, create_zip=args.zip)
    print(result.text)
    return EXIT_OK


COMMANDS = {
    "synth": run_synth,
    "train": run_train,
    "eval": run_eval,
    "infer": run_infer,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for CLI.

    Returns:
        Exit code (0 success, 1 validation error, 2 runtime or divergence error)
    """
    args = parse_arguments(argv)

    # Setup logging
    setup_logging(level=args.log_level, log_file=args.log_file)

    try:
        if args.create_template:
            ConfigManager.create_default_ini(args.create_template)
            print(f"Created template configuration: {args.create_template}")
            return EXIT_OK

        if not args.command:
            logger.error("No command given; use one of: " + ", ".join(COMMANDS))
            return EXIT_VALIDATION

        return COMMANDS[args.command](args)

    except KeyboardInterrupt:
        logger.info("\nInterrupted by user")
        return EXIT_RUNTIME

    except ValidationError as e:
        logger.error(f"Error: {e}", exc_info=True)
        return EXIT_VALIDATION

    except MedOrchRuntimeError as e:
        logger.error(f"Error: {e}", exc_info=True)
        return EXIT_RUNTIME

    except Exception as e:
        logger.error(f"Error: {e}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
