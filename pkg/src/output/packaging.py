"""
Output packaging for MedOrch inference.

Writes generated text, boxes and masks into an output directory, with a
summary and an optional zip archive.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.system import InferenceResult
from ..data.io import write_mask_png, write_volume
from ..utils.helpers import ensure_directory, get_file_size_mb, zip_directory

logger = logging.getLogger(__name__)


class OutputPackager:
    """Packages one inference result for distribution."""

    def __init__(self, out_dir: Path, prompt: Optional[str] = None, image_paths: Optional[List[Path]] = None):
        """
        Initialize output packager.

        Args:
            out_dir: Output directory (created)
            prompt: Prompt text, recorded in the summary
            image_paths: Input images, recorded in the summary
        """
        self.out_dir = ensure_directory(out_dir)
        self.prompt = prompt
        self.image_paths = [str(p) for p in (image_paths or [])]

    def write_text(self, result: InferenceResult) -> Path:
        path = self.out_dir / "text.txt"
        path.write_text(result.text)
        return path

    def write_boxes(self, result: InferenceResult) -> Path:
        path = self.out_dir / "boxes.json"
        boxes = [{"class": b.class_name, "box": b.box.as_list()} for b in result.boxes]
        path.write_text(json.dumps(boxes, indent=2))
        return path

    def write_masks(self, result: InferenceResult) -> List[Dict[str, Any]]:
        """
        Write every mask: 2D masks as 0/255 PNG, 3D masks as a uint8 blob,
        and the probabilities of both as a float32 blob with sidecar.
        """
        written = []
        for i, output in enumerate(result.masks):
            probabilities = output.mask.probabilities
            if probabilities.ndim == 2:
                binary_path = write_mask_png(self.out_dir / f"mask_{i}.png", probabilities, output.mask.threshold)
            else:
                binary_path, _ = write_volume(self.out_dir / f"mask_{i}.u8", output.mask.binary(), "uint8")
            prob_path, _ = write_volume(self.out_dir / f"mask_{i}.f32", probabilities, "float32")
            written.append({
                "index": i,
                "tag": output.tag,
                "image_id": output.image_id,
                "shape": list(output.mask.shape),
                "threshold": output.mask.threshold,
                "foreground_fraction": float(output.mask.binary().mean()),
                "mask": binary_path.name,
                "probabilities": prob_path.name,
            })
        return written

    def generate_summary(self, result: InferenceResult, masks: List[Dict[str, Any]]) -> Dict[str, Any]:
        return {
            "prompt": self.prompt,
            "images": self.image_paths,
            "text": result.text,
            "n_tokens": len(result.token_ids),
            "boxes": [{"class": b.class_name, "box": b.box.as_list()} for b in result.boxes],
            "masks": masks,
        }

    def finalize_output(self, result: InferenceResult, create_zip: bool = False) -> Path:
        """
        Write all outputs and summary.json; optionally zip the directory.

        Returns:
            Output directory (or the zip path when create_zip)
        """
        logger.info("=" * 60)
        logger.info("Packaging Inference Output")
        logger.info("=" * 60)

        self.write_text(result)
        self.write_boxes(result)
        masks = self.write_masks(result)
        summary_path = self.out_dir / "summary.json"
        summary_path.write_text(json.dumps(self.generate_summary(result, masks), indent=2))
        logger.info(f"   ✓ Text, {len(result.boxes)} boxes and {len(masks)} masks written to {self.out_dir}")

        if create_zip:
            zip_path = zip_directory(self.out_dir)
            logger.info(f"   ✓ Zip created: {zip_path.name} ({get_file_size_mb(zip_path):.1f} MB)")
            return zip_path
        return self.out_dir


def package_inference(result: InferenceResult, out_dir: Path, prompt: Optional[str] = None,
                      image_paths: Optional[List[Path]] = None, create_zip: bool = False) -> Path:
    """Write an inference result to `out_dir`; see OutputPackager."""
    return OutputPackager(out_dir, prompt, image_paths).finalize_output(result, create_zip)
