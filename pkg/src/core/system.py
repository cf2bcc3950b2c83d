"""
The full multimodal system: coordinator, orchestrator and vision heads.

Inference follows the orchestrated workflow: encode the images, assemble
the prompt, decode greedily, then route every emitted task tag to its
vision module with the tag's hidden state as the prompt embedding.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..config import SystemConfig
from ..coordinator.coordinator import MultimodalCoordinator
from ..coordinator.prompt import AssembledPrompt
from ..coordinator.records import ImageRecord
from ..coordinator.tokenizer import DET, ByteTokenizer
from ..errors import ConfigError, InputError
from ..heads.detection import DetectionHead, detect
from ..heads.outputs import BoundingBox, SegMask
from ..heads.unet2d import UNet2D, segment_2d
from ..heads.unet3d import UNet3D, segment_3d
from ..instructions.samples import parse_detection_target
from ..orchestrator.generation import GenerationOutput, TagEvent, extract_tag_events, generate
from ..orchestrator.model import OrchestratorLM, TeacherForcedOutput
from ..orchestrator.routing import VisionModule, route

logger = logging.getLogger(__name__)


@dataclass
class DetectionOutput:
    class_name: str
    box: BoundingBox


@dataclass
class MaskOutput:
    tag: str
    image_id: str
    mask: SegMask


@dataclass
class InferenceResult:
    text: str
    token_ids: List[int]
    boxes: List[DetectionOutput] = field(default_factory=list)
    masks: List[MaskOutput] = field(default_factory=list)


@dataclass
class BatchForward:
    """Teacher-forced batch pass plus the tag events found in each target."""

    output: TeacherForcedOutput
    prompts: List[AssembledPrompt]
    target_ids: List[List[int]]
    tag_events: List[List[TagEvent]]


class MultimodalSystem(nn.Module):
    """Coordinator + orchestrator + detection / 2D / 3D segmentation heads."""

    def __init__(self, config: SystemConfig):
        super().__init__()
        self.config = config
        orch = config.orchestrator
        self.tokenizer = ByteTokenizer(orch.max_images, orch.special_token_ids)
        if self.tokenizer.vocab_size > orch.vocab_size:
            raise ConfigError(
                f"Tokenizer needs {self.tokenizer.vocab_size} ids but vocab_size is {orch.vocab_size}"
            )

        heads = config.heads
        self.coordinator = MultimodalCoordinator(config, self.tokenizer)
        self.orchestrator = OrchestratorLM(orch)
        self.detection_head = DetectionHead(orch.d_model, heads.detection_hidden)
        self.unet2d = UNet2D(config.preprocess.channels_2d, orch.d_model, heads.unet2d_base_width,
                             heads.unet2d_stages, heads.num_groups)
        self.unet3d = UNet3D(config.preprocess.channels_3d, orch.d_model, heads.unet3d_base_width,
                             heads.unet3d_down, heads.num_groups)

    @property
    def device(self) -> torch.device:
        return self.orchestrator.base_embedding.device

    def assemble(self, records: Sequence[ImageRecord], instruction: str) -> AssembledPrompt:
        return self.coordinator.assemble(records, instruction)

    def forward_batch(self, images: Sequence[Sequence[ImageRecord]], instructions: Sequence[str],
                      targets: Sequence[str]) -> BatchForward:
        """
        Teacher-forced pass over a batch.

        Args:
            images: Per-sample image records
            instructions: Per-sample rendered instructions
            targets: Per-sample target texts

        Returns:
            BatchForward with tag events whose embeddings keep the graph
        """
        tok = self.tokenizer
        prompts = [self.assemble(recs, text) for recs, text in zip(images, instructions)]
        target_ids = [tok.encode(t) for t in targets]
        output = self.orchestrator.forward_batch(prompts, target_ids, tok.bos_id, tok.eos_id, tok.pad_id)
        events = [
            extract_tag_events(ids, output.hidden[b], tok, offset=output.answer_offsets[b])
            for b, ids in enumerate(target_ids)
        ]
        return BatchForward(output=output, prompts=prompts, target_ids=target_ids, tag_events=events)

    def generate(self, records: Sequence[ImageRecord], instruction: str, max_new_tokens: int = 64,
                 with_grad: bool = False) -> GenerationOutput:
        prompt = self.assemble(records, instruction)
        return generate(self.orchestrator, prompt, self.tokenizer, max_new_tokens, with_grad)

    def infer(self, records: Sequence[ImageRecord], instruction: str, max_new_tokens: int = 64) -> InferenceResult:
        """
        Run the orchestrated workflow on preprocessed records.

        Masks are produced for the main image (lowest image id) at its
        preprocessed resolution.

        Raises:
            RoutingError: A tag does not fit the rank of the main image
        """
        if not records:
            raise InputError("Inference needs at least one image")
        main = min(records, key=lambda r: r.index)
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                generation = self.generate(records, instruction, max_new_tokens)
            result = InferenceResult(text=generation.text, token_ids=generation.token_ids)

            det_names = [name for name, tag in parse_detection_target(generation.text) if tag == DET]
            det_index = 0
            threshold = self.config.heads.mask_threshold
            for event in generation.tag_events:
                module = route(event, main.rank)
                if module == VisionModule.DETECTION:
                    name = det_names[det_index] if det_index < len(det_names) else ""
                    det_index += 1
                    result.boxes.append(DetectionOutput(name, detect(self.detection_head, event.embedding)[0]))
                elif module == VisionModule.SEGMENTATION_2D:
                    mask = segment_2d(self.unet2d, main, event.embedding, threshold)
                    result.masks.append(MaskOutput(event.kind.value, main.id, mask))
                else:
                    mask = segment_3d(self.unet3d, main, event.embedding, threshold)
                    result.masks.append(MaskOutput(event.kind.value, main.id, mask))
        finally:
            self.train(was_training)

        logger.info(f"Inference: {len(result.token_ids)} tokens, {len(result.boxes)} boxes, "
                    f"{len(result.masks)} masks")
        return result

    def named_parameter_groups(self) -> List[Tuple[str, List[Tuple[str, nn.Parameter]]]]:
        """Parameters by trainable group name; frozen base weights are in none of them."""
        orch = self.orchestrator
        return [
            ("lora", [(n, p) for n, p in orch.named_parameters() if ".lora_" in n]),
            ("special_tokens", [("orchestrator.special_embedding", orch.special_embedding)]),
            ("adapters", [(f"coordinator.adapter_{r}.{n}", p)
                          for r, module in (("2d", self.coordinator.adapter_2d), ("3d", self.coordinator.adapter_3d))
                          for n, p in module.named_parameters()]),
            ("encoders", [(f"coordinator.encoder_{r}.{n}", p)
                          for r, module in (("2d", self.coordinator.encoder_2d), ("3d", self.coordinator.encoder_3d))
                          for n, p in module.named_parameters()]),
            ("heads", [(f"{h}.{n}", p)
                       for h, module in (("detection_head", self.detection_head), ("unet2d", self.unet2d),
                                         ("unet3d", self.unet3d))
                       for n, p in module.named_parameters()]),
        ]


def build_system(config: SystemConfig, seed: Optional[int] = None) -> MultimodalSystem:
    """Seeded construction so two builds with the same seed are identical."""
    if seed is not None:
        torch.manual_seed(seed)
    system = MultimodalSystem(config)
    if config.training.high_precision:
        system = system.double()
    return system.to(config.training.device)
