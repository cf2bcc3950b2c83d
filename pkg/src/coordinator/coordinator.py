"""
Multimodal input coordinator: vision encoders, the two vision-language
adapters and the tokenizer behind one module.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import torch
import torch.nn as nn

from ..config import SystemConfig
from .adapter import VisionLanguageAdapter
from .encoders import PatchEncoder2D, VolumeEncoder3D
from .prompt import AssembledPrompt, assemble_prompt
from .records import RANK_2D, ImageRecord, VisualTokenBlock
from .tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)


class MultimodalCoordinator(nn.Module):
    """Turns images/volumes plus an instruction into an AssembledPrompt."""

    def __init__(self, config: SystemConfig, tokenizer: ByteTokenizer):
        super().__init__()
        self.config = config
        self.tokenizer = tokenizer
        d_model = config.orchestrator.d_model
        pooled = config.adapter.pooled_tokens

        self.encoder_2d = PatchEncoder2D(config.encoder_2d, in_channels=config.preprocess.channels_2d)
        self.encoder_3d = VolumeEncoder3D(config.encoder_3d, in_channels=config.preprocess.channels_3d)
        self.adapter_2d = VisionLanguageAdapter(config.encoder_2d.d_vis, d_model, pooled)
        self.adapter_3d = VisionLanguageAdapter(self.encoder_3d.out_channels, d_model, pooled)

    def _modules_for(self, rank: str) -> Tuple[nn.Module, VisionLanguageAdapter]:
        if rank == RANK_2D:
            return self.encoder_2d, self.adapter_2d
        return self.encoder_3d, self.adapter_3d

    def encode_image(self, record: ImageRecord) -> VisualTokenBlock:
        """Pick the encoder and adapter matching the record's rank."""
        return self.encode_images([record])[0]

    def encode_images(self, records: Sequence[ImageRecord]) -> List[VisualTokenBlock]:
        """
        Encode many records, batching those with equal rank and shape.

        Returns:
            Blocks in the same order as `records`
        """
        param = next(self.parameters())
        buckets: Dict[Tuple[str, Tuple[int, ...]], List[int]] = defaultdict(list)
        for i, record in enumerate(records):
            buckets[(record.rank, record.pixels.shape)].append(i)

        blocks: List[VisualTokenBlock] = [None] * len(records)  # type: ignore[list-item]
        for (rank, _), positions in buckets.items():
            encoder, adapter = self._modules_for(rank)
            batch = torch.stack([records[i].to_tensor() for i in positions]).to(param)
            pooled = adapter(encoder(batch))
            for row, i in enumerate(positions):
                blocks[i] = VisualTokenBlock(source_image_id=records[i].id, tokens=pooled[row])
        return blocks

    def assemble(self, records: Sequence[ImageRecord], instruction: str) -> AssembledPrompt:
        """Encode images and assemble them with the instruction."""
        return assemble_prompt(self.encode_images(records), instruction, self.tokenizer)
