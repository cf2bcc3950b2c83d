"""
Prompt assembly: interleaves image-identifier wrappers, visual token slots
and the tokenized instruction into one sequence.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch

from ..errors import InputError, UnresolvedIdentifierError
from .records import VisualTokenBlock
from .tokenizer import IMAGE_ID_PATTERN, ByteTokenizer, image_close_token, image_open_token

SEGMENT_OPEN = "open"
SEGMENT_VISUAL = "visual"
SEGMENT_CLOSE = "close"
SEGMENT_TEXT = "text"


@dataclass
class PromptSegment:
    kind: str
    start: int
    length: int
    image_id: Optional[str] = None


@dataclass
class AssembledPrompt:
    """
    Flattened prompt. Visual slots carry the <vis> id in `token_ids`; their
    embeddings come from `visual_embeddings` (in position order) instead of
    the token-embedding table.
    """

    segments: List[PromptSegment]
    token_ids: List[int]
    is_visual: List[bool]
    instruction: str
    visual_embeddings: Optional[torch.Tensor] = None
    image_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def visual_positions(self) -> List[int]:
        return [i for i, v in enumerate(self.is_visual) if v]

    @property
    def text_positions(self) -> List[int]:
        return [i for s in self.segments if s.kind == SEGMENT_TEXT for i in range(s.start, s.start + s.length)]

    def decode_instruction(self, tokenizer: ByteTokenizer) -> str:
        """Decode the instruction positions back to text."""
        return tokenizer.decode(self.token_ids[i] for i in self.text_positions)


def assemble_prompt(
    blocks: Sequence[VisualTokenBlock],
    instruction: str,
    tokenizer: ByteTokenizer,
) -> AssembledPrompt:
    """
    Build `<imgK> v_K </imgK>` for each block in ascending id order, followed by the instruction.

    Args:
        blocks: Visual token blocks, one per image
        instruction: Instruction text; may mention <imgK> identifiers
        tokenizer: Tokenizer with image-identifier specials

    Returns:
        AssembledPrompt

    Raises:
        UnresolvedIdentifierError: If the instruction mentions an image with no block
    """
    ordered = sorted(blocks, key=lambda b: b.index)
    indices = [b.index for b in ordered]
    if len(set(indices)) != len(indices):
        raise InputError(f"Duplicate image ids among visual blocks: {indices}")
    for index in indices:
        if index >= tokenizer.max_images:
            raise UnresolvedIdentifierError(
                f"Image id img{index} exceeds the tokenizer's {tokenizer.max_images} identifiers"
            )

    referenced = {int(i) for i in IMAGE_ID_PATTERN.findall(instruction)}
    missing = sorted(referenced - set(indices))
    if missing:
        names = ", ".join(image_open_token(i) for i in missing)
        raise UnresolvedIdentifierError(f"Instruction references {names} but no such image was provided")

    segments: List[PromptSegment] = []
    token_ids: List[int] = []
    is_visual: List[bool] = []

    def extend(kind: str, ids: List[int], visual: bool, image_id: Optional[str] = None) -> None:
        segments.append(PromptSegment(kind=kind, start=len(token_ids), length=len(ids), image_id=image_id))
        token_ids.extend(ids)
        is_visual.extend([visual] * len(ids))

    for block in ordered:
        extend(SEGMENT_OPEN, [tokenizer.special_id(image_open_token(block.index))], False, block.source_image_id)
        extend(SEGMENT_VISUAL, [tokenizer.vis_id] * len(block), True, block.source_image_id)
        extend(SEGMENT_CLOSE, [tokenizer.special_id(image_close_token(block.index))], False, block.source_image_id)

    extend(SEGMENT_TEXT, tokenizer.encode(instruction), False)

    visual = torch.cat([b.tokens for b in ordered], dim=0) if ordered else None
    return AssembledPrompt(
        segments=segments,
        token_ids=token_ids,
        is_visual=is_visual,
        instruction=instruction,
        visual_embeddings=visual,
        image_ids=[b.source_image_id for b in ordered],
    )
