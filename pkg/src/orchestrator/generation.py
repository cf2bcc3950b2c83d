"""
Greedy decoding and task-tag extraction.

A task tag emitted by the orchestrator carries the last-layer hidden state
at the tag's own position; that vector prompts the routed vision module.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence

import torch

from ..coordinator.prompt import AssembledPrompt
from ..coordinator.tokenizer import BOS, DET, PAD, SEG2D, SEG3D, VIS, ByteTokenizer
from ..errors import SequenceLengthError
from .model import OrchestratorLM

logger = logging.getLogger(__name__)


class TagKind(str, Enum):
    DET = "DET"
    SEG2D = "SEG2D"
    SEG3D = "SEG3D"


TAG_TOKENS = {TagKind.DET: DET, TagKind.SEG2D: SEG2D, TagKind.SEG3D: SEG3D}


@dataclass
class TagEvent:
    """One emitted task tag."""

    kind: TagKind
    position: int            # index into GenerationOutput.token_ids
    embedding: torch.Tensor  # (d_model,)


@dataclass
class GenerationOutput:
    text: str
    token_ids: List[int]
    tag_events: List[TagEvent] = field(default_factory=list)


def tag_id_map(tokenizer: ByteTokenizer) -> dict:
    """Special id -> TagKind for the three task tags."""
    return {tokenizer.special_id(token): kind for kind, token in TAG_TOKENS.items()}


def scan_tags(token_ids: Sequence[int], tokenizer: ByteTokenizer) -> List[tuple]:
    """(position, TagKind) for every task-tag id, in order."""
    kinds = tag_id_map(tokenizer)
    return [(i, kinds[int(t)]) for i, t in enumerate(token_ids) if int(t) in kinds]


def extract_tag_events(
    token_ids: Sequence[int],
    hidden: torch.Tensor,
    tokenizer: ByteTokenizer,
    offset: int = 0,
) -> List[TagEvent]:
    """
    Build TagEvents for every task tag in `token_ids`.

    Args:
        token_ids: Generated (or target) ids
        hidden: (T, d_model) hidden states of the full sequence
        tokenizer: Tokenizer holding the tag ids
        offset: Index in `hidden` of token_ids[0]

    Returns:
        Events ordered by position
    """
    return [
        TagEvent(kind=kind, position=position, embedding=hidden[offset + position])
        for position, kind in scan_tags(token_ids, tokenizer)
    ]


def generate(
    model: OrchestratorLM,
    prompt: AssembledPrompt,
    tokenizer: ByteTokenizer,
    max_new_tokens: int = 64,
    with_grad: bool = False,
) -> GenerationOutput:
    """
    Greedy decoding from `prompt` + <bos> until <eos> or the token budget.

    Padding, the visual placeholder and <bos> are never emitted. After
    decoding, one more pass over the whole sequence collects the hidden
    states at tag positions; with `with_grad` that pass keeps the graph so a
    downstream head loss reaches the orchestrator.

    Returns:
        GenerationOutput; `token_ids` excludes the final <eos>

    Raises:
        SequenceLengthError: If the prompt leaves no room for a generated token
    """
    suppressed = [tokenizer.special_id(t) for t in (PAD, VIS, BOS)]
    ids = list(prompt.token_ids) + [tokenizer.bos_id]
    start = len(ids)
    if start >= model.config.max_seq_len:
        raise SequenceLengthError(
            f"Prompt + <bos> is {start} tokens, leaving no room to decode within "
            f"max_seq_len {model.config.max_seq_len}"
        )
    budget = min(max_new_tokens, model.config.max_seq_len - start)

    with torch.no_grad():
        for _ in range(budget):
            hidden = model.hidden_for_ids(prompt, ids)
            logits = model.logits(hidden[-1])
            logits[suppressed] = float("-inf")
            next_id = int(torch.argmax(logits))
            if next_id == tokenizer.eos_id:
                break
            ids.append(next_id)

    generated = ids[start:]
    events: List[TagEvent] = []
    if scan_tags(generated, tokenizer):
        with torch.set_grad_enabled(with_grad):
            hidden = model.hidden_for_ids(prompt, ids)
        events = extract_tag_events(generated, hidden, tokenizer, offset=start)

    text = tokenizer.decode(generated)
    logger.debug(f"Generated {len(generated)} tokens with {len(events)} tag events")
    return GenerationOutput(text=text, token_ids=generated, tag_events=events)
