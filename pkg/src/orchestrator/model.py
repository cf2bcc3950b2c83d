"""
Decoder-only language model used as the orchestrator.

Base weights are frozen. Trainable state is limited to the LoRA factors on
the configured projections and the embedding rows of the special tokens;
the LM head is tied to the (partly trainable) embedding table.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import OrchestratorConfig
from ..coordinator.prompt import AssembledPrompt
from ..coordinator.tokenizer import BYTE_VOCAB
from ..errors import SequenceLengthError
from .lora import LoRALinear

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100


def _linear(config: OrchestratorConfig, name: str, in_features: int, out_features: int) -> nn.Module:
    if name in config.lora_targets:
        return LoRALinear(in_features, out_features, config.lora_rank, config.lora_alpha)
    return nn.Linear(in_features, out_features)


class CausalSelfAttention(nn.Module):
    def __init__(self, config: OrchestratorConfig):
        super().__init__()
        d = config.d_model
        self.n_heads = config.n_heads
        self.head_dim = d // config.n_heads
        self.q = _linear(config, "q", d, d)
        self.k = _linear(config, "k", d, d)
        self.v = _linear(config, "v", d, d)
        self.o = _linear(config, "o", d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, width = x.shape

        def heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        future = torch.ones(length, length, dtype=torch.bool, device=x.device).triu(1)
        scores = scores.masked_fill(future, float("-inf"))
        attended = scores.softmax(dim=-1) @ v
        return self.o(attended.transpose(1, 2).reshape(batch, length, width))


class DecoderBlock(nn.Module):
    def __init__(self, config: OrchestratorConfig):
        super().__init__()
        d = config.d_model
        self.ln_attn = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(config)
        self.ln_mlp = nn.LayerNorm(d)
        self.mlp_in = _linear(config, "mlp_in", d, config.mlp_ratio * d)
        self.mlp_out = _linear(config, "mlp_out", config.mlp_ratio * d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_attn(x))
        return x + self.mlp_out(F.gelu(self.mlp_in(self.ln_mlp(x))))


@dataclass
class TeacherForcedOutput:
    """Outputs of a teacher-forced pass over prompt + <bos> + target + <eos>."""

    logits: torch.Tensor        # (B, T, V)
    hidden: torch.Tensor        # (B, T, d_model), last layer after the final norm
    lm_loss: torch.Tensor       # scalar
    answer_offsets: List[int]   # index of the first target token per sample
    lengths: List[int]


def masked_lm_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over positions whose label is not IGNORE_INDEX (0 if none)."""
    supervised = labels != IGNORE_INDEX
    if not bool(supervised.any()):
        return logits.sum() * 0.0
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX)


class OrchestratorLM(nn.Module):
    """Decoder-only transformer with LoRA adapters and trainable special-token rows."""

    def __init__(self, config: OrchestratorConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        n_special = config.vocab_size - BYTE_VOCAB

        self.base_embedding = nn.Parameter(torch.randn(BYTE_VOCAB, d) * 0.02, requires_grad=False)
        self.special_embedding = nn.Parameter(torch.randn(n_special, d) * 0.02)
        self.position_embedding = nn.Embedding(config.max_seq_len, d)
        nn.init.normal_(self.position_embedding.weight, std=0.02)
        self.blocks = nn.ModuleList(DecoderBlock(config) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(d)

        self.freeze_base()

    def freeze_base(self) -> None:
        """Freeze everything except LoRA factors and special-token rows."""
        for name, param in self.named_parameters():
            param.requires_grad = name == "special_embedding" or ".lora_" in name

    def lora_parameters(self) -> List[nn.Parameter]:
        return [p for n, p in self.named_parameters() if ".lora_" in n]

    def embedding_table(self) -> torch.Tensor:
        """Full (vocab, d_model) table; also the tied LM head."""
        return torch.cat([self.base_embedding, self.special_embedding], dim=0)

    def embed(self, token_ids: torch.Tensor, visual_positions: Sequence[torch.Tensor] = (),
              visual_embeddings: Sequence[Optional[torch.Tensor]] = ()) -> torch.Tensor:
        """
        Token embeddings with visual slots replaced by adapter outputs.

        Args:
            token_ids: (B, T)
            visual_positions: per-sample 1D position tensors
            visual_embeddings: per-sample (n_visual, d_model) tensors

        Returns:
            (B, T, d_model) embeddings without positions
        """
        embeds = F.embedding(token_ids, self.embedding_table())
        rows = []
        for b in range(token_ids.shape[0]):
            row = embeds[b]
            if b < len(visual_positions) and visual_embeddings[b] is not None and len(visual_positions[b]):
                row = row.index_put((visual_positions[b],), visual_embeddings[b].to(row.dtype))
            rows.append(row)
        return torch.stack(rows)

    def forward_embeddings(self, embeds: torch.Tensor) -> torch.Tensor:
        """Run the decoder on (B, T, d) input embeddings; returns final-norm hidden states."""
        length = embeds.shape[1]
        if length > self.config.max_seq_len:
            raise SequenceLengthError(
                f"Sequence length {length} exceeds max_seq_len {self.config.max_seq_len}"
            )
        positions = torch.arange(length, device=embeds.device)
        x = embeds + self.position_embedding(positions)[None]
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.embedding_table().t()

    def build_sequence(self, prompt: AssembledPrompt, target_ids: Sequence[int], bos_id: int, eos_id: int):
        """
        Token ids and next-token labels for prompt + <bos> + target + <eos>.

        Only target tokens and <eos> are supervised.

        Returns:
            (ids, labels, answer_offset)
        """
        ids = list(prompt.token_ids) + [bos_id] + list(target_ids) + [eos_id]
        if len(ids) > self.config.max_seq_len:
            raise SequenceLengthError(
                f"Prompt ({len(prompt)}) + target ({len(target_ids)}) + 2 exceeds "
                f"max_seq_len {self.config.max_seq_len}"
            )
        answer_offset = len(prompt) + 1
        labels = [IGNORE_INDEX] * len(ids)
        for t in range(answer_offset - 1, len(ids) - 1):
            labels[t] = ids[t + 1]
        return ids, labels, answer_offset

    def forward_batch(
        self,
        prompts: Sequence[AssembledPrompt],
        targets: Sequence[Sequence[int]],
        bos_id: int,
        eos_id: int,
        pad_id: int,
    ) -> TeacherForcedOutput:
        """Right-padded teacher-forced pass over a batch of prompts and targets."""
        device = self.base_embedding.device
        sequences = [self.build_sequence(p, t, bos_id, eos_id) for p, t in zip(prompts, targets)]
        max_len = max(len(ids) for ids, _, _ in sequences)

        id_rows, label_rows = [], []
        for ids, labels, _ in sequences:
            pad = max_len - len(ids)
            id_rows.append(ids + [pad_id] * pad)
            label_rows.append(labels + [IGNORE_INDEX] * pad)
        token_ids = torch.tensor(id_rows, dtype=torch.long, device=device)
        labels = torch.tensor(label_rows, dtype=torch.long, device=device)

        visual_positions = [torch.tensor(p.visual_positions, dtype=torch.long, device=device) for p in prompts]
        visual_embeddings = [p.visual_embeddings for p in prompts]

        hidden = self.forward_embeddings(self.embed(token_ids, visual_positions, visual_embeddings))
        logits = self.logits(hidden)
        return TeacherForcedOutput(
            logits=logits,
            hidden=hidden,
            lm_loss=masked_lm_loss(logits, labels),
            answer_offsets=[offset for _, _, offset in sequences],
            lengths=[len(ids) for ids, _, _ in sequences],
        )

    def forward_teacher_forced(self, prompt: AssembledPrompt, target_ids: Sequence[int],
                               bos_id: int, eos_id: int, pad_id: int) -> TeacherForcedOutput:
        """Single-sample teacher forcing; outputs keep the batch axis of size 1."""
        return self.forward_batch([prompt], [target_ids], bos_id, eos_id, pad_id)

    def hidden_for_ids(self, prompt: AssembledPrompt, token_ids: Sequence[int]) -> torch.Tensor:
        """Final-norm hidden states (T, d) for the prompt's visual slots plus arbitrary ids."""
        device = self.base_embedding.device
        ids = torch.tensor([list(token_ids)], dtype=torch.long, device=device)
        positions = [torch.tensor(prompt.visual_positions, dtype=torch.long, device=device)]
        return self.forward_embeddings(self.embed(ids, positions, [prompt.visual_embeddings]))[0]
