"""
Byte-level tokenizer with reserved single-id special tokens.

Ids 0..255 are raw UTF-8 bytes. Special tokens (padding, sequence
delimiters, the visual-slot placeholder, task tags and image-identifier
wrappers) follow from 256 upward and are never split.
"""

import re
from typing import Dict, Iterable, List, Optional

BYTE_VOCAB = 256

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
VIS = "<vis>"
DET = "<DET>"
SEG2D = "<2DSEG>"
SEG3D = "<3DSEG>"
NA = "<N/A>"

BASE_SPECIALS = (PAD, BOS, EOS, VIS, DET, SEG2D, SEG3D, NA)
TASK_TAGS = (DET, SEG2D, SEG3D)

IMAGE_ID_PATTERN = re.compile(r"<img(\d+)>")


def image_open_token(index: int) -> str:
    return f"<img{index}>"


def image_close_token(index: int) -> str:
    return f"</img{index}>"


def special_token_layout(max_images: int) -> Dict[str, int]:
    """
    Map every special token to its id for a vocabulary supporting max_images images.

    Args:
        max_images: Number of distinct image identifiers (<img0> .. <imgN-1>)

    Returns:
        Ordered mapping token string -> id
    """
    names = list(BASE_SPECIALS)
    names += [image_open_token(i) for i in range(max_images)]
    names += [image_close_token(i) for i in range(max_images)]
    return {name: BYTE_VOCAB + offset for offset, name in enumerate(names)}


class ByteTokenizer:
    """UTF-8 byte tokenizer; special tokens map to single reserved ids."""

    def __init__(self, max_images: int = 8, special_token_ids: Optional[Dict[str, int]] = None):
        self.max_images = max_images
        self.token_to_id = dict(special_token_ids or special_token_layout(max_images))
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        # Longest first so "</img1>" wins over any shorter overlap.
        alternatives = sorted(self.token_to_id, key=len, reverse=True)
        self._special_re = re.compile("(" + "|".join(re.escape(t) for t in alternatives) + ")")

    @property
    def vocab_size(self) -> int:
        return max(self.id_to_token) + 1

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def vis_id(self) -> int:
        return self.token_to_id[VIS]

    def special_id(self, token: str) -> int:
        return self.token_to_id[token]

    def is_special(self, token_id: int) -> bool:
        return token_id in self.id_to_token

    def encode(self, text: str) -> List[int]:
        """Encode text; special-token substrings become their single ids."""
        ids: List[int] = []
        for piece in self._special_re.split(text):
            if not piece:
                continue
            if piece in self.token_to_id:
                ids.append(self.token_to_id[piece])
            else:
                ids.extend(piece.encode("utf-8"))
        return ids

    def decode(self, ids: Iterable[int], skip: Iterable[str] = ()) -> str:
        """
        Decode ids back to text.

        Args:
            ids: Token ids
            skip: Special tokens to drop from the output (e.g. padding)

        Returns:
            Decoded string; invalid byte runs are replaced, never raised
        """
        skip_ids = {self.token_to_id[t] for t in skip}
        parts: List[str] = []
        buffer = bytearray()
        for token_id in ids:
            token_id = int(token_id)
            if token_id in skip_ids:
                continue
            if token_id < BYTE_VOCAB:
                buffer.append(token_id)
                continue
            if buffer:
                parts.append(buffer.decode("utf-8", errors="replace"))
                buffer = bytearray()
            parts.append(self.id_to_token.get(token_id, ""))
        if buffer:
            parts.append(buffer.decode("utf-8", errors="replace"))
        return "".join(parts)

    def special_table(self) -> Dict[str, int]:
        """Special-token table, serialized alongside checkpoints."""
        return dict(self.token_to_id)
