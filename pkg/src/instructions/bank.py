"""
Instruction template bank: sampling and slot rendering.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..config import TASK_KINDS, get_template_dir
from ..errors import ConfigError, TemplatingError
from ..templates import AUX_SLOT, MAIN_SLOT, get_instruction_templates

logger = logging.getLogger(__name__)

CAPTIONING_VARIANTS = ("captioning_findings", "captioning_impression", "captioning_report")

# Tasks whose instructions carry a class, box, reference or question slot.
SLOTTED_TASKS = {"region_captioning", "longitudinal_captioning", "detection", "segmentation", "vqa"}


@dataclass(frozen=True)
class InstructionTemplate:
    task: str
    text: str

    @property
    def has_aux_slot(self) -> bool:
        return AUX_SLOT in self.text


class TemplateBank:
    """Task kind -> instruction templates, validated on construction."""

    def __init__(self, templates: Dict[str, List[str]]):
        self.templates = {key: list(rows) for key, rows in templates.items()}
        for key, rows in self.templates.items():
            if not rows:
                raise ConfigError(f"Instruction bank row '{key}' is empty")
            task = "captioning" if key in CAPTIONING_VARIANTS else key
            for text in rows:
                if MAIN_SLOT not in text:
                    raise TemplatingError(f"Template for '{key}' lacks the image slot {MAIN_SLOT}: {text!r}")
                if (AUX_SLOT in text) != (task in SLOTTED_TASKS):
                    raise TemplatingError(f"Template for '{key}' has a misplaced {AUX_SLOT} slot: {text!r}")

    def keys(self) -> List[str]:
        return list(self.templates)

    def templates_for(self, task: str, variant: Optional[str] = None) -> List[InstructionTemplate]:
        """
        Templates linked to a task kind.

        `captioning` covers the findings, impression and report rows unless a
        variant (one of those row names) is given.
        """
        if task == "captioning":
            keys = [variant] if variant else [k for k in CAPTIONING_VARIANTS if k in self.templates]
        else:
            keys = [task]
        missing = [k for k in keys if k not in self.templates]
        if task not in TASK_KINDS or missing or not keys:
            raise ConfigError(f"No instruction templates for task '{task}'"
                              + (f" (variant '{variant}')" if variant else ""))
        return [InstructionTemplate(task=task, text=t) for k in keys for t in self.templates[k]]


_DEFAULT_BANK: Optional[TemplateBank] = None


def load_template_bank(path: Optional[Path] = None) -> TemplateBank:
    """
    Load the instruction bank.

    Args:
        path: Directory holding instructions.json; defaults to MEDORCH_TEMPLATE_DIR

    Returns:
        TemplateBank with the embedded rows plus any overrides
    """
    override_dir = Path(path) if path else get_template_dir()
    return TemplateBank(get_instruction_templates(override_dir))


def default_bank() -> TemplateBank:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = load_template_bank()
    return _DEFAULT_BANK


def sample_instruction(
    task: str,
    rng: np.random.Generator,
    bank: Optional[TemplateBank] = None,
    variant: Optional[str] = None,
) -> InstructionTemplate:
    """Uniform draw over the templates of a task kind."""
    candidates = (bank or default_bank()).templates_for(task, variant)
    return candidates[int(rng.integers(len(candidates)))]


def image_token(image_id: str) -> str:
    """'img0' or '<img0>' -> '<img0>'."""
    return image_id if image_id.startswith("<") else f"<{image_id}>"


def render_template(
    template: Union[InstructionTemplate, str],
    main_ids: Sequence[str],
    slot_value: Optional[str] = None,
) -> str:
    """
    Fill the placeholders of an instruction template.

    Args:
        template: Template or raw template string
        main_ids: Main image ids, rendered back to back ('<img0><img1>')
        slot_value: Text for the auxiliary slot

    Returns:
        Rendered instruction

    Raises:
        TemplatingError: A slot has no value, or a value has no slot
    """
    text = template.text if isinstance(template, InstructionTemplate) else template
    if MAIN_SLOT in text:
        if not main_ids:
            raise TemplatingError(f"Template needs main image ids: {text!r}")
        text = text.replace(MAIN_SLOT, "".join(image_token(i) for i in main_ids))
    if AUX_SLOT in text:
        if slot_value is None or slot_value == "":
            raise TemplatingError(f"Template slot {AUX_SLOT} left unfilled: {text!r}")
        text = text.replace(AUX_SLOT, slot_value)
    elif slot_value:
        raise TemplatingError(f"Slot value {slot_value!r} given for a template without {AUX_SLOT}")
    return text
