"""
Embedded instruction templates for MedOrch.

Templates are embedded as Python constants, with an optional file override
(instructions.json in MEDORCH_TEMPLATE_DIR).
"""

from .embedded import (AUX_SLOT, EXTENSION_TEMPLATES, EXTENSION_VERSION, INSTRUCTION_TEMPLATES, MAIN_SLOT,
                       get_instruction_templates)

__all__ = [
    'AUX_SLOT',
    'EXTENSION_TEMPLATES',
    'EXTENSION_VERSION',
    'INSTRUCTION_TEMPLATES',
    'MAIN_SLOT',
    'get_instruction_templates',
]
