"""
Embedded instruction templates for MedOrch.

The instruction bank is embedded as Python constants so the package has no
external file dependency. It can be overridden by placing an
instructions.json file (task kind -> list of templates) in the directory
named by MEDORCH_TEMPLATE_DIR.

Placeholders:
    _*_  main image identifier(s), e.g. <img0>
    -*-  class name, box coordinates, reference image identifier(s) or question
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

MAIN_SLOT = "_*_"
AUX_SLOT = "-*-"

BANK_FILENAME = "instructions.json"

# =============================================================================
# Captioning
# =============================================================================

CAPTIONING_FINDINGS = [
    "Can you detail the findings observed in _*_?",
    "Kindly enumerate the findings from _*_.",
    "I'd like a breakdown of the findings from _*_.",
    "I'd like a section on the findings derived from _*_.",
    "Please write a finding section for _*_.",
    "Would you please write a finding section for _*_?",
    "Please write a section of findings for _*_.",
    "Would you please write a section of findings for _*_?",
    "How would you characterize the findings from _*_?",
    "Please list the discernible findings from _*_.",
    "Can you compile a list of all the notable findings present in _*_?",
    "Please document any findings you see in _*_.",
]

CAPTIONING_IMPRESSION = [
    "Can you please provide your overall impression of _*_?",
    "What's your main impression from _*_?",
    "Please draft a concise impression on _*_.",
    "Would you give a comprehensive impression based on _*_?",
    "I'm looking for an impression for _*_.",
    "Provide your diagnostic impression based on the _*_.",
    "Draft an impression for _*_.",
    "Would you please write an impression section for _*_?",
    "Summarize the impression for _*_.",
]

CAPTIONING_REPORT = [
    "Can you provide a radiology report for _*_?",
    "Please report _*_.",
    "Can you provide a report of _*_ with findings and impression?",
    "Report _*_ with findings and impression.",
    "Please write a radiology report for _*_.",
    "Please generate a radiology report for _*_.",
    "Please provide a detailed report for _*_.",
    "Can you provide a comprehensive report of _*_?",
    "Please write a radiology report for _*_.",
    "Can you give a thorough report of _*_?",
    "Could you please report _*_?",
    "Can you provide a comprehensive report for _*_?",
]

# =============================================================================
# Classification, region and longitudinal captioning
# =============================================================================

CLASSIFICATION = [
    "What is the diagnosis for _*_?",
    "Based on _*_, what type of lung disease is suspected?",
    "Can you identify any abnormality in _*_?",
    "What pathology is indicated by _*_?",
    "What lung disease is likely present in _*_?",
    "What are your conclusions from _*_?",
    "What is your interpretation result of _*_?",
    "What abnormalities are present in _*_?",
    "What is the differential diagnosis for the findings in _*_?",
]

REGION_CAPTIONING = [
    "Describe region -*- in _*_.",
    "Detail any abnormalities in -*- of _*_.",
    "Can you characterize the features within -*- on _*_?",
    "Please provide an analysis of the anomalies seen in -*- within _*_.",
    "Describe any pathological findings within -*- of _*_.",
    "Highlight and explain any abnormalities you detect in -*- of _*_.",
    "Identify and describe any abnormality in -*- of _*_.",
    "Could you please describe the region -*- in _*_?",
    "Would you please describe the region -*- in _*_?",
    "Give a description of the region -*- in _*_.",
]

LONGITUDINAL_CAPTIONING = [
    "Highlight any difference in _*_ compared to the prior study -*-.",
    "Identify any progression in _*_ since the last study -*-.",
    "Compare the current study _*_ with the past one -*-.",
    "Present any changes in _*_ since the last study -*-.",
    "Detail any progression or regression in _*_ in comparison to the older study -*-.",
    "Detect changes in _*_ compared to the past study -*-.",
    "Compare _*_ with the prior study -*- and tell me any difference.",
]

# =============================================================================
# Detection and segmentation
# =============================================================================

DETECTION = [
    "Detect any signs of -*- in _*_.",
    "Highlight the areas that indicate -*- in _*_.",
    "Show me the regions in _*_ where -*- might be present.",
    "Assess _*_ and mark areas consistent with -*- findings.",
    "Locate and circle any features of -*- in _*_.",
    "Compare _*_ to typical -*- patterns and highlight any matches.",
    "Detect and display potential symptoms of -*- within _*_.",
    "Is there any trace of -*- in _*_? Point it out.",
    "Help me spot -*- by illuminating its markers in _*_.",
    "Search for any characteristic signs of -*- in _*_.",
    "Examine and underscore the presence of -*- in _*_.",
    "Would you please help me locate -*- in _*_?",
    "Could you please help me locate -*- in _*_?",
    "Please help me locate -*- in _*_?",
]

SEGMENTATION = [
    "Segment -*- in _*_.",
    "Highlight the boundaries of -*- in _*_.",
    "Isolate and show only -*- from _*_.",
    "Can you delineate -*- in _*_?",
    "Segment -*- from the given _*_.",
    "I need a clear segmentation of -*- in _*_, please.",
    "Outline the contours of -*- in _*_.",
    "Show a clear boundary around -*- in _*_.",
    "Separate -*- from the surrounding anatomy in _*_.",
    "Provide a segmented view of -*- in _*_.",
    "Please identify and segment -*- from the rest in _*_.",
    "Give me a clear cutout of -*- in _*_.",
    "Please mask everything except for -*- in _*_.",
    "Draw a boundary around -*- in _*_.",
    "Would you please help me segment -*- in _*_?",
    "Could you please help me segment -*- in _*_?",
    "Please help me segment -*- in _*_?",
]

# =============================================================================
# Template registry
# =============================================================================

INSTRUCTION_TEMPLATES: Dict[str, List[str]] = {
    "captioning_findings": CAPTIONING_FINDINGS,
    "captioning_impression": CAPTIONING_IMPRESSION,
    "captioning_report": CAPTIONING_REPORT,
    "classification": CLASSIFICATION,
    "region_captioning": REGION_CAPTIONING,
    "longitudinal_captioning": LONGITUDINAL_CAPTIONING,
    "detection": DETECTION,
    "segmentation": SEGMENTATION,
}

# Templates not in the published bank; versioned so the shipped table stays verbatim.
EXTENSION_VERSION = "ext-1"
EXTENSION_TEMPLATES: Dict[str, List[str]] = {
    "vqa": ["_*_ -*-"],
}


def get_instruction_templates(override_dir: Optional[Path] = None) -> Dict[str, List[str]]:
    """
    Get the instruction bank with optional file override capability.

    Checks override_dir for instructions.json. Keys found there replace the
    embedded rows of the same name; other rows keep their embedded content.

    Args:
        override_dir: Directory that may hold instructions.json

    Returns:
        Mapping bank key -> list of templates (copies, safe to mutate)
    """
    templates = {key: list(rows) for key, rows in INSTRUCTION_TEMPLATES.items()}
    templates.update({key: list(rows) for key, rows in EXTENSION_TEMPLATES.items()})

    if override_dir is None:
        return templates

    override_path = Path(override_dir) / BANK_FILENAME
    if override_path.exists():
        logger.info(f"Loading instruction overrides from {override_path}")
        with open(override_path) as f:
            overrides = json.load(f)
        for key, rows in overrides.items():
            templates[key] = list(rows)
    return templates
