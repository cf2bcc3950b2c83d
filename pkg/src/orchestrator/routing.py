"""
Dispatch of task tags to vision modules.
"""

from enum import Enum

from ..coordinator.records import RANK_2D, RANK_3D
from ..errors import RoutingError
from .generation import TAG_TOKENS, TagEvent, TagKind


class VisionModule(str, Enum):
    DETECTION = "detection"
    SEGMENTATION_2D = "segmentation_2d"
    SEGMENTATION_3D = "segmentation_3d"


_TABLE = {
    TagKind.DET: (VisionModule.DETECTION, RANK_2D),
    TagKind.SEG2D: (VisionModule.SEGMENTATION_2D, RANK_2D),
    TagKind.SEG3D: (VisionModule.SEGMENTATION_3D, RANK_3D),
}


def route(event: TagEvent, input_rank: str) -> VisionModule:
    """
    Pick the vision module for a tag event.

    Detection boxes are 2D, so <DET> on a volume is rejected like a
    segmentation tag of the wrong rank.

    Raises:
        RoutingError: Tag incompatible with the input rank
    """
    kind = TagKind(event.kind)
    module, required_rank = _TABLE[kind]
    if input_rank not in (RANK_2D, RANK_3D):
        raise RoutingError(f"Unknown input rank '{input_rank}'", tag=kind.value, input_rank=input_rank)
    if input_rank != required_rank:
        raise RoutingError(
            f"Tag {TAG_TOKENS[kind]} needs a {required_rank} input but the input is {input_rank}",
            tag=kind.value,
            input_rank=input_rank,
        )
    return module
