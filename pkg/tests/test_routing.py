import numpy as np
import pytest
import torch

from src.coordinator.records import RANK_2D, RANK_3D
from src.coordinator.tokenizer import ByteTokenizer
from src.errors import RoutingError
from src.orchestrator.generation import TagEvent, TagKind, extract_tag_events, scan_tags
from src.orchestrator.routing import VisionModule, route


def event(kind: TagKind) -> TagEvent:
    return TagEvent(kind=kind, position=0, embedding=torch.zeros(4))


@pytest.mark.parametrize("kind,rank,module", [
    (TagKind.DET, RANK_2D, VisionModule.DETECTION),
    (TagKind.SEG2D, RANK_2D, VisionModule.SEGMENTATION_2D),
    (TagKind.SEG3D, RANK_3D, VisionModule.SEGMENTATION_3D),
])
def test_route_table(kind, rank, module):
    assert route(event(kind), rank) == module


@pytest.mark.parametrize("kind,rank", [
    (TagKind.SEG2D, RANK_3D),
    (TagKind.SEG3D, RANK_2D),
    (TagKind.DET, RANK_3D),
])
def test_route_mismatch(kind, rank):
    with pytest.raises(RoutingError) as info:
        route(event(kind), rank)
    assert info.value.tag == kind.value
    assert info.value.input_rank == rank


def test_route_unknown_rank():
    with pytest.raises(RoutingError):
        route(event(TagKind.DET), "4D")


WORDS = ["the", "liver", "nodule", "is", "visible", "no", "finding", "left", "lung", "mask", "<N/A>"]
EXPECTED_DISPATCH = {
    "<DET>": ("detection", "2D"),
    "<2DSEG>": ("segmentation_2d", "2D"),
    "<3DSEG>": ("segmentation_3d", "3D"),
}
TAG_NAMES = {TagKind.DET: "<DET>", TagKind.SEG2D: "<2DSEG>", TagKind.SEG3D: "<3DSEG>"}


def random_generation(tokenizer: ByteTokenizer, rng):
    """Token ids mixing words and task tags, with the tag positions recorded while building."""
    ids, expected = [], []
    for _ in range(int(rng.integers(0, 12))):
        if rng.random() < 0.3:
            tag = str(rng.choice(list(EXPECTED_DISPATCH)))
            expected.append((len(ids), tag))
            ids.append(tokenizer.special_id(tag))
        else:
            ids.extend(tokenizer.encode(str(rng.choice(WORDS)) + " "))
    return ids, expected


def test_routing_matches_independent_dispatch():
    tokenizer = ByteTokenizer(max_images=2)
    rng = np.random.default_rng(17)
    mismatches = routed = 0
    for _ in range(200):
        ids, expected = random_generation(tokenizer, rng)
        offset = int(rng.integers(0, 5))
        hidden = torch.randn(offset + len(ids), 4)
        events = extract_tag_events(ids, hidden, tokenizer, offset=offset)
        assert [(p, TAG_NAMES[k]) for p, k in scan_tags(ids, tokenizer)] == expected
        assert [(e.position, TAG_NAMES[e.kind]) for e in events] == expected
        rank = str(rng.choice([RANK_2D, RANK_3D]))
        for tag_event, (position, tag) in zip(events, expected):
            assert torch.equal(tag_event.embedding, hidden[offset + position])
            module, needed_rank = EXPECTED_DISPATCH[tag]
            if rank == needed_rank:
                assert route(tag_event, rank).value == module
                routed += 1
            else:
                with pytest.raises(RoutingError):
                    route(tag_event, rank)
                mismatches += 1
    assert routed > 0 and mismatches > 0