import numpy as np
import pytest
import torch

from src.config import Encoder2DConfig, PreprocessConfig
from src.coordinator.adapter import VisionLanguageAdapter, adapt_visual_tokens
from src.coordinator.encoders import (
    PatchEncoder2D,
    encode_2d,
    encode_3d,
    expected_token_count_2d,
    window_attention_mask,
)
from src.coordinator.preprocess import (
    normalize_pixels,
    preprocess_2d,
    preprocess_2d_segmentation,
    preprocess_3d,
    random_crop,
)
from src.coordinator.prompt import SEGMENT_CLOSE, SEGMENT_OPEN, SEGMENT_TEXT, SEGMENT_VISUAL, assemble_prompt
from src.coordinator.records import VisualTokenBlock
from src.coordinator.tokenizer import BYTE_VOCAB, ByteTokenizer, special_token_layout
from src.errors import ConfigError, InputError, RankMismatchError, UnresolvedIdentifierError

from conftest import image_record, volume_record


def test_special_layout_order():
    layout = special_token_layout(2)
    assert layout["<pad>"] == 256
    assert layout["<vis>"] == 259
    assert layout["<DET>"] == 260
    assert layout["<N/A>"] == 263
    assert layout["<img0>"] == 264
    assert layout["</img1>"] == 267


def test_tokenizer_encode_decode():
    tokenizer = ByteTokenizer(max_images=4)
    text = "Segment liver in <img0>. <2DSEG> done"
    ids = tokenizer.encode(text)
    assert tokenizer.special_id("<img0>") in ids
    assert tokenizer.special_id("<2DSEG>") in ids
    assert all(i < BYTE_VOCAB or tokenizer.is_special(i) for i in ids)
    assert tokenizer.decode(ids) == text


def test_tokenizer_decode_skips_padding():
    tokenizer = ByteTokenizer()
    ids = tokenizer.encode("ok") + [tokenizer.pad_id] * 3
    assert tokenizer.decode(ids, skip=["<pad>"]) == "ok"


def test_close_tag_not_split():
    tokenizer = ByteTokenizer(max_images=4)
    assert tokenizer.encode("</img1>") == [tokenizer.special_id("</img1>")]


def _block(image_id: str, p: int = 9, d: int = 8) -> VisualTokenBlock:
    return VisualTokenBlock(source_image_id=image_id, tokens=torch.randn(p, d))


def test_assemble_orders_by_image_id():
    tokenizer = ByteTokenizer(max_images=4)
    prompt = assemble_prompt([_block("img1"), _block("img0")], "Compare <img0> and <img1>.", tokenizer)
    kinds = [s.kind for s in prompt.segments]
    assert kinds == [SEGMENT_OPEN, SEGMENT_VISUAL, SEGMENT_CLOSE] * 2 + [SEGMENT_TEXT]
    assert prompt.image_ids == ["img0", "img1"]
    assert prompt.token_ids[0] == tokenizer.special_id("<img0>")
    assert prompt.token_ids[10] == tokenizer.special_id("</img0>")
    assert prompt.token_ids[11] == tokenizer.special_id("<img1>")
    assert len(prompt.visual_positions) == 18
    assert prompt.visual_embeddings.shape == (18, 8)
    assert prompt.decode_instruction(tokenizer) == "Compare <img0> and <img1>."


def test_assemble_unresolved_identifier():
    tokenizer = ByteTokenizer(max_images=4)
    with pytest.raises(UnresolvedIdentifierError):
        assemble_prompt([_block("img0")], "Compare <img0> with <img2>.", tokenizer)


def test_assemble_duplicate_ids():
    tokenizer = ByteTokenizer(max_images=4)
    with pytest.raises(InputError):
        assemble_prompt([_block("img0"), _block("img0")], "<img0>", tokenizer)


@pytest.mark.parametrize("size", [64, 128, 224])
def test_adapter_fixed_token_count(size):
    config = Encoder2DConfig(patch_size=16, d_vis=32, n_layers=1, n_heads=2)
    encoder = PatchEncoder2D(config)
    adapter = VisionLanguageAdapter(32, 48, pooled_tokens=9)
    raw = encode_2d(encoder, image_record(size=size))
    assert raw.shape == (expected_token_count_2d(size, 16), 32)
    block = adapt_visual_tokens(adapter, raw, "img0")
    assert block.tokens.shape == (9, 48)


def test_window_attention_mask_tiles():
    mask = window_attention_mask(3, 3, 2)
    # Tiles: {0,1,3,4}, {2,5}, {6,7}, {8}
    assert not mask[0, 4] and not mask[2, 5] and not mask[6, 7]
    assert mask[0, 2] and mask[4, 8] and mask[5, 8]
    assert not mask.diagonal().any()
    with pytest.raises(ConfigError):
        window_attention_mask(3, 3, 0)


def test_windowed_encoder_is_local():
    config = Encoder2DConfig(patch_size=8, d_vis=32, n_layers=1, n_heads=2, window_size=2)
    encoder = PatchEncoder2D(config)
    record = image_record(size=32)
    changed = image_record(size=32)
    changed.pixels = changed.pixels.copy()
    changed.pixels[:16, :16] = 0.0
    with torch.no_grad():
        a, b = encode_2d(encoder, record), encode_2d(encoder, changed)
    grid = torch.arange(16).reshape(4, 4)
    far = grid[2:, 2:].reshape(-1)
    near = grid[:2, :2].reshape(-1)
    assert torch.allclose(a[far], b[far], atol=1e-6)
    assert not torch.allclose(a[near], b[near])


def test_adapters_have_disjoint_parameters(tiny_system):
    coordinator = tiny_system.coordinator
    ids_2d = {id(p) for p in coordinator.adapter_2d.parameters()}
    ids_3d = {id(p) for p in coordinator.adapter_3d.parameters()}
    assert ids_2d.isdisjoint(ids_3d)


def test_encode_rank_checks(tiny_system):
    coordinator = tiny_system.coordinator
    with pytest.raises(RankMismatchError):
        encode_2d(coordinator.encoder_2d, volume_record())
    with pytest.raises(RankMismatchError):
        encode_3d(coordinator.encoder_3d, image_record())


def test_coordinator_mixed_ranks(tiny_system):
    records = [image_record("img0"), volume_record("img1")]
    prompt = tiny_system.coordinator.assemble(records, "Describe <img0> and <img1>.")
    assert prompt.visual_embeddings.shape == (18, tiny_system.config.orchestrator.d_model)


def test_normalize_integer_and_float():
    assert normalize_pixels(np.array([[0, 255]], dtype=np.uint8)).max() == pytest.approx(1.0)
    scaled = normalize_pixels(np.array([[-5.0, 5.0]]))
    assert scaled.min() == 0.0 and scaled.max() == 1.0
    assert np.all(normalize_pixels(np.full((2, 2), 7.0)) == 0.0)


def test_preprocess_eval_is_deterministic():
    raw = np.random.default_rng(0).integers(0, 255, (50, 70, 3), dtype=np.uint8)
    config = PreprocessConfig(image_size=32)
    a = preprocess_2d(raw, False, None, config)
    b = preprocess_2d(raw, False, None, config)
    assert a.pixels.shape == (32, 32, 3)
    assert np.array_equal(a.pixels, b.pixels)


def test_preprocess_train_crop_uses_rng():
    raw = np.random.default_rng(0).random((64, 64, 3))
    config = PreprocessConfig(image_size=32)
    a = preprocess_2d(raw, True, np.random.default_rng(1), config)
    b = preprocess_2d(raw, True, np.random.default_rng(1), config)
    c = preprocess_2d(raw, False, None, config)
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_random_crop_keeps_half_the_area():
    assert random_crop(np.zeros((3, 3)), np.random.default_rng(0), 0.5, 0.5).shape == (3, 3)
    rng = np.random.default_rng(7)
    for _ in range(500):
        height, width = (int(v) for v in rng.integers(1, 40, size=2))
        crop = random_crop(np.zeros((height, width)), rng, 0.5, 1.0)
        assert crop.shape[0] <= height and crop.shape[1] <= width
        assert crop.shape[0] * crop.shape[1] >= 0.5 * height * width


def test_preprocess_train_needs_rng():
    with pytest.raises(InputError):
        preprocess_2d(np.zeros((8, 8)), True, None, PreprocessConfig(image_size=32))


def test_preprocess_zero_size():
    with pytest.raises(InputError):
        preprocess_2d(np.zeros((0, 4)), False, None)


def test_segmentation_flip_keeps_mask_aligned():
    image = np.zeros((32, 32), dtype=np.float32)
    image[:, :8] = 1.0
    mask = image > 0
    config = PreprocessConfig(image_size=32, hflip_prob=1.0)
    record, out_mask = preprocess_2d_segmentation(image, mask, True, np.random.default_rng(0), config)
    assert out_mask[:, -8:].all()
    assert np.array_equal(record.pixels[..., 0] > 0.5, out_mask > 0.5)


def test_preprocess_3d_shapes():
    volume = np.random.default_rng(0).random((10, 20, 20))
    mask = volume > 0.5
    config = PreprocessConfig(volume_size=(8, 16, 16))
    record, out_mask = preprocess_3d(volume, mask, True, np.random.default_rng(0), config)
    assert record.pixels.shape == (8, 16, 16, 1)
    assert out_mask.shape == (8, 16, 16)
    assert set(np.unique(out_mask)) <= {0.0, 1.0}
