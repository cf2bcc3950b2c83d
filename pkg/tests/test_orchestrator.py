import pytest
import torch

from src.config import OrchestratorConfig
from src.coordinator.prompt import assemble_prompt
from src.coordinator.records import VisualTokenBlock
from src.coordinator.tokenizer import ByteTokenizer
from src.errors import ConfigError, SequenceLengthError
from src.orchestrator.generation import TagKind, extract_tag_events, generate, scan_tags
from src.orchestrator.lora import LoRALinear, lora_linear
from src.orchestrator.model import IGNORE_INDEX, OrchestratorLM, masked_lm_loss


def small_lm(**overrides) -> OrchestratorLM:
    kwargs = dict(d_model=16, n_layers=2, n_heads=2, max_seq_len=64, max_images=2, lora_rank=2, lora_alpha=4.0)
    kwargs.update(overrides)
    return OrchestratorLM(OrchestratorConfig(**kwargs))


def small_prompt(tokenizer: ByteTokenizer, d_model: int = 16, instruction: str = "Describe <img0>."):
    block = VisualTokenBlock(source_image_id="img0", tokens=torch.randn(3, d_model))
    return assemble_prompt([block], instruction, tokenizer)


def test_lora_is_noop_at_init():
    layer = LoRALinear(8, 6, rank=2, alpha=4.0)
    x = torch.randn(5, 8)
    assert torch.equal(layer(x), layer.base(x))
    assert torch.equal(layer.merged_weight(), layer.base.weight)


def test_lora_merged_weight_matches_forward():
    layer = LoRALinear(8, 6, rank=2, alpha=4.0)
    with torch.no_grad():
        layer.lora_B.normal_()
    x = torch.randn(5, 8)
    expected = x @ layer.merged_weight().t() + layer.base.bias
    assert torch.allclose(layer(x), expected, atol=1e-5)


def test_lora_freezes_base():
    layer = LoRALinear(8, 6, rank=2, alpha=4.0)
    assert not layer.base.weight.requires_grad
    assert layer.lora_A.requires_grad and layer.lora_B.requires_grad


def test_lora_shape_mismatch():
    with pytest.raises(ConfigError):
        lora_linear(torch.randn(6, 8), None, torch.randn(2, 7), torch.randn(6, 2), 1.0, torch.randn(1, 8))


def test_lora_gradcheck():
    torch.manual_seed(0)
    weight = torch.randn(4, 3, dtype=torch.float64)
    a = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
    b = torch.randn(4, 2, dtype=torch.float64, requires_grad=True)
    x = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b, x: lora_linear(weight, None, a, b, 2.0, x), (a, b, x))


def test_orchestrator_trainable_set():
    model = small_lm()
    trainable = {n for n, p in model.named_parameters() if p.requires_grad}
    assert "special_embedding" in trainable
    assert "base_embedding" not in trainable
    assert all(n == "special_embedding" or ".lora_" in n for n in trainable)
    # q, k, v and o in each of the two layers
    assert len(model.lora_parameters()) == 2 * 4 * 2


def test_build_sequence_labels():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm()
    prompt = small_prompt(tokenizer)
    target = tokenizer.encode("ok")
    ids, labels, offset = model.build_sequence(prompt, target, tokenizer.bos_id, tokenizer.eos_id)
    assert offset == len(prompt) + 1
    assert ids[offset - 1] == tokenizer.bos_id
    assert ids[-1] == tokenizer.eos_id
    assert labels[offset - 1] == target[0]
    assert labels[offset] == target[1]
    assert labels[offset + 1] == tokenizer.eos_id
    assert labels[-1] == IGNORE_INDEX
    assert all(label == IGNORE_INDEX for label in labels[:offset - 1])


def test_build_sequence_too_long():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm(max_seq_len=24)
    prompt = small_prompt(tokenizer)
    with pytest.raises(SequenceLengthError):
        model.build_sequence(prompt, tokenizer.encode("x" * 40), tokenizer.bos_id, tokenizer.eos_id)


def test_masked_loss_without_targets_is_zero():
    logits = torch.randn(1, 3, 10, requires_grad=True)
    labels = torch.full((1, 3), IGNORE_INDEX)
    loss = masked_lm_loss(logits, labels)
    assert loss.item() == 0.0
    loss.backward()


def test_teacher_forced_shapes_and_visual_gradient():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm()
    block = VisualTokenBlock(source_image_id="img0", tokens=torch.randn(3, 16, requires_grad=True))
    prompt = assemble_prompt([block], "Describe <img0>.", tokenizer)
    out = model.forward_teacher_forced(prompt, tokenizer.encode("ok"), tokenizer.bos_id, tokenizer.eos_id,
                                       tokenizer.pad_id)
    assert out.logits.shape == (1, out.lengths[0], model.config.vocab_size)
    assert out.hidden.shape == (1, out.lengths[0], 16)
    out.lm_loss.backward()
    assert block.tokens.grad is not None and block.tokens.grad.abs().sum() > 0


def test_decoder_gradcheck_double():
    for seed in range(20):
        torch.manual_seed(seed)
        model = small_lm(d_model=8, n_layers=2, max_seq_len=8).double()
        with torch.no_grad():
            for layer in model.modules():
                if isinstance(layer, LoRALinear):
                    layer.lora_B.normal_(std=0.1)
        embeds = torch.randn(1, 4, 8, dtype=torch.float64, requires_grad=True)
        readout = torch.randn(8, 3, dtype=torch.float64)
        assert torch.autograd.gradcheck(lambda e: model.forward_embeddings(e) @ readout, (embeds,), atol=1e-4), seed


def test_scan_and_extract_tags():
    tokenizer = ByteTokenizer(max_images=2)
    ids = tokenizer.encode("liver <2DSEG> and <DET>")
    hidden = torch.arange(5 + len(ids), dtype=torch.float32)[:, None].repeat(1, 4)
    found = scan_tags(ids, tokenizer)
    assert [kind for _, kind in found] == [TagKind.SEG2D, TagKind.DET]
    events = extract_tag_events(ids, hidden, tokenizer, offset=5)
    assert events[0].position == found[0][0]
    assert torch.equal(events[0].embedding, hidden[5 + found[0][0]])


def test_generate_respects_budget_and_suppression():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm()
    prompt = small_prompt(tokenizer)
    output = generate(model, prompt, tokenizer, max_new_tokens=5)
    assert len(output.token_ids) <= 5
    forbidden = {tokenizer.pad_id, tokenizer.vis_id, tokenizer.bos_id, tokenizer.eos_id}
    assert forbidden.isdisjoint(output.token_ids)
    assert output.text == tokenizer.decode(output.token_ids)
    assert len(output.tag_events) == len(scan_tags(output.token_ids, tokenizer))


def test_generate_is_deterministic():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm()
    prompt = small_prompt(tokenizer)
    assert generate(model, prompt, tokenizer, 6).token_ids == generate(model, prompt, tokenizer, 6).token_ids


def test_generate_rejects_prompt_without_room():
    tokenizer = ByteTokenizer(max_images=2)
    model = small_lm(max_seq_len=16)
    prompt = small_prompt(tokenizer, instruction="Describe <img0> in great detail please.")
    with pytest.raises(SequenceLengthError):
        generate(model, prompt, tokenizer, max_new_tokens=8)


def test_generate_fills_last_free_slot():
    tokenizer = ByteTokenizer(max_images=2)
    prompt = small_prompt(tokenizer)
    model = small_lm(max_seq_len=len(prompt) + 2)
    assert len(generate(model, prompt, tokenizer, max_new_tokens=8).token_ids) <= 1
