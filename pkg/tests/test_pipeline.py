import dataclasses

import numpy as np
import pytest

from mvlm import oracle
from mvlm.decoder import MOBILELLAMA_1_4B, DecoderConfig
from mvlm.errors import ConstructionError, ContextOverflowError
from mvlm.pipeline import GenerationParams, build_prompt, build_vlm, generate, model_from_weights, select_token
from mvlm.projector import ldp_spec
from mvlm.rng import SplitMix64
from mvlm.vision import CLIP_VIT_L14_336, TOY_VISION
from mvlm.weights import ModelConfig, init_random

from conftest import TOY, TOY_VLM


def test_greedy_is_deterministic(toy_model, toy_image):
    p = GenerationParams(max_new_tokens=10)
    a = generate(toy_image, "<image> describe", toy_model, p)
    b = generate(toy_image, "<image> describe", toy_model, p)
    assert a.token_ids == b.token_ids and a.text == b.text
    assert len(a.token_ids) == 10


def test_zero_new_tokens(toy_model, toy_image):
    r = generate(toy_image, "hello", toy_model, GenerationParams(max_new_tokens=0))
    assert r.text == "" and r.token_ids == []
    assert r.timings.prompt_s > 0 and r.timings.tks_in > 0 and r.timings.tks_out == 0


def test_greedy_matches_no_cache_oracle(toy_model, toy_image):
    r = generate(toy_image, "What is in the picture?", toy_model, GenerationParams(max_new_tokens=6))
    from mvlm.projector import project
    from mvlm.vision import encode_image
    w = toy_model.weights
    img_tokens = project(encode_image(toy_image, TOY_VISION, w.vision), toy_model.projector_spec, w.projector)
    prompt = build_prompt(toy_model, toy_model.tokenizer.tokenize("What is in the picture?"), img_tokens)
    assert r.token_ids == oracle.greedy_decode(prompt, w.decoder, 6)


def test_cache_and_recompute_agree(toy_model, toy_image):
    p = GenerationParams(max_new_tokens=12)
    a = generate(toy_image, "abc", toy_model, p, use_cache=True)
    b = generate(toy_image, "abc", toy_model, p, use_cache=False)
    assert a.token_ids == b.token_ids


def test_sampling_reproducible(toy_model):
    p = GenerationParams(max_new_tokens=12, mode="sample", temperature=0.8, top_k=20, seed=99)
    a = generate(None, "once upon", toy_model, p)
    b = generate(None, "once upon", toy_model, p)
    assert a.token_ids == b.token_ids
    c = generate(None, "once upon", toy_model, dataclasses.replace(p, seed=100))
    assert c.token_ids != a.token_ids


def test_select_token_greedy_tie_breaks_low():
    logits = np.array([0.0, 3.0, 1.0, 3.0], np.float32)
    assert select_token(logits, GenerationParams(), SplitMix64(0)) == 1


def test_select_token_top1_sampling_is_greedy(rng):
    logits = rng.standard_normal(50).astype(np.float32)
    p = GenerationParams(mode="sample", top_k=1)
    assert select_token(logits, p, SplitMix64(3)) == int(np.argmax(logits))


def test_sampling_frequencies_follow_softmax():
    logits = np.log(np.array([0.5, 0.3, 0.2], np.float32))
    g = SplitMix64(1)
    p = GenerationParams(mode="sample", top_k=3)
    counts = np.bincount([select_token(logits, p, g) for _ in range(6000)], minlength=3) / 6000
    np.testing.assert_allclose(counts, [0.5, 0.3, 0.2], atol=0.03)


def test_sampling_restricted_to_top_k(rng):
    logits = rng.standard_normal(30).astype(np.float32)
    top = set(np.argsort(-logits)[:4].tolist())
    g = SplitMix64(5)
    p = GenerationParams(mode="sample", top_k=4, temperature=5.0)
    assert {select_token(logits, p, g) for _ in range(300)} <= top


def test_params_validation():
    with pytest.raises(ValueError):
        GenerationParams(mode="sample", temperature=0)
    with pytest.raises(ValueError):
        GenerationParams(top_k=0)
    with pytest.raises(ValueError):
        GenerationParams(mode="beam")


def test_stops_at_eos(toy_model):
    first = generate(None, "x", toy_model, GenerationParams(max_new_tokens=5)).token_ids[0]
    r = generate(None, "x", toy_model, GenerationParams(max_new_tokens=5, eos_token=first))
    assert r.token_ids == [first] and r.text == ""


def test_build_vlm_presets_chain():
    m = build_vlm(MOBILELLAMA_1_4B, CLIP_VIT_L14_336, ldp_spec(1024, 2048))
    assert m.image_token_count() == 144


def test_build_vlm_toy_chain():
    assert build_vlm(TOY, TOY_VISION, ldp_spec(32, 64)).image_token_count() == 9


def test_build_vlm_mismatch_names_dims():
    dec = DecoderConfig(2, 128, 4, 64, 512)
    with pytest.raises(ConstructionError, match=r"projector.*64.*decoder.*128"):
        build_vlm(dec, TOY_VISION, ldp_spec(32, 64))
    with pytest.raises(ConstructionError, match=r"vision.*48.*projector.*32"):
        build_vlm(TOY, dataclasses.replace(TOY_VISION, embed_dim=48), ldp_spec(32, 64))
    with pytest.raises(ConstructionError):
        build_vlm(TOY, dataclasses.replace(TOY_VISION, image_size=70), ldp_spec(32, 64))


def test_image_without_projector_rejected(toy_image):
    lm = model_from_weights(init_random(ModelConfig(TOY), 0))
    with pytest.raises(ConstructionError):
        generate(toy_image, "hi", lm, GenerationParams(max_new_tokens=2))


def test_context_overflow_refused(toy_model, toy_image):
    with pytest.raises(ContextOverflowError):
        generate(toy_image, "hi", toy_model, GenerationParams(max_new_tokens=TOY.context_length))


def test_text_only_independent_of_vision_weights():
    a = model_from_weights(init_random(TOY_VLM, 1))
    w = init_random(TOY_VLM, 2)
    b = model_from_weights(dataclasses.replace(w, decoder=a.weights.decoder))
    p = GenerationParams(max_new_tokens=8)
    ra, rb = generate(None, "plain text", a, p), generate(None, "plain text", b, p)
    assert ra.token_ids == rb.token_ids and ra.text == rb.text


def test_image_token_accounting(toy_model, toy_image):
    p = GenerationParams(max_new_tokens=2)
    with_img = generate(toy_image, "count me", toy_model, p).timings
    text = generate(None, "count me", toy_model, p).timings
    assert with_img.tks_in == text.tks_in + 9 == text.tks_in + with_img.n_image_tokens
    assert with_img.n_patches == 36


def test_placeholder_splice(toy_model, toy_image):
    tok = toy_model.tokenizer
    ids = tok.tokenize("ab <image> cd")
    img = np.ones((9, 64), np.float32)
    prompt = build_prompt(toy_model, ids, img)
    at = ids.index(tok.image)
    assert prompt.shape == (len(ids) - 1 + 9, 64)
    np.testing.assert_array_equal(prompt[at:at + 9], img)
    lead = build_prompt(toy_model, tok.tokenize("ab"), img)
    np.testing.assert_array_equal(lead[:9], img)
