import dataclasses

import numpy as np
import pytest

from mvlm import oracle
from mvlm.blocks import LayerNormParams
from mvlm.decoder import DecoderConfig
from mvlm.errors import DimensionError
from mvlm.projector import ldp_spec
from mvlm.vision import (CLIP_VIT_L14_336, TOY_VISION, VisionBlock, VisionConfig, VisionWeights, encode_image,
                         patchify, read_raw_image, rir_config, write_raw_image)
from mvlm.weights import ModelConfig, init_random

TINY_DEC = DecoderConfig(1, 16, 2, 64, 300)


def vision_weights(cfg=TOY_VISION, seed=0):
    return init_random(ModelConfig(TINY_DEC, cfg, ldp_spec(cfg.embed_dim, TINY_DEC.dim)), seed).vision


def image(cfg, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (cfg.image_size, cfg.image_size, cfg.channels)).astype(np.float32)


def test_clip_preset():
    assert CLIP_VIT_L14_336.num_patches == 576
    assert (CLIP_VIT_L14_336.image_size, CLIP_VIT_L14_336.patch_size, CLIP_VIT_L14_336.embed_dim,
            CLIP_VIT_L14_336.num_layers, CLIP_VIT_L14_336.num_heads) == (336, 14, 1024, 24, 16)
    assert CLIP_VIT_L14_336.use_class_token


def test_toy_output_shape():
    assert encode_image(image(TOY_VISION), TOY_VISION, vision_weights()).shape == (36, 32)


def _zero_block(d):
    z = lambda *s: np.zeros(s, np.float32)
    ln = LayerNormParams(np.ones(d, np.float32), z(d))
    return VisionBlock(ln, z(d, d), z(d), z(d, d), z(d), z(d, d), z(d), z(d, d), z(d), ln,
                       z(d, 4 * d), z(4 * d), z(4 * d, d), z(d))


@pytest.mark.slow
def test_clip_shape_output():
    cfg = CLIP_VIT_L14_336
    d = cfg.embed_dim
    block = _zero_block(d)  # one shared zero block keeps memory small
    w = VisionWeights(cfg, np.zeros((cfg.patch_dim, d), np.float32), np.zeros((cfg.num_positions, d), np.float32),
                      [block] * cfg.num_layers, np.zeros(d, np.float32))
    out = encode_image(np.zeros((336, 336, 3), np.float32), cfg, w)
    assert out.shape == (576, 1024)


def test_zero_image_identical_rows():
    w = dataclasses.replace(vision_weights(seed=1),
                            position_embedding=np.zeros((TOY_VISION.num_positions, 32), np.float32))
    out = encode_image(np.zeros((84, 84, 3), np.float32), TOY_VISION, w)
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), atol=1e-6)


def test_matches_oracle():
    w = vision_weights(seed=2)
    img = image(TOY_VISION, 3)
    np.testing.assert_allclose(encode_image(img, TOY_VISION, w), oracle.encode_image(img, TOY_VISION, w), atol=1e-5)


def test_without_class_token_matches_oracle():
    cfg = dataclasses.replace(TOY_VISION, use_class_token=False)
    w = vision_weights(cfg, seed=4)
    assert w.class_token is None
    img = image(cfg, 5)
    np.testing.assert_allclose(encode_image(img, cfg, w), oracle.encode_image(img, cfg, w), atol=1e-5)


def test_penultimate_feature_layer():
    cfg = dataclasses.replace(TOY_VISION, feature_layer=-2)
    w = vision_weights(cfg, seed=6)
    img = image(cfg, 7)
    np.testing.assert_allclose(encode_image(img, cfg, w), oracle.encode_image(img, cfg, w), atol=1e-5)
    final = encode_image(img, TOY_VISION, dataclasses.replace(w, config=TOY_VISION))
    assert np.abs(final - encode_image(img, cfg, w)).max() > 1e-3


def _permute_patches(img, perm, p):
    g = img.shape[0] // p
    cells = [img[(k // g) * p:(k // g + 1) * p, (k % g) * p:(k % g + 1) * p] for k in range(g * g)]
    out = np.empty_like(img)
    for dst, src in enumerate(perm):
        out[(dst // g) * p:(dst // g + 1) * p, (dst % g) * p:(dst % g + 1) * p] = cells[src]
    return out


def test_permutation_equivariance_without_positions():
    w = dataclasses.replace(vision_weights(seed=8),
                            position_embedding=np.zeros((TOY_VISION.num_positions, 32), np.float32))
    img = image(TOY_VISION, 9)
    perm = np.random.default_rng(10).permutation(36)
    base = encode_image(img, TOY_VISION, w)
    permuted = encode_image(_permute_patches(img, perm, 14), TOY_VISION, w)
    np.testing.assert_allclose(permuted, base[perm], atol=1e-5)


def test_patchify_row_major():
    img = np.arange(4 * 4 * 1, dtype=np.float32).reshape(4, 4, 1)
    p = patchify(img, 2)
    np.testing.assert_array_equal(p[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(p[2], [8, 9, 12, 13])


@pytest.mark.parametrize("size,patch", [(336, 14), (84, 14), (56, 7), (32, 8)])
def test_token_count_law(size, patch):
    cfg = VisionConfig(size, patch, 8, 1, 2)
    assert cfg.num_patches == (size // patch) ** 2


def test_rir_configs():
    rir = rir_config(CLIP_VIT_L14_336)
    assert (rir.image_size, rir.patch_size, rir.num_patches) == (168, 14, 144)
    toy = rir_config(TOY_VISION)
    assert (toy.image_size, toy.num_patches) == (42, 9)
    with pytest.raises(DimensionError):
        rir_config(VisionConfig(42, 14, 8, 1, 2))


def test_dimension_errors():
    with pytest.raises(DimensionError):
        VisionConfig(100, 14, 32, 2, 4)
    with pytest.raises(DimensionError):
        encode_image(np.zeros((70, 70, 3), np.float32), TOY_VISION, vision_weights())


def test_raw_image_round_trip(tmp_path):
    img = image(TOY_VISION, 11)
    write_raw_image(tmp_path / "x.raw", img)
    data = (tmp_path / "x.raw").read_bytes()
    assert data[:12] == np.array([84, 84, 3], "<i4").tobytes()
    np.testing.assert_array_equal(read_raw_image(tmp_path / "x.raw"), img)
    (tmp_path / "bad.raw").write_bytes(data[:-4])
    with pytest.raises(DimensionError):
        read_raw_image(tmp_path / "bad.raw")
