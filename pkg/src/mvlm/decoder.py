"""MobileLLaMA-style decoder: pre-norm blocks with RoPE attention and SwiGLU."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import (AttentionParams, LayerKv, RmsNormParams, SwigluParams, Weight, causal_attention,
                     linear, rms_norm, rope_table, swiglu_ffn, weight_shape)
from .errors import ContextOverflowError, DimensionError
from .quantize import QuantizedTensor
from .tensor import Tensor


def swiglu_hidden(dim: int) -> int:
    """SwiGLU width for an 8/3 expansion, rounded up to a multiple of 256."""
    return 256 * math.ceil((8 * dim / 3) / 256)


@dataclass(frozen=True)
class DecoderConfig:
    num_blocks: int
    dim: int
    num_heads: int
    context_length: int
    vocab_size: int

    def __post_init__(self):
        for name in ("num_blocks", "dim", "num_heads", "context_length", "vocab_size"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be positive")
        if self.dim % self.num_heads:
            raise DimensionError(f"dim {self.dim} not divisible by {self.num_heads} heads")
        if (self.dim // self.num_heads) % 2:
            raise DimensionError(f"head_dim {self.dim // self.num_heads} must be even for rotary embeddings")

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    @property
    def swiglu_hidden(self) -> int:
        return swiglu_hidden(self.dim)


MOBILELLAMA_1_4B = DecoderConfig(num_blocks=24, dim=2048, num_heads=16, context_length=2048, vocab_size=32000)
MOBILELLAMA_2_7B = DecoderConfig(num_blocks=32, dim=2560, num_heads=32, context_length=2048, vocab_size=32000)
TOY_DECODER = DecoderConfig(num_blocks=2, dim=64, num_heads=4, context_length=256, vocab_size=512)

PRESETS = {"1.4b": MOBILELLAMA_1_4B, "2.7b": MOBILELLAMA_2_7B, "toy": TOY_DECODER}


@dataclass(eq=False)
class DecoderBlock:
    attn: AttentionParams
    ffn: SwigluParams
    norm1: RmsNormParams
    norm2: RmsNormParams


@dataclass(eq=False)
class DecoderWeights:
    config: DecoderConfig
    token_embedding: Weight  # [vocab, dim]
    blocks: list[DecoderBlock]
    final_norm: RmsNormParams
    lm_head: Weight  # [dim, vocab]

    def __post_init__(self):
        cfg = self.config
        if len(self.blocks) != cfg.num_blocks:
            raise DimensionError(f"{len(self.blocks)} blocks for a {cfg.num_blocks}-block config")
        if weight_shape(self.token_embedding) != (cfg.vocab_size, cfg.dim):
            raise DimensionError(f"token embedding {weight_shape(self.token_embedding)} "
                                 f"!= {(cfg.vocab_size, cfg.dim)}")
        if weight_shape(self.lm_head) != (cfg.dim, cfg.vocab_size):
            raise DimensionError(f"lm_head {weight_shape(self.lm_head)} != {(cfg.dim, cfg.vocab_size)}")

    def embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise DimensionError(f"token id outside vocabulary of {self.config.vocab_size}")
        if isinstance(self.token_embedding, QuantizedTensor):
            if ids.size == 0:
                return np.zeros((0, self.config.dim), dtype=np.float32)
            return self.token_embedding.rows(ids)
        return self.token_embedding[ids]


@dataclass
class KvCache:
    """Per-session attention cache shared by all blocks of one decoder."""

    layers: list[LayerKv]
    capacity: int = field(init=False)

    def __post_init__(self):
        self.capacity = self.layers[0].capacity

    @classmethod
    def for_config(cls, config: DecoderConfig, capacity: Optional[int] = None) -> "KvCache":
        cap = config.context_length if capacity is None else min(capacity, config.context_length)
        return cls([LayerKv(cap, config.num_heads, config.head_dim) for _ in range(config.num_blocks)])

    @property
    def filled(self) -> int:
        counts = {layer.filled for layer in self.layers}
        if len(counts) != 1:
            raise RuntimeError(f"cache layers out of step: {sorted(counts)}")
        return counts.pop()


def decoder_forward(inputs, weights: DecoderWeights, cache: Optional[KvCache] = None) -> Tensor:
    """Logits ``[n, vocab]`` for each input position.

    ``inputs`` is a 1-D array of token ids or a ``[n, dim]`` float array of
    embeddings (image tokens). With a cache, positions continue from
    ``cache.filled`` and the cache advances by ``n``.
    """
    cfg = weights.config
    inputs = np.asarray(inputs)
    if inputs.ndim == 1 and np.issubdtype(inputs.dtype, np.integer):
        x = weights.embed(inputs)
    elif inputs.ndim == 2 and np.issubdtype(inputs.dtype, np.floating):
        if inputs.shape[1] != cfg.dim:
            raise DimensionError(f"embedding width {inputs.shape[1]} != decoder dim {cfg.dim}")
        x = inputs.astype(np.float32)
    else:
        raise DimensionError(f"decoder input must be token ids or [n, {cfg.dim}] embeddings, got {inputs.shape}")
    n = x.shape[0]
    start = 0 if cache is None else cache.filled
    limit = cfg.context_length if cache is None else cache.capacity
    if start + n > limit:
        raise ContextOverflowError(f"{start} + {n} positions exceed context of {limit}")

    rope = rope_table(cfg.head_dim, cfg.context_length)
    for i, block in enumerate(weights.blocks):
        layer_cache = None if cache is None else cache.layers[i]
        x = x + causal_attention(rms_norm(x, block.norm1), block.attn, rope, layer_cache)
        x = x + swiglu_ffn(rms_norm(x, block.norm2), block.ffn)
    return linear(rms_norm(x, weights.final_norm), weights.lm_head)


def count_parameters(config: DecoderConfig) -> int:
    d, h, v = config.dim, config.swiglu_hidden, config.vocab_size
    per_block = 4 * d * d + 3 * d * h + 2 * d
    return 2 * v * d + config.num_blocks * per_block + d


def mixed_prompt_embed(image_tokens: Tensor, text_ids, weights: DecoderWeights) -> Tensor:
    """Image tokens followed by embedded text tokens, ``[n_v + n_t, dim]``."""
    image_tokens = np.asarray(image_tokens, dtype=np.float32)
    if image_tokens.ndim != 2 or image_tokens.shape[1] != weights.config.dim:
        raise DimensionError(f"image tokens {image_tokens.shape} do not match decoder dim {weights.config.dim}")
    text = weights.embed(np.asarray(text_ids, dtype=np.int64))
    return np.concatenate([image_tokens, text.reshape(-1, weights.config.dim)], axis=0)
