"""End-to-end assembly: tokenize, encode, project, build the mixed prompt, decode."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decoder import DecoderConfig, KvCache, decoder_forward, mixed_prompt_embed
from .errors import ConstructionError, ContextOverflowError
from .projector import ProjectorSpec, project
from .rng import SplitMix64
from .tensor import softmax
from .tokenizer import Tokenizer
from .vision import VisionConfig, encode_image
from .weights import ModelConfig, ModelWeights


@dataclass
class Model:
    decoder_config: DecoderConfig
    vision_config: Optional[VisionConfig]
    projector_spec: Optional[ProjectorSpec]
    weights: ModelWeights
    tokenizer: Tokenizer

    @property
    def has_vision(self) -> bool:
        return self.vision_config is not None and self.projector_spec is not None

    def image_token_count(self) -> int:
        if not self.has_vision:
            return 0
        return self.projector_spec.output_tokens(self.vision_config.num_patches)


def build_vlm(decoder_cfg: DecoderConfig, vision_cfg: Optional[VisionConfig],
              projector_spec: Optional[ProjectorSpec], weights: Optional[ModelWeights] = None,
              tokenizer: Optional[Tokenizer] = None) -> Model:
    """Compose a model, checking the vision -> projector -> decoder width chain."""
    if projector_spec is not None and projector_spec.output_dim != decoder_cfg.dim:
        raise ConstructionError(f"projector output_dim {projector_spec.output_dim} does not match "
                                f"decoder dim {decoder_cfg.dim}")
    if vision_cfg is not None:
        if projector_spec is None:
            raise ConstructionError("vision encoder present but projector absent")
        if projector_spec.input_dim != vision_cfg.embed_dim:
            raise ConstructionError(f"vision embed_dim {vision_cfg.embed_dim} does not match "
                                    f"projector input_dim {projector_spec.input_dim}")
        grid = vision_cfg.grid
        for st in projector_spec.stages:
            if getattr(st, "stride", 1) == 2:
                if grid % 2:
                    raise ConstructionError(f"vision grid side {grid} is odd before a projector stride-2 stage")
                grid //= 2
    if weights is not None and weights.config != ModelConfig(decoder_cfg, vision_cfg, projector_spec):
        raise ConstructionError("weights were built for a different configuration")
    if tokenizer is None:
        tokenizer = Tokenizer.default(decoder_cfg.vocab_size)
    if tokenizer.vocab_size > decoder_cfg.vocab_size:
        raise ConstructionError(f"tokenizer uses {tokenizer.vocab_size} ids, decoder vocab is "
                                f"{decoder_cfg.vocab_size}")
    return Model(decoder_cfg, vision_cfg, projector_spec, weights, tokenizer)


def model_from_weights(weights: ModelWeights, tokenizer: Optional[Tokenizer] = None) -> Model:
    cfg = weights.config
    return build_vlm(cfg.decoder, cfg.vision, cfg.projector, weights, tokenizer)


@dataclass
class GenerationParams:
    max_new_tokens: int = 32
    mode: str = "greedy"
    temperature: float = 1.0
    top_k: int = 40
    seed: int = 0
    eos_token: Optional[int] = None  # None: the tokenizer's eos
    stop_at_eos: bool = True

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be non-negative")
        if self.mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decoding mode {self.mode!r}")
        if self.mode == "sample" and self.temperature <= 0:
            raise ValueError("temperature must be positive when sampling")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass
class Timings:
    """Phase durations in seconds, plus per-token samples."""

    tokenize_s: float = 0.0
    encode_s: float = 0.0
    project_s: float = 0.0
    prompt_s: float = 0.0
    sample_s: float = 0.0
    eval_s: float = 0.0
    detokenize_s: float = 0.0
    total_s: float = 0.0
    tks_in: int = 0
    tks_out: int = 0
    n_patches: int = 0
    n_image_tokens: int = 0
    sample_token_s: list = field(default_factory=list)
    eval_token_s: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GenerationResult:
    text: str
    token_ids: list
    timings: Timings


def select_token(logits: np.ndarray, params: GenerationParams, rng: SplitMix64) -> int:
    """Greedy argmax (ties to the lowest id) or temperature-scaled top-k sampling."""
    if params.mode == "greedy":
        return int(np.argmax(logits))
    order = np.argsort(-logits.astype(np.float64), kind="stable")[:params.top_k]
    probs = softmax(logits[order].astype(np.float64) / params.temperature).astype(np.float64)
    cdf = np.cumsum(probs)
    pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return int(order[min(pick, len(order) - 1)])


def build_prompt(model: Model, ids: list, image_tokens: Optional[np.ndarray]):
    """Decoder input for the prompt: token ids, or embeddings with image tokens spliced in.

    Image tokens replace the first ``<image>`` placeholder, or lead the prompt
    when there is none.
    """
    dec = model.weights.decoder
    if image_tokens is None:
        return np.asarray(ids, dtype=np.int64)
    placeholder = model.tokenizer.image
    if placeholder is not None and placeholder in ids:
        at = ids.index(placeholder)
        before = dec.embed(np.asarray(ids[:at], dtype=np.int64)).reshape(-1, dec.config.dim)
        return np.concatenate([before, mixed_prompt_embed(image_tokens, ids[at + 1:], dec)], axis=0)
    return mixed_prompt_embed(image_tokens, ids, dec)


def generate(image, prompt: str, model: Model, params: GenerationParams,
             use_cache: bool = True) -> GenerationResult:
    """Autoregressive response to an optional image and a text prompt.

    ``use_cache=False`` recomputes the full sequence at every step.
    """
    clock = time.perf_counter
    t = Timings()
    t_begin = clock()
    dec = model.weights.decoder
    cfg = model.decoder_config
    eos = model.tokenizer.eos if params.eos_token is None else params.eos_token

    t0 = clock()
    ids = model.tokenizer.tokenize(prompt)
    t.tokenize_s = clock() - t0

    image_tokens = None
    if image is not None:
        if not model.has_vision:
            raise ConstructionError("an image was given but the model has no vision encoder/projector")
        t0 = clock()
        feats = encode_image(image, model.vision_config, model.weights.vision)
        t.encode_s = clock() - t0
        t0 = clock()
        image_tokens = project(feats, model.projector_spec, model.weights.projector)
        t.project_s = clock() - t0
        t.n_patches = feats.shape[0]
        t.n_image_tokens = image_tokens.shape[0]

    prompt_input = build_prompt(model, ids, image_tokens)
    if len(prompt_input) == 0:
        prompt_input = np.asarray([model.tokenizer.bos], dtype=np.int64)
    n_in = len(prompt_input)
    if n_in + params.max_new_tokens > cfg.context_length:
        raise ContextOverflowError(f"{n_in} prompt positions + {params.max_new_tokens} new tokens exceed "
                                   f"context length {cfg.context_length}")
    t.tks_in = n_in

    rng = SplitMix64(params.seed)
    cache = KvCache.for_config(cfg, capacity=n_in + params.max_new_tokens) if use_cache else None

    t0 = clock()
    logits = decoder_forward(prompt_input, dec, cache)[-1]
    t.prompt_s = clock() - t0

    out = []
    for step in range(params.max_new_tokens):
        t0 = clock()
        tok = select_token(logits, params, rng)
        dt = clock() - t0
        t.sample_token_s.append(dt)
        out.append(tok)
        if (params.stop_at_eos and tok == eos) or step == params.max_new_tokens - 1:
            break
        t0 = clock()
        if use_cache:
            logits = decoder_forward(np.asarray([tok], dtype=np.int64), dec, cache)[-1]
        else:
            logits = decoder_forward(_extend(prompt_input, out, dec), dec)[-1]
        t.eval_token_s.append(clock() - t0)
    t.sample_s = float(sum(t.sample_token_s))
    t.eval_s = float(sum(t.eval_token_s))
    t.tks_out = len(out)

    t0 = clock()
    text = model.tokenizer.detokenize([i for i in out if i != eos])
    t.detokenize_s = clock() - t0
    t.total_s = clock() - t_begin
    return GenerationResult(text, out, t)


def _extend(prompt_input: np.ndarray, out: list, dec) -> np.ndarray:
    if np.issubdtype(prompt_input.dtype, np.integer):
        return np.concatenate([prompt_input, np.asarray(out, dtype=np.int64)])
    return np.concatenate([prompt_input, dec.embed(np.asarray(out, dtype=np.int64))], axis=0)
