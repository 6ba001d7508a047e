"""
Image and prompt in, text out
=============================

A toy-width VLM: ViT encoder (84px, patch 14 -> 36 patches), LDP projector
(36 -> 9 tokens) and a small decoder. The weights are random, so the text
is noise, but the plumbing and the timings are the real thing.
"""

import numpy as np

from mvlm import TOY_VISION, DecoderConfig, GenerationParams, ModelConfig, generate, init_random, ldp_spec
from mvlm import model_from_weights

dec = DecoderConfig(num_blocks=2, dim=64, num_heads=4, context_length=128, vocab_size=512)
cfg = ModelConfig(dec, TOY_VISION, ldp_spec(TOY_VISION.embed_dim, dec.dim))
model = model_from_weights(init_random(cfg, seed=3))
print(f"image tokens per picture: {model.image_token_count()}")

# the tokenizer falls back to bytes, so anything round-trips
s = "What is in the picture? é中"
ids = model.tokenizer.tokenize(s)
print(f"{len(ids)} ids, round trip ok: {model.tokenizer.detokenize(ids) == s}")

image = np.random.default_rng(0).uniform(-1, 1, (84, 84, 3)).astype(np.float32)
r = generate(image, "<image>\nWhat is in the picture?", model, GenerationParams(max_new_tokens=12))
t = r.timings
print(f"tokens in {t.tks_in} (of which image {t.n_image_tokens}), out {t.tks_out}")
print(f"encode {t.encode_s * 1e3:.2f} ms, project {t.project_s * 1e3:.2f} ms, "
      f"prompt {t.prompt_s * 1e3:.2f} ms, decode {t.eval_s * 1e3:.2f} ms")
print("text:", repr(r.text))

# a text-only prompt never touches the vision weights
no_image = generate(None, "Hello", model, GenerationParams(max_new_tokens=6))
print("text-only ids:", no_image.token_ids)
