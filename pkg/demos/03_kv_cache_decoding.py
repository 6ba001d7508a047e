"""
Incremental decoding with a KV cache
====================================

The decoder is causal, so each new token only needs its own keys and
values appended to a cache. We compare cached decoding to recomputing the
whole sequence at every step, then show greedy and seeded sampling.
"""

import time

import numpy as np

from mvlm import DecoderConfig, KvCache, ModelConfig, decoder_forward, init_random
from mvlm.pipeline import GenerationParams, model_from_weights, generate

cfg = DecoderConfig(num_blocks=4, dim=256, num_heads=8, context_length=256, vocab_size=512)
dec = init_random(ModelConfig(cfg), seed=1).decoder
ids = np.random.default_rng(2).integers(0, cfg.vocab_size, 16)

full = decoder_forward(ids, dec)
cache = KvCache.for_config(cfg)
step = np.concatenate([decoder_forward(ids[i:i + 1], dec, cache) for i in range(len(ids))])
print(f"max |cached - full| over {len(ids)} positions: {np.abs(step - full).max():.2e}")

#--- cost of 64 greedy tokens each way ----------------------------------------
def greedy(n, use_cache):
    seq = list(ids)
    c = KvCache.for_config(cfg) if use_cache else None
    logits = decoder_forward(np.array(seq), dec, c)[-1]
    for _ in range(n):
        seq.append(int(np.argmax(logits)))
        logits = decoder_forward(np.array(seq[-1:] if use_cache else seq), dec, c)[-1]
    return seq[len(ids):]

for use_cache in (True, False):
    t = time.perf_counter()
    out = greedy(64, use_cache)
    print(f"cache={use_cache!s:5s}  {time.perf_counter() - t:.2f}s  first tokens {out[:8]}")

#--- the pipeline view ------------------------------------------------------
model = model_from_weights(init_random(ModelConfig(cfg), seed=1))
for mode, seed in (("greedy", 0), ("sample", 7), ("sample", 7), ("sample", 8)):
    r = generate(None, "Once upon a time", model, GenerationParams(max_new_tokens=10, mode=mode, seed=seed))
    print(f"{mode:6s} seed {seed}: {r.token_ids}")
