"""
Checking the engine against a naive oracle
==========================================

The oracle module recomputes everything with plain Python loops and no
cache. It refuses large inputs so it stays honest. Here it re-derives a
decoder forward, a greedy decode and a projector pass.
"""

import numpy as np

from mvlm import TOY_VISION, DecoderConfig, KvCache, ModelConfig, decoder_forward, init_random, ldp_spec, oracle
from mvlm import project
from mvlm.errors import OracleSizeError

dec_cfg = DecoderConfig(num_blocks=2, dim=32, num_heads=4, context_length=32, vocab_size=64)
cfg = ModelConfig(dec_cfg, TOY_VISION, ldp_spec(TOY_VISION.embed_dim, dec_cfg.dim))
w = init_random(cfg, seed=6)
ids = np.array([1, 5, 9, 13])

for mode in ("f32", "q8", "q4"):
    wm = init_random(cfg, seed=6, quant=mode)
    diff = np.abs(decoder_forward(ids, wm.decoder) - oracle.decoder_forward(ids, wm.decoder)).max()
    print(f"decoder forward {mode}: max |engine - oracle| = {diff:.2e}")

cache = KvCache.for_config(dec_cfg)
logits = decoder_forward(ids, w.decoder, cache)[-1]
engine = []
for _ in range(6):
    engine.append(int(np.argmax(logits)))
    logits = decoder_forward(np.array(engine[-1:]), w.decoder, cache)[-1]
print("greedy engine:", engine)
print("greedy oracle:", oracle.greedy_decode(ids, w.decoder, 6))

f = np.random.default_rng(0).standard_normal((36, TOY_VISION.embed_dim)).astype(np.float32)
diff = np.abs(project(f, cfg.projector, w.projector) - oracle.project(f, cfg.projector, w.projector)).max()
print(f"projector: max |engine - oracle| = {diff:.2e}")

try:
    oracle.matmul(np.zeros((1, 4096)), np.zeros((4096, 4)))
except OracleSizeError as exc:
    print("oracle refuses:", exc)
