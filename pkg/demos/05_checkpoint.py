"""
Checkpoints on disk
===================

A checkpoint is a header, a config line, a tensor table and 32-byte aligned
blobs. Saving and loading is bit-exact for f32, q8 and q4.
"""

import tempfile
from pathlib import Path

import numpy as np

from mvlm import TOY_VISION, DecoderConfig, ModelConfig, init_random, ldp_spec, load, save
from mvlm.weights import named_tensors

dec = DecoderConfig(num_blocks=2, dim=64, num_heads=4, context_length=128, vocab_size=512)
cfg = ModelConfig(dec, TOY_VISION, ldp_spec(TOY_VISION.embed_dim, dec.dim))

with tempfile.TemporaryDirectory() as tmp:
    for mode in ("f32", "q8", "q4"):
        w = init_random(cfg, seed=4, quant=mode)
        path = Path(tmp) / f"toy-{mode}.mvlm"
        save(w, path)
        back = load(path)
        a, b = named_tensors(w), named_tensors(back)
        same = all(
            (x.codes.tobytes() == y.codes.tobytes() and x.scales.tobytes() == y.scales.tobytes())
            if hasattr(x, "codes") else x.tobytes() == y.tobytes()
            for x, y in zip(a.values(), b.values()))
        print(f"{mode}: {path.stat().st_size:>9,} bytes, {len(a)} tensors, bit-exact {same}, "
              f"load {back.load_seconds * 1e3:.1f} ms")

    # a damaged file is refused with a specific error
    raw = bytearray(path.read_bytes())
    for label, data in (("bad magic", b"XXXX" + raw[4:]), ("truncated", raw[:len(raw) // 2])):
        bad = Path(tmp) / "bad.mvlm"
        bad.write_bytes(bytes(data))
        try:
            load(bad)
        except Exception as exc:
            print(f"{label}: {type(exc).__name__}: {exc}")

print("first embedding row (f32):", np.round(named_tensors(init_random(cfg, 4))["decoder.token_embedding"][0, :4], 4))
