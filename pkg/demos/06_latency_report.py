"""
Latency decomposition
=====================

A run splits into load time, prompt ingestion, token selection, decode and
a residual. The report closes exactly on the median run. We print one row
per precision for the same decoder.
"""

from mvlm import DecoderConfig, ModelConfig, Workload, init_random, measure, report_emit
from mvlm.pipeline import model_from_weights
from mvlm.weights import requantize

cfg = DecoderConfig(num_blocks=4, dim=768, num_heads=12, context_length=256, vocab_size=2048)
w = init_random(ModelConfig(cfg), seed=5)

work = Workload(tks_out=32)
lines = []
for mode in ("f32", "q8", "q4"):
    model = model_from_weights(w if mode == "f32" else requantize(w, mode))
    r = measure(model, work, runs=3, warmup=1)
    header, row = report_emit(r).decode().splitlines()
    lines.append(row)
    print(f"{mode}: closure error {r.closure_error():.1e}, others {r.others_s * 1e3:.2f} ms")

print()
print(header)
print("\n".join(lines))
print("\nJSON form of the last report:")
print(report_emit(r, "json").decode())
