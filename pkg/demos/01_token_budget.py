"""
Where the visual tokens go
==========================

An image becomes 576 patch embeddings in the encoder. The lightweight
downsample projector (LDP) turns them into 144 language tokens; an MLP
projector keeps all 576. Halving the input resolution (RIR) reaches 144
the other way, before the encoder. This script walks through the counts.
"""

from mvlm import CLIP_VIT_L14_336, MOBILELLAMA_1_4B, flop_count, ldp_spec, mlp_spec, projector_param_count
from mvlm.projector import ABLATION_ROWS, table8_spec
from mvlm.vision import rir_config

enc = CLIP_VIT_L14_336
d_t = MOBILELLAMA_1_4B.dim
print(f"encoder: {enc.image_size}px, patch {enc.patch_size} -> {enc.num_patches} patches of width {enc.embed_dim}")

#--- projectors ------------------------------------------------------------
ldp = ldp_spec(enc.embed_dim, d_t)
mlp = mlp_spec(enc.embed_dim, d_t)
for name, spec in (("LDP", ldp), ("MLP", mlp)):
    print(f"{name:4s} {spec.to_text():24s} tokens {spec.output_tokens(enc.num_patches):4d}"
          f"  params {projector_param_count(spec):>11,}  GFLOPs {flop_count(spec, enc.num_patches) / 1e9:6.2f}")

# the five ablation variants of the grammar
print("\nablation grammar:")
for a, b, c, order, _ in ABLATION_ROWS:
    spec = table8_spec(a, b, c, order, d_v=enc.embed_dim, d_t=d_t)
    print(f"  {spec.to_text():32s} -> {spec.output_tokens(enc.num_patches)} tokens")

#--- encoder cost ----------------------------------------------------------
rir = rir_config(enc)
base_f, rir_f = flop_count(enc), flop_count(rir)
print(f"\nencoder GFLOPs at {enc.num_patches} patches: {base_f / 1e9:.1f}")
print(f"encoder GFLOPs at {rir.num_patches} patches (RIR): {rir_f / 1e9:.1f}  ratio {rir_f / base_f:.3f}")
print(f"RIR + MLP feeds {mlp_spec(rir.embed_dim, d_t).output_tokens(rir.num_patches)} tokens, "
      f"full res + LDP feeds {ldp.output_tokens(enc.num_patches)}")
print(f"encoder / LDP FLOPs: {base_f / flop_count(ldp, enc.num_patches):.1f}x")
