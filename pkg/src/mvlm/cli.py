"""Command line entry point: ``mvlm export | run | bench``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import bench, weights
from .decoder import PRESETS as DECODER_PRESETS
from .errors import MvlmError
from .pipeline import GenerationParams, generate, model_from_weights
from .projector import from_text, ldp_spec
from .quantize import MODES
from .tokenizer import Tokenizer
from .vision import CLIP_VIT_L14_336, TOY_VISION, read_raw_image


def preset_config(name: str, projector: Optional[str] = None) -> weights.ModelConfig:
    """Full VLM configuration for an export preset, optionally with a projector in text grammar."""
    dec = DECODER_PRESETS[name]
    vis = TOY_VISION if name == "toy" else CLIP_VIT_L14_336
    spec = ldp_spec(vis.embed_dim, dec.dim) if projector is None else from_text(projector, vis.embed_dim, dec.dim)
    return weights.ModelConfig(dec, vis, spec)


def cmd_export(args) -> int:
    cfg = preset_config(args.preset, args.projector)
    w = weights.init_random(cfg, args.seed, quant=args.quant)
    weights.save(w, args.out)
    print(f"wrote {args.out} ({weights.model_size_bytes(w)} bytes of weights, {args.quant})", file=sys.stderr)
    return 0


def _load_model(path, vocab):
    tok = Tokenizer.from_vocab_file(vocab) if vocab else None
    return model_from_weights(weights.load(path), tok)


def cmd_run(args) -> int:
    model = _load_model(args.model, args.vocab)
    image = read_raw_image(args.image) if args.image else None
    params = GenerationParams(max_new_tokens=args.n_predict, mode=args.mode, temperature=args.temperature,
                              top_k=args.top_k, seed=args.seed)
    result = generate(image, args.prompt, model, params)
    if args.format == "json":
        doc = {"text": result.text, "token_ids": result.token_ids, "timings": result.timings.to_dict()}
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    else:
        sys.stdout.write(result.text + "\n")
    return 0


def cmd_bench(args) -> int:
    image = read_raw_image(args.image) if args.image else None
    prompt = args.prompt
    if prompt is None:
        prompt = bench.VLM_PROMPT if image is not None else bench.LM_PROMPT
    workload = bench.Workload(prompt=prompt, tks_out=args.n_predict, image=image)
    report = bench.measure(args.model, workload, runs=args.runs, warmup=args.warmup, quant=args.quant,
                           threads=args.threads)
    sys.stdout.buffer.write(bench.report_emit(report, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvlm", description="Small CPU engine for a mobile vision-language model.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export", help="write a deterministic random checkpoint")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--preset", choices=sorted(DECODER_PRESETS), default="toy")
    e.add_argument("--quant", choices=MODES, default="f32")
    e.add_argument("--projector", help='projector stages, e.g. "PWx2 DW1PWx1 DW2PWx1" (default: that one)')
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    r = sub.add_parser("run", help="generate a response to an image and prompt")
    r.add_argument("--model", required=True)
    r.add_argument("--image", help="raw float image (int32 H, W, C header, float32 data)")
    r.add_argument("--prompt", default="")
    r.add_argument("--n-predict", type=int, default=32)
    r.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--temperature", type=float, default=1.0)
    r.add_argument("--top-k", type=int, default=40)
    r.add_argument("--vocab", help="vocab file with token<TAB>id lines")
    r.add_argument("--format", choices=("text", "json"), default="text")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="time inference and print a latency report")
    b.add_argument("--model", required=True)
    b.add_argument("--quant", choices=MODES, default=None, help="convert after loading (default: as stored)")
    b.add_argument("--prompt", default=None)
    b.add_argument("--image")
    b.add_argument("--n-predict", type=int, default=16)
    b.add_argument("--runs", type=int, default=3)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--threads", type=int, default=None, help="matmul threads (default: MVLM_THREADS or 1)")
    b.add_argument("--format", choices=("text", "json"), default="text")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MvlmError, ValueError, OSError) as exc:
        print(f"mvlm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
