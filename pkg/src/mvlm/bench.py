"""Latency harness and analytic FLOP accounting.

A measured inference decomposes as::

    Total = Load_LM + Tks_in / Eval_prompt + Tks_out / Sample + Tks_out / Eval + Others

where the three rates are tokens per second for prompt ingestion, token
selection and steady-state decoding. ``Others`` (tokenization, vision
encoding, projection, detokenization, harness overhead) is the residual of
the measured wall time.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .decoder import DecoderConfig
from .errors import ContextOverflowError
from .pipeline import GenerationParams, Model, build_prompt, generate, model_from_weights
from .projector import DW_KERNEL, PW, ProjectorSpec
from .tensor import configured_threads, thread_limit
from .vision import VisionConfig
from .weights import load, model_size_bytes, quant_mode, requantize

LM_PROMPT = "Building a website can be done in 10 simple steps:\nStep 1:"
VLM_PROMPT = "What is in the picture?"


# -- FLOPs -------------------------------------------------------------------

def decoder_flops(cfg: DecoderConfig, seq_len: int) -> dict:
    """FLOPs (2 x MACs) of one causal forward over ``seq_len`` positions."""
    n, d, h = seq_len, cfg.dim, cfg.swiglu_hidden
    per_block = {
        "projections": 2 * n * 4 * d * d,
        # causal: QK^T and AV each touch ~n^2/2 pairs
        "attention": 2 * n * n * d,
        "ffn": 2 * n * 3 * d * h,
    }
    out = {k: cfg.num_blocks * v for k, v in per_block.items()}
    out["lm_head"] = 2 * n * d * cfg.vocab_size
    return out


def vision_flops(cfg: VisionConfig, num_patches: Optional[int] = None) -> dict:
    """FLOPs of one image through the encoder (blocks actually run for the feature layer)."""
    n_v = cfg.num_patches if num_patches is None else num_patches
    n = n_v + int(cfg.use_class_token)
    d = cfg.embed_dim
    layers = cfg.num_layers + 1 + cfg.feature_layer
    return {
        "patch_embed": 2 * n_v * cfg.patch_dim * d,
        "projections": layers * 2 * n * 4 * d * d,
        # same 2*n^2*d score/mix term as the decoder, for comparable counts
        "attention": layers * 2 * n * n * d,
        "mlp": layers * 2 * n * 2 * d * 4 * d,
    }


def projector_flops(spec: ProjectorSpec, num_tokens: int) -> dict:
    out = {"pointwise": 0, "depthwise": 0}
    tokens, width = num_tokens, spec.input_dim
    for st in spec.stages:
        if not isinstance(st, PW):
            tokens = tokens // (st.stride ** 2)
            out["depthwise"] += 2 * tokens * DW_KERNEL ** 2 * width
        out["pointwise"] += 2 * tokens * width * st.out_channels
        width = st.out_channels
    return out


def flop_count(component, n: Optional[int] = None) -> int:
    """Closed-form FLOPs for a decoder (``n`` = sequence length), encoder or projector (``n`` = N_v)."""
    if isinstance(component, DecoderConfig):
        return sum(decoder_flops(component, 0 if n is None else n).values())
    if isinstance(component, VisionConfig):
        return sum(vision_flops(component, n).values())
    if isinstance(component, ProjectorSpec):
        if n is None:
            raise ValueError("projector FLOPs need the input token count")
        return sum(projector_flops(component, n).values())
    raise TypeError(f"no FLOP model for {type(component).__name__}")


# -- measurement -------------------------------------------------------------

@dataclass
class Workload:
    prompt: str = LM_PROMPT
    tks_out: int = 16
    image: Optional[np.ndarray] = None


@dataclass
class LatencyReport:
    load_lm_s: float
    sample_tps: float
    eval_prompt_tps: float
    eval_tps: float
    others_s: float
    total_s: float
    tks_in: int
    tks_out: int
    model_size_bytes: int
    mode: str
    warmup_runs: int
    measured_runs: int
    ve_ms_per_patch: Optional[float] = None

    def components_s(self) -> float:
        return (self.load_lm_s + self.tks_in / self.eval_prompt_tps + self.tks_out / self.sample_tps
                + self.tks_out / self.eval_tps + self.others_s)

    def closure_error(self) -> float:
        """Relative gap between ``total_s`` and the sum of its decomposed terms."""
        return abs(self.total_s - self.components_s()) / self.total_s


@dataclass
class _Run:
    load_s: float
    total_s: float
    timings: object
    size: int
    mode: str


def _prepare(model_or_path, quant: Optional[str]) -> tuple[Model, float]:
    t0 = time.perf_counter()
    if isinstance(model_or_path, Model):
        model = model_or_path
        if quant is not None and quant_mode(model.weights) != quant:
            model = model_from_weights(requantize(model.weights, quant), model.tokenizer)
        return model, 0.0
    weights = load(model_or_path)
    if quant is not None and quant_mode(weights) != quant:
        weights = requantize(weights, quant)
    return model_from_weights(weights), time.perf_counter() - t0


def _check_budget(model: Model, workload: Workload) -> None:
    ids = model.tokenizer.tokenize(workload.prompt)
    n_img = model.image_token_count() if workload.image is not None else 0
    image_tokens = None if workload.image is None else np.zeros((n_img, model.decoder_config.dim), np.float32)
    n_in = max(1, len(build_prompt(model, ids, image_tokens)))
    if n_in + workload.tks_out > model.decoder_config.context_length:
        raise ContextOverflowError(f"workload needs {n_in + workload.tks_out} positions, context is "
                                   f"{model.decoder_config.context_length}")


def measure(model: Union[Model, str, Path], workload: Workload, runs: int = 3, warmup: int = 1,
            quant: Optional[str] = None, threads: Optional[int] = None) -> LatencyReport:
    """Time ``runs`` full inferences (after ``warmup`` untimed ones) and report the median run.

    A path is loaded inside every run, so ``Load_LM`` covers file read,
    structure build and any quantization conversion. The reported figures all
    come from the run with the median total, so the decomposition closes.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if workload.tks_out < 2:
        raise ValueError("tks_out must be at least 2 so the decode phase is observed")
    threads = configured_threads() if threads is None else threads
    params = GenerationParams(max_new_tokens=workload.tks_out, mode="greedy", stop_at_eos=False)

    probe, _ = _prepare(model, quant)
    _check_budget(probe, workload)
    if workload.image is not None and not probe.has_vision:
        raise ValueError("workload has an image but the model has no vision encoder")

    records = []
    with thread_limit(threads):
        for i in range(warmup + runs):
            start = time.perf_counter()
            m, load_s = _prepare(model, quant) if not isinstance(model, Model) else (probe, 0.0)
            result = generate(workload.image, workload.prompt, m, params)
            total = time.perf_counter() - start
            if i >= warmup:
                records.append(_Run(load_s, total, result.timings, model_size_bytes(m.weights),
                                    quant_mode(m.weights)))
    records.sort(key=lambda r: r.total_s)
    r = records[(len(records) - 1) // 2]
    t = r.timings
    others = r.total_s - r.load_s - t.prompt_s - t.sample_s - t.eval_s
    ve = None
    if t.n_patches:
        ve = 1000.0 * t.encode_s / t.n_patches
    return LatencyReport(
        load_lm_s=r.load_s,
        sample_tps=t.tks_out / t.sample_s,
        eval_prompt_tps=t.tks_in / t.prompt_s,
        eval_tps=t.tks_out / t.eval_s,
        others_s=others,
        total_s=r.total_s,
        tks_in=t.tks_in,
        tks_out=t.tks_out,
        model_size_bytes=r.size,
        mode=r.mode,
        warmup_runs=warmup,
        measured_runs=runs,
        ve_ms_per_patch=ve,
    )


# -- reporting ---------------------------------------------------------------

_TEXT_COLUMNS = (
    ("Precision", "{mode}", 9),
    ("Size(GiB)", "{size_gib:.3f}", 9),
    ("VE(ms/patch)", "{ve}", 12),
    ("Sample", "{sample_tps:.2f}", 11),
    ("Eval_prompt", "{eval_prompt_tps:.2f}", 11),
    ("Eval", "{eval_tps:.2f}", 9),
    ("Load_LM(s)", "{load_lm_s:.4f}", 10),
    ("Others(s)", "{others_s:.4f}", 9),
    ("Total(s)", "{total_s:.4f}", 9),
    ("Tks_in", "{tks_in}", 6),
    ("Tks_out", "{tks_out}", 7),
    ("Runs", "{measured_runs}+{warmup_runs}w", 6),
)


def report_emit(r: LatencyReport, fmt: str = "text") -> bytes:
    """Render a report as a two-line table (``text``) or a flat JSON object (``json``)."""
    if fmt == "json":
        return (json.dumps(asdict(r), indent=2, allow_nan=False) + "\n").encode("utf-8")
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    values = asdict(r)
    values["size_gib"] = r.model_size_bytes / 2 ** 30
    values["ve"] = "-" if r.ve_ms_per_patch is None else f"{r.ve_ms_per_patch:.3f}"
    header = "  ".join(name.rjust(width) for name, _, width in _TEXT_COLUMNS)
    row = "  ".join(fmt_.format(**values).rjust(width) for _, fmt_, width in _TEXT_COLUMNS)
    return (header + "\n" + row + "\n").encode("utf-8")


def report_fields() -> list[str]:
    return [f.name for f in fields(LatencyReport)]
