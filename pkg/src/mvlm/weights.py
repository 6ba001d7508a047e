"""Model weight sets: deterministic initialization and the ``MVLM`` checkpoint container.

Checkpoint layout (all integers little-endian)::

    "MVLM"                      magic, 4 bytes
    u32 version                 currently 1
    u32 n, n bytes              config blob, UTF-8 ``key=value`` lines
    u32 count                   tensor table entries, then per entry:
        u32 n, n bytes          name
        u8 dtype                0 = f32, 1 = q8, 2 = q4
        u8 rank, u32 * rank     logical dims
        u64 offset              absolute file offset of the blob, 32-byte aligned
    blobs                       f32: raw values; q8/q4: float32 scales [m, groups] then codes
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .blocks import AttentionParams, ConvParams, LayerNormParams, RmsNormParams, SwigluParams
from .decoder import DecoderBlock, DecoderConfig, DecoderWeights
from .errors import (BadMagicError, CheckpointError, DimensionError, OffsetOverlapError, TruncatedFileError,
                     UnsupportedVersionError)
from .projector import (DW_KERNEL, PW, DwPwWeights, ProjectorSpec, ProjectorWeights, PwWeights, from_text)
from .quantize import GROUP_SIZE, MODES, QuantizedTensor, dequantize, quantize, storage_bytes
from .rng import stream_for
from .vision import VisionBlock, VisionConfig, VisionWeights

MAGIC = b"MVLM"
VERSION = 1
ALIGN = 32
DTYPES = {"f32": 0, "q8": 1, "q4": 2}
DTYPE_NAMES = {v: k for k, v in DTYPES.items()}


@dataclass(frozen=True)
class ModelConfig:
    decoder: DecoderConfig
    vision: Optional[VisionConfig] = None
    projector: Optional[ProjectorSpec] = None


@dataclass(eq=False)
class ModelWeights:
    config: ModelConfig
    decoder: DecoderWeights
    vision: Optional[VisionWeights] = None
    projector: Optional[ProjectorWeights] = None
    # wall-clock seconds spent building this set (file read, structure build, conversion)
    load_seconds: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple
    init: str  # "uniform", "ones" or "zeros"
    fan_in: int = 1
    quantizable: bool = False


def tensor_schema(config: ModelConfig) -> Iterator[TensorSpec]:
    """Every tensor of a model, in checkpoint order."""
    dc = config.decoder
    d, h, v = dc.dim, dc.swiglu_hidden, dc.vocab_size
    yield TensorSpec("decoder.token_embedding", (v, d), "uniform", d, True)
    for i in range(dc.num_blocks):
        p = f"decoder.blocks.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            yield TensorSpec(f"{p}.attn.{name}", (d, d), "uniform", d, True)
        yield TensorSpec(f"{p}.ffn.w_gate", (d, h), "uniform", d, True)
        yield TensorSpec(f"{p}.ffn.w_up", (d, h), "uniform", d, True)
        yield TensorSpec(f"{p}.ffn.w_down", (h, d), "uniform", h, True)
        yield TensorSpec(f"{p}.norm1.gain", (d,), "ones")
        yield TensorSpec(f"{p}.norm2.gain", (d,), "ones")
    yield TensorSpec("decoder.final_norm.gain", (d,), "ones")
    yield TensorSpec("decoder.lm_head", (d, v), "uniform", d, True)

    vc = config.vision
    if vc is not None:
        e = vc.embed_dim
        yield TensorSpec("vision.patch_projection", (vc.patch_dim, e), "uniform", vc.patch_dim)
        yield TensorSpec("vision.position_embedding", (vc.num_positions, e), "uniform", e)
        if vc.use_class_token:
            yield TensorSpec("vision.class_token", (e,), "uniform", e)
        for i in range(vc.num_layers):
            p = f"vision.blocks.{i}"
            yield TensorSpec(f"{p}.ln1.gain", (e,), "ones")
            yield TensorSpec(f"{p}.ln1.bias", (e,), "zeros")
            for name in ("q", "k", "v", "o"):
                yield TensorSpec(f"{p}.w{name}", (e, e), "uniform", e)
                yield TensorSpec(f"{p}.b{name}", (e,), "uniform", e)
            yield TensorSpec(f"{p}.ln2.gain", (e,), "ones")
            yield TensorSpec(f"{p}.ln2.bias", (e,), "zeros")
            yield TensorSpec(f"{p}.fc1", (e, 4 * e), "uniform", e)
            yield TensorSpec(f"{p}.b1", (4 * e,), "uniform", e)
            yield TensorSpec(f"{p}.fc2", (4 * e, e), "uniform", 4 * e)
            yield TensorSpec(f"{p}.b2", (e,), "uniform", 4 * e)

    spec = config.projector
    if spec is not None:
        width = spec.input_dim
        for i, st in enumerate(spec.stages):
            p = f"projector.stages.{i}"
            out = st.out_channels
            if isinstance(st, PW):
                yield TensorSpec(f"{p}.conv.weight", (width, out), "uniform", width)
                yield TensorSpec(f"{p}.conv.bias", (out,), "uniform", width)
            else:
                fan = DW_KERNEL * DW_KERNEL
                yield TensorSpec(f"{p}.dw.weight", (width, DW_KERNEL, DW_KERNEL), "uniform", fan)
                yield TensorSpec(f"{p}.dw.bias", (width,), "uniform", fan)
                yield TensorSpec(f"{p}.ln1.gain", (width,), "ones")
                yield TensorSpec(f"{p}.ln1.bias", (width,), "zeros")
                yield TensorSpec(f"{p}.pw.weight", (width, out), "uniform", width)
                yield TensorSpec(f"{p}.pw.bias", (out,), "uniform", width)
                yield TensorSpec(f"{p}.ln2.gain", (out,), "ones")
                yield TensorSpec(f"{p}.ln2.bias", (out,), "zeros")
            width = out


def _generate(ts: TensorSpec, seed: int) -> np.ndarray:
    if ts.init == "ones":
        return np.ones(ts.shape, dtype=np.float32)
    if ts.init == "zeros":
        return np.zeros(ts.shape, dtype=np.float32)
    bound = 1.0 / math.sqrt(ts.fan_in)
    n = int(np.prod(ts.shape))
    return stream_for(seed, ts.name).uniform(n, -bound, bound).astype(np.float32).reshape(ts.shape)


def init_random(config: ModelConfig, seed: int, quant: str = "f32") -> ModelWeights:
    """Deterministic weights: uniform(+-1/sqrt(fan_in)) per tensor, norms at gain 1 / bias 0.

    Each tensor draws from its own SplitMix64 stream keyed by ``(seed, name)``.
    With ``quant`` set, decoder matrices are quantized as they are generated,
    so peak memory stays near the quantized size.
    """
    if quant not in MODES:
        raise ValueError(f"unknown quantization mode {quant!r}")
    tensors = {}
    for ts in tensor_schema(config):
        t = _generate(ts, seed)
        tensors[ts.name] = quantize(t, quant) if (ts.quantizable and quant != "f32") else t
    return assemble(config, tensors)


def assemble(config: ModelConfig, t: dict) -> ModelWeights:
    """Build typed weight structures from a flat ``name -> tensor`` mapping."""
    expected = {ts.name: ts.shape for ts in tensor_schema(config)}
    missing = expected.keys() - t.keys()
    if missing:
        raise CheckpointError(f"missing tensors: {sorted(missing)[:5]}")
    extra = t.keys() - expected.keys()
    if extra:
        raise CheckpointError(f"unexpected tensors: {sorted(extra)[:5]}")
    for name, shape in expected.items():
        got = tuple(t[name].logical_shape) if isinstance(t[name], QuantizedTensor) else t[name].shape
        if got != shape:
            raise DimensionError(f"{name}: shape {got} != expected {shape}")

    dc = config.decoder
    blocks = []
    for i in range(dc.num_blocks):
        p = f"decoder.blocks.{i}"
        blocks.append(DecoderBlock(
            attn=AttentionParams(t[f"{p}.attn.wq"], t[f"{p}.attn.wk"], t[f"{p}.attn.wv"], t[f"{p}.attn.wo"],
                                 dc.num_heads),
            ffn=SwigluParams(t[f"{p}.ffn.w_gate"], t[f"{p}.ffn.w_up"], t[f"{p}.ffn.w_down"]),
            norm1=RmsNormParams(t[f"{p}.norm1.gain"]),
            norm2=RmsNormParams(t[f"{p}.norm2.gain"]),
        ))
    decoder = DecoderWeights(dc, t["decoder.token_embedding"], blocks,
                             RmsNormParams(t["decoder.final_norm.gain"]), t["decoder.lm_head"])

    vision = None
    vc = config.vision
    if vc is not None:
        vblocks = []
        for i in range(vc.num_layers):
            p = f"vision.blocks.{i}"
            vblocks.append(VisionBlock(
                ln1=LayerNormParams(t[f"{p}.ln1.gain"], t[f"{p}.ln1.bias"]),
                wq=t[f"{p}.wq"], bq=t[f"{p}.bq"], wk=t[f"{p}.wk"], bk=t[f"{p}.bk"],
                wv=t[f"{p}.wv"], bv=t[f"{p}.bv"], wo=t[f"{p}.wo"], bo=t[f"{p}.bo"],
                ln2=LayerNormParams(t[f"{p}.ln2.gain"], t[f"{p}.ln2.bias"]),
                fc1=t[f"{p}.fc1"], b1=t[f"{p}.b1"], fc2=t[f"{p}.fc2"], b2=t[f"{p}.b2"],
            ))
        vision = VisionWeights(vc, t["vision.patch_projection"], t["vision.position_embedding"], vblocks,
                               t.get("vision.class_token"))

    projector = None
    spec = config.projector
    if spec is not None:
        stages = []
        for i, st in enumerate(spec.stages):
            p = f"projector.stages.{i}"
            if isinstance(st, PW):
                stages.append(PwWeights(ConvParams("pointwise", t[f"{p}.conv.weight"], t[f"{p}.conv.bias"])))
            else:
                stages.append(DwPwWeights(
                    dw=ConvParams("depthwise", t[f"{p}.dw.weight"], t[f"{p}.dw.bias"], stride=st.stride,
                                  padding=(DW_KERNEL - 1) // 2),
                    ln1=LayerNormParams(t[f"{p}.ln1.gain"], t[f"{p}.ln1.bias"]),
                    pw=ConvParams("pointwise", t[f"{p}.pw.weight"], t[f"{p}.pw.bias"]),
                    ln2=LayerNormParams(t[f"{p}.ln2.gain"], t[f"{p}.ln2.bias"]),
                ))
        projector = ProjectorWeights(spec, stages)
    return ModelWeights(config, decoder, vision, projector)


def named_tensors(w: ModelWeights) -> dict:
    """Flat ``name -> tensor`` view, inverse of :func:`assemble`."""
    out = {"decoder.token_embedding": w.decoder.token_embedding}
    for i, b in enumerate(w.decoder.blocks):
        p = f"decoder.blocks.{i}"
        out.update({f"{p}.attn.wq": b.attn.wq, f"{p}.attn.wk": b.attn.wk, f"{p}.attn.wv": b.attn.wv,
                    f"{p}.attn.wo": b.attn.wo, f"{p}.ffn.w_gate": b.ffn.w_gate, f"{p}.ffn.w_up": b.ffn.w_up,
                    f"{p}.ffn.w_down": b.ffn.w_down, f"{p}.norm1.gain": b.norm1.gain,
                    f"{p}.norm2.gain": b.norm2.gain})
    out["decoder.final_norm.gain"] = w.decoder.final_norm.gain
    out["decoder.lm_head"] = w.decoder.lm_head
    if w.vision is not None:
        out["vision.patch_projection"] = w.vision.patch_projection
        out["vision.position_embedding"] = w.vision.position_embedding
        if w.vision.class_token is not None:
            out["vision.class_token"] = w.vision.class_token
        for i, b in enumerate(w.vision.blocks):
            p = f"vision.blocks.{i}"
            out.update({f"{p}.ln1.gain": b.ln1.gain, f"{p}.ln1.bias": b.ln1.bias,
                        f"{p}.ln2.gain": b.ln2.gain, f"{p}.ln2.bias": b.ln2.bias,
                        f"{p}.fc1": b.fc1, f"{p}.b1": b.b1, f"{p}.fc2": b.fc2, f"{p}.b2": b.b2})
            for name in ("q", "k", "v", "o"):
                out[f"{p}.w{name}"] = getattr(b, f"w{name}")
                out[f"{p}.b{name}"] = getattr(b, f"b{name}")
    if w.projector is not None:
        for i, sw in enumerate(w.projector.stages):
            p = f"projector.stages.{i}"
            if isinstance(sw, PwWeights):
                out[f"{p}.conv.weight"] = sw.conv.weight
                out[f"{p}.conv.bias"] = sw.conv.bias
            else:
                out.update({f"{p}.dw.weight": sw.dw.weight, f"{p}.dw.bias": sw.dw.bias,
                            f"{p}.ln1.gain": sw.ln1.gain, f"{p}.ln1.bias": sw.ln1.bias,
                            f"{p}.pw.weight": sw.pw.weight, f"{p}.pw.bias": sw.pw.bias,
                            f"{p}.ln2.gain": sw.ln2.gain, f"{p}.ln2.bias": sw.ln2.bias})
    return out


def quant_mode(w: ModelWeights) -> str:
    modes = {t.mode if isinstance(t, QuantizedTensor) else "f32"
             for name, t in named_tensors(w).items() if name.startswith("decoder.") and not name.endswith("gain")}
    return modes.pop() if len(modes) == 1 else "mixed"


def requantize(w: ModelWeights, mode: str) -> ModelWeights:
    """Convert every quantizable decoder matrix to ``mode`` (f32, q8 or q4)."""
    if mode not in MODES:
        raise ValueError(f"unknown quantization mode {mode!r}")
    quantizable = {ts.name for ts in tensor_schema(w.config) if ts.quantizable}
    tensors = {}
    for name, t in named_tensors(w).items():
        if name in quantizable:
            current = t.mode if isinstance(t, QuantizedTensor) else "f32"
            if current != mode:
                t = dequantize(t) if isinstance(t, QuantizedTensor) else t
                t = t if mode == "f32" else quantize(t, mode)
        tensors[name] = t
    return assemble(w.config, tensors)


def model_size_bytes(w: ModelWeights) -> int:
    return sum(t.nbytes for t in named_tensors(w).values())


def projected_size_bytes(config: ModelConfig, mode: str) -> int:
    """Storage a model would take in ``mode`` without instantiating it."""
    return sum(storage_bytes(ts.shape, mode if ts.quantizable else "f32") for ts in tensor_schema(config))


# -- config blob -------------------------------------------------------------

def config_to_text(config: ModelConfig) -> str:
    dc = config.decoder
    lines = [f"decoder.{k}={getattr(dc, k)}" for k in
             ("num_blocks", "dim", "num_heads", "context_length", "vocab_size")]
    if config.vision is not None:
        vc = config.vision
        lines += [f"vision.{k}={int(getattr(vc, k))}" for k in
                  ("image_size", "patch_size", "embed_dim", "num_layers", "num_heads", "use_class_token",
                   "channels", "feature_layer")]
    if config.projector is not None:
        sp = config.projector
        lines += [f"projector.input_dim={sp.input_dim}", f"projector.output_dim={sp.output_dim}",
                  f"projector.stages={sp.to_text()}"]
    return "".join(line + "\n" for line in lines)


def config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        kv[key.strip()] = value.strip()
    try:
        decoder = DecoderConfig(**{k: int(kv[f"decoder.{k}"]) for k in
                                   ("num_blocks", "dim", "num_heads", "context_length", "vocab_size")})
        vision = None
        if "vision.image_size" in kv:
            ints = {k: int(kv[f"vision.{k}"]) for k in
                    ("image_size", "patch_size", "embed_dim", "num_layers", "num_heads", "channels",
                     "feature_layer")}
            vision = VisionConfig(use_class_token=bool(int(kv["vision.use_class_token"])), **ints)
        projector = None
        if "projector.stages" in kv:
            projector = from_text(kv["projector.stages"], int(kv["projector.input_dim"]),
                                  int(kv["projector.output_dim"]))
    except KeyError as exc:
        raise CheckpointError(f"config blob lacks {exc.args[0]}") from None
    return ModelConfig(decoder, vision, projector)


# -- container ---------------------------------------------------------------

def _blob(t) -> tuple[int, tuple, bytes]:
    if isinstance(t, QuantizedTensor):
        data = t.scales.astype("<f4").tobytes() + t.codes.tobytes()
        return DTYPES[t.mode], tuple(t.logical_shape), data
    return DTYPES["f32"], tuple(t.shape), np.ascontiguousarray(t, dtype="<f4").tobytes()


def _blob_size(dtype: int, dims: tuple) -> int:
    mode = DTYPE_NAMES[dtype]
    if mode == "f32":
        return 4 * int(np.prod(dims))
    return storage_bytes(dims, mode)


def _align(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def save(w: ModelWeights, path) -> None:
    tensors = named_tensors(w)
    cfg = config_to_text(w.config).encode("utf-8")
    blobs = []
    table = bytearray()
    for name, t in tensors.items():
        dtype, dims, data = _blob(t)
        raw = name.encode("utf-8")
        blobs.append(data)
        table += struct.pack("<I", len(raw)) + raw + struct.pack("<BB", dtype, len(dims))
        table += struct.pack(f"<{len(dims)}I", *dims)
        table += b"\0" * 8  # offset placeholder, patched below
    header = MAGIC + struct.pack("<II", VERSION, len(cfg)) + cfg + struct.pack("<I", len(tensors))
    offset = _align(len(header) + len(table))
    offsets = []
    for data in blobs:
        offsets.append(offset)
        offset = _align(offset + len(data))
    # patch offsets into the table
    pos = 0
    for off in offsets:
        (nlen,) = struct.unpack_from("<I", table, pos)
        pos += 4 + nlen
        _, rank = struct.unpack_from("<BB", table, pos)
        pos += 2 + 4 * rank
        struct.pack_into("<Q", table, pos, off)
        pos += 8
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table)
        for off, data in zip(offsets, blobs):
            fh.write(b"\0" * (off - fh.tell()))
            fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))


def load(path) -> ModelWeights:
    t0 = time.perf_counter()
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not an MVLM checkpoint")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("I")
    try:
        config = config_from_text(r.take(cfg_len).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: config blob is not UTF-8") from exc
    (count,) = r.unpack("I")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("I")
        name = r.take(nlen).decode("utf-8")
        dtype, rank = r.unpack("BB")
        if dtype not in DTYPE_NAMES:
            raise CheckpointError(f"{name}: unknown dtype tag {dtype}")
        dims = r.unpack(f"{rank}I") if rank else ()
        if dtype != DTYPES["f32"] and rank != 2:
            raise CheckpointError(f"{name}: quantized tensors must be 2-D")
        (offset,) = r.unpack("Q")
        entries.append((name, dtype, dims, offset))

    names = [e[0] for e in entries]
    if len(set(names)) != len(names):
        raise CheckpointError(f"{path}: duplicate tensor names")
    table_end = r.pos
    prev_end = table_end
    for name, dtype, dims, offset in entries:
        if offset < prev_end:
            raise OffsetOverlapError(f"{name}: blob at {offset} overlaps data ending at {prev_end}")
        if offset % ALIGN:
            raise CheckpointError(f"{name}: blob offset {offset} not {ALIGN}-byte aligned")
        prev_end = offset + _blob_size(dtype, dims)
        if prev_end > len(data):
            raise TruncatedFileError(f"{name}: blob ends at {prev_end}, file has {len(data)} bytes")

    tensors = {}
    for name, dtype, dims, offset in entries:
        mode = DTYPE_NAMES[dtype]
        if mode == "f32":
            n = int(np.prod(dims))
            tensors[name] = np.frombuffer(data, "<f4", n, offset).astype(np.float32).reshape(dims)
            continue
        m, ncols = dims
        groups = -(-ncols // GROUP_SIZE)
        scales = np.frombuffer(data, "<f4", m * groups, offset).astype(np.float32).reshape(m, groups)
        code_off = offset + 4 * m * groups
        if mode == "q8":
            codes = np.frombuffer(data, np.int8, m * groups * GROUP_SIZE, code_off).reshape(m, -1).copy()
        else:
            pairs = -(-m // 2)
            codes = np.frombuffer(data, np.uint8, pairs * groups * GROUP_SIZE, code_off).reshape(pairs, -1).copy()
        tensors[name] = QuantizedTensor(mode, scales, codes, (m, ncols))
    weights = assemble(config, tensors)
    weights.load_seconds = time.perf_counter() - t0
    return weights
