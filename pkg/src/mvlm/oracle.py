"""Naive reference implementations for differential testing.

Everything here is plain Python over nested lists of floats (float64): triple
loops, direct formulas, full recomputation. Nothing is imported from the
engine's arithmetic; engine objects are only read for their arrays. Inputs
are capped in size so no optimization is ever needed.
"""

from __future__ import annotations

import math
from decimal import Decimal, localcontext

import numpy as np

from .errors import OracleSizeError

MAX_SEQ = 64
MAX_DIM = 256
MAX_HIDDEN = 1024
MAX_VOCAB = 1024
EPS = 1e-5
ROPE_BASE = 10000.0


def _cap(what: str, value: int, limit: int) -> None:
    if value > limit:
        raise OracleSizeError(f"oracle refuses {what}={value} (cap {limit})")


def _rows(x) -> list:
    return np.asarray(x, dtype=np.float64).tolist()


def _unpack(w) -> list:
    """Weight as nested lists, dequantizing group codes by hand."""
    if not hasattr(w, "codes"):
        return _rows(w)
    m, n = w.logical_shape
    _cap("weight rows", m, MAX_HIDDEN)
    _cap("weight cols", n, MAX_VOCAB)
    scales = _rows(w.scales)
    raw = w.codes.tolist()
    out = []
    for i in range(m):
        row = []
        for j in range(n):
            if w.mode == "q8":
                code = raw[i][j]
            else:
                byte = raw[i // 2][j]
                code = ((byte >> 4) if i % 2 else (byte & 15)) - 8
            row.append(code * scales[i][j // w.group_size])
        out.append(row)
    return out


def dequantize(q) -> np.ndarray:
    return np.array(_unpack(q))


def matmul(a, b) -> np.ndarray:
    a, b = _rows(a), _unpack(b)
    m, k, n = len(a), len(b), len(b[0])
    _cap("rows", m, MAX_HIDDEN)
    _cap("inner", k, MAX_HIDDEN)
    _cap("cols", n, MAX_VOCAB)
    if len(a[0]) != k:
        raise ValueError("inner dimensions differ")
    c = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            c[i][j] = s
    return np.array(c)


def _mm(a: list, b: list) -> list:
    return matmul(a, b).tolist()


def quantized_matmul(x, q) -> np.ndarray:
    """Dequantize-then-multiply reference."""
    return matmul(x, dequantize(q))


def softmax(v) -> np.ndarray:
    v = [float(t) for t in v]
    top = max(v)
    e = [math.exp(t - top) for t in v]
    s = math.fsum(e)
    return np.array([t / s for t in e])


def erf(x: float, digits: int = 50) -> float:
    """Maclaurin series ``2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))`` in Decimal."""
    if abs(x) > 6.0:
        return math.copysign(1.0, x)
    with localcontext() as ctx:
        ctx.prec = digits
        xd = Decimal(repr(float(x)))
        term = xd  # x^(2n+1) (-1)^n / n!
        total = Decimal(0)
        n = 0
        eps = Decimal(10) ** (-digits + 5)
        while True:
            contrib = term / (2 * n + 1)
            total += contrib
            if abs(contrib) < eps and n > 2:
                break
            n += 1
            term = -term * xd * xd / n
        pi = Decimal("3.14159265358979323846264338327950288419716939937510582097494459")
        return float(total * 2 / pi.sqrt())


def gelu(x) -> np.ndarray:
    return np.array([t * 0.5 * (1.0 + erf(t / math.sqrt(2.0))) for t in np.ravel(x).tolist()])


def silu(x) -> np.ndarray:
    return np.array([t / (1.0 + math.exp(-t)) if t > -700 else 0.0 for t in np.ravel(x).tolist()])


def rms_norm(x, gain, eps: float = EPS) -> np.ndarray:
    out = []
    for row in _rows(x):
        ms = math.fsum(t * t for t in row) / len(row)
        r = math.sqrt(ms + eps)
        out.append([t / r * g for t, g in zip(row, _rows(gain))])
    return np.array(out)


def layer_norm(x, gain, bias, eps: float = EPS) -> np.ndarray:
    out = []
    g, b = _rows(gain), _rows(bias)
    for row in _rows(x):
        mu = math.fsum(row) / len(row)
        var = math.fsum((t - mu) ** 2 for t in row) / len(row)
        r = math.sqrt(var + eps)
        out.append([(t - mu) / r * gi + bi for t, gi, bi in zip(row, g, b)])
    return np.array(out)


def rope(x, positions, base: float = ROPE_BASE) -> np.ndarray:
    """Rotate pairs ``(2i, 2i+1)`` of ``x [n][heads][head_dim]``."""
    x = _rows(x)
    out = []
    for vecs, pos in zip(x, positions):
        rotated = []
        for v in vecs:
            hd = len(v)
            r = list(v)
            for i in range(hd // 2):
                theta = pos * base ** (-2.0 * i / hd)
                c, s = math.cos(theta), math.sin(theta)
                a, b = v[2 * i], v[2 * i + 1]
                r[2 * i] = a * c - b * s
                r[2 * i + 1] = a * s + b * c
            rotated.append(r)
        out.append(rotated)
    return np.array(out)


def _attention_rows(q, k, v, causal: bool) -> list:
    """q, k, v as [n][heads][hd] lists; returns [n][heads*hd]."""
    n, heads, hd = len(q), len(q[0]), len(q[0][0])
    out = []
    for i in range(n):
        row = []
        for h in range(heads):
            visible = range(i + 1) if causal else range(len(k))
            scores = [sum(q[i][h][d] * k[j][h][d] for d in range(hd)) / math.sqrt(hd) for j in visible]
            w = softmax(scores).tolist()
            for d in range(hd):
                row.append(sum(w[t] * v[j][h][d] for t, j in enumerate(visible)))
        out.append(row)
    return out


def _split_heads(x: list, heads: int) -> list:
    hd = len(x[0]) // heads
    return [[r[h * hd:(h + 1) * hd] for h in range(heads)] for r in x]


def causal_attention(x, wq, wk, wv, wo, num_heads: int, base: float = ROPE_BASE) -> np.ndarray:
    x = _rows(x)
    _cap("sequence", len(x), MAX_SEQ)
    _cap("width", len(x[0]), MAX_DIM)
    pos = list(range(len(x)))
    q = rope(_split_heads(_mm(x, _unpack(wq)), num_heads), pos, base).tolist()
    k = rope(_split_heads(_mm(x, _unpack(wk)), num_heads), pos, base).tolist()
    v = _split_heads(_mm(x, _unpack(wv)), num_heads)
    return matmul(_attention_rows(q, k, v, causal=True), _unpack(wo))


def swiglu(x, w_gate, w_up, w_down) -> np.ndarray:
    g = _mm(_rows(x), _unpack(w_gate))
    u = _mm(_rows(x), _unpack(w_up))
    h = [[a / (1.0 + math.exp(-a)) * b for a, b in zip(gr, ur)] for gr, ur in zip(g, u)]
    return matmul(h, _unpack(w_down))


def depthwise_conv(grid, kernel, bias=None, stride: int = 1, padding: int = 1) -> np.ndarray:
    """Sliding window over ``grid [h][w][c]`` with per-channel ``kernel [c][k][k]``."""
    g = _rows(grid)
    kern = _rows(kernel)
    h, w, c = len(g), len(g[0]), len(g[0][0])
    _cap("grid side", max(h, w), MAX_SEQ)
    k = len(kern[0])
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = [[[0.0] * c for _ in range(ow)] for _ in range(oh)]
    for i in range(oh):
        for j in range(ow):
            for ch in range(c):
                s = 0.0
                for dy in range(k):
                    for dx in range(k):
                        y = i * stride + dy - padding
                        xx = j * stride + dx - padding
                        if 0 <= y < h and 0 <= xx < w:
                            s += g[y][xx][ch] * kern[ch][dy][dx]
                out[i][j][ch] = s + (0.0 if bias is None else float(bias[ch]))
    return np.array(out)


def pointwise_conv(grid, weight, bias=None) -> np.ndarray:
    g = _rows(grid)
    h, w = len(g), len(g[0])
    flat = [cell for row in g for cell in row]
    y = matmul(flat, weight)
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)
    return y.reshape(h, w, -1)


def decoder_forward(inputs, weights) -> np.ndarray:
    """Logits for every position, recomputed from scratch (no cache)."""
    cfg = weights.config
    _cap("vocab", cfg.vocab_size, MAX_VOCAB)
    _cap("dim", cfg.dim, MAX_DIM)
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        table = _unpack(weights.token_embedding)
        x = [list(table[int(i)]) for i in inputs]
    else:
        x = _rows(inputs)
    _cap("sequence", len(x), MAX_SEQ)
    for b in weights.blocks:
        h = rms_norm(x, b.norm1.gain, b.norm1.eps).tolist()
        a = causal_attention(h, b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo, b.attn.num_heads).tolist()
        x = [[p + q for p, q in zip(r1, r2)] for r1, r2 in zip(x, a)]
        h = rms_norm(x, b.norm2.gain, b.norm2.eps).tolist()
        f = swiglu(h, b.ffn.w_gate, b.ffn.w_up, b.ffn.w_down).tolist()
        x = [[p + q for p, q in zip(r1, r2)] for r1, r2 in zip(x, f)]
    h = rms_norm(x, weights.final_norm.gain, weights.final_norm.eps).tolist()
    return matmul(h, weights.lm_head)


def greedy_decode(prompt_input, weights, max_new_tokens: int) -> list:
    """Greedy continuation, recomputing all logits at every step."""
    prompt_input = np.asarray(prompt_input)
    out = []
    for _ in range(max_new_tokens):
        if prompt_input.ndim == 1:
            seq = np.concatenate([prompt_input, np.asarray(out, dtype=np.int64)])
        else:
            emb = np.asarray(_unpack(weights.token_embedding))
            seq = np.concatenate([prompt_input, emb[out].reshape(-1, prompt_input.shape[1])], axis=0)
        logits = decoder_forward(seq, weights)[-1].tolist()
        best = 0
        for i, v in enumerate(logits):
            if v > logits[best]:
                best = i
        out.append(best)
    return out


def project(f, spec, weights) -> np.ndarray:
    """Projector reference: stage by stage on a nested-list grid."""
    f = _rows(f)
    g = int(round(math.sqrt(len(f))))
    if g * g != len(f):
        raise ValueError("token count is not square")
    grid = np.array(f).reshape(g, g, -1)
    stages = spec.stages
    for i, (st, sw) in enumerate(zip(stages, weights.stages)):
        if hasattr(sw, "conv"):
            grid = pointwise_conv(grid, sw.conv.weight, sw.conv.bias)
            if i + 1 < len(stages) and hasattr(weights.stages[i + 1], "conv"):
                grid = gelu(grid).reshape(grid.shape)
            continue
        y = depthwise_conv(grid, sw.dw.weight, sw.dw.bias, sw.dw.stride, sw.dw.padding)
        shape = y.shape
        y = layer_norm(y.reshape(-1, shape[2]), sw.ln1.gain, sw.ln1.bias, sw.ln1.eps).reshape(shape)
        y = pointwise_conv(y, sw.pw.weight, sw.pw.bias)
        shape = y.shape
        y = layer_norm(y.reshape(-1, shape[2]), sw.ln2.gain, sw.ln2.bias, sw.ln2.eps).reshape(shape)
        grid = y + grid if st.residual else y
    return grid.reshape(-1, grid.shape[-1])


def encode_image(image, cfg, weights) -> np.ndarray:
    """ViT reference: explicit patch loops, bidirectional attention, GELU MLP."""
    img = _rows(image)
    p, g = cfg.patch_size, cfg.grid
    _cap("patches", g * g + 1, MAX_SEQ)
    patches = []
    for gy in range(g):
        for gx in range(g):
            vec = []
            for dy in range(p):
                for dx in range(p):
                    vec.extend(img[gy * p + dy][gx * p + dx])
            patches.append(vec)
    x = _mm(patches, _rows(weights.patch_projection))
    if cfg.use_class_token:
        x = [_rows(weights.class_token)] + x
    pos = _rows(weights.position_embedding)
    x = [[a + b for a, b in zip(r, q)] for r, q in zip(x, pos)]
    heads = cfg.num_heads
    depth = cfg.num_layers + 1 + cfg.feature_layer
    for b in weights.blocks[:depth]:
        h = layer_norm(x, b.ln1.gain, b.ln1.bias, b.ln1.eps).tolist()
        q = _split_heads((matmul(h, b.wq) + np.asarray(b.bq, np.float64)).tolist(), heads)
        k = _split_heads((matmul(h, b.wk) + np.asarray(b.bk, np.float64)).tolist(), heads)
        v = _split_heads((matmul(h, b.wv) + np.asarray(b.bv, np.float64)).tolist(), heads)
        a = (matmul(_attention_rows(q, k, v, causal=False), b.wo) + np.asarray(b.bo, np.float64)).tolist()
        x = [[s + t for s, t in zip(r1, r2)] for r1, r2 in zip(x, a)]
        h = layer_norm(x, b.ln2.gain, b.ln2.bias, b.ln2.eps).tolist()
        m = (matmul(h, b.fc1) + np.asarray(b.b1, np.float64))
        m = gelu(m).reshape(m.shape)
        m = (matmul(m, b.fc2) + np.asarray(b.b2, np.float64)).tolist()
        x = [[s + t for s, t in zip(r1, r2)] for r1, r2 in zip(x, m)]
    return np.array(x[int(cfg.use_class_token):])
