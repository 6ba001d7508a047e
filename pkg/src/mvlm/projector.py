"""Vision-to-language projectors built from a declarative stage list.

A spec is a sequence of stages, each either a pointwise conv (``PW``) or a
depthwise-then-pointwise unit (``DwPw``)::

    PW:    y = PW(x)                      (GELU between consecutive PWs)
    DwPw:  y = LN(PW(LN(DW(x)))) [+ x]    (DW stride 1 or 2, 3x3, padding 1)

The first stage maps the visual width to the language width; every later
stage keeps it. Stride-1 DwPw stages whose width is unchanged carry the
residual. Tokens are laid on a square grid row-major.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .blocks import ConvParams, LayerNormParams, conv_on_grid, layer_norm
from .errors import DimensionError, GrammarError, GridError
from .tensor import Tensor, gelu

DW_KERNEL = 3


@dataclass(frozen=True)
class PW:
    out_channels: int


@dataclass(frozen=True)
class DwPw:
    stride: int
    residual: bool
    out_channels: int


Stage = Union[PW, DwPw]


@dataclass(frozen=True)
class ProjectorSpec:
    stages: tuple
    input_dim: int
    output_dim: int

    def __post_init__(self):
        if not self.stages:
            raise GrammarError("a projector needs at least one stage")
        width = self.input_dim
        for i, st in enumerate(self.stages):
            if isinstance(st, DwPw):
                if st.stride not in (1, 2):
                    raise GrammarError(f"stage {i}: stride must be 1 or 2, got {st.stride}")
                if st.residual and st.stride != 1:
                    raise GrammarError(f"stage {i}: residual requested on a stride-2 stage")
                if st.residual and st.out_channels != width:
                    raise GrammarError(f"stage {i}: residual needs equal widths, got {width}->{st.out_channels}")
            elif not isinstance(st, PW):
                raise GrammarError(f"stage {i}: unknown stage {st!r}")
            width = st.out_channels
        if width != self.output_dim:
            raise GrammarError(f"stages end at width {width}, spec says {self.output_dim}")

    @property
    def downsample_stages(self) -> int:
        return sum(1 for st in self.stages if isinstance(st, DwPw) and st.stride == 2)

    def output_tokens(self, n_tokens: int) -> int:
        return n_tokens // 4 ** self.downsample_stages

    def to_text(self) -> str:
        """One-line grammar, e.g. ``PWx2 DW1PWx1 DW2PWx1``."""
        rebuilt = _build(_kinds(self), self.input_dim, self.output_dim)
        if rebuilt != self:
            raise GrammarError("spec uses non-default residual or width placement; not expressible as text")
        runs: list[list] = []
        for st in self.stages:
            tag = "PW" if isinstance(st, PW) else f"DW{st.stride}PW"
            if runs and runs[-1][0] == tag:
                runs[-1][1] += 1
            else:
                runs.append([tag, 1])
        return " ".join(f"{tag}x{count}" for tag, count in runs)


def _kinds(spec: ProjectorSpec) -> list:
    return ["PW" if isinstance(st, PW) else st.stride for st in spec.stages]


def _build(kinds, d_v: int, d_t: int) -> ProjectorSpec:
    stages = []
    width = d_v
    for kind in kinds:
        if kind == "PW":
            stages.append(PW(d_t))
        else:
            stages.append(DwPw(stride=kind, residual=(kind == 1 and width == d_t), out_channels=d_t))
        width = d_t
    return ProjectorSpec(tuple(stages), d_v, d_t)


_TOKEN = re.compile(r"^(PW|DW([12])PW)x(\d+)$")


def from_text(text: str, d_v: int, d_t: int) -> ProjectorSpec:
    kinds = []
    for tok in text.split():
        m = _TOKEN.match(tok)
        if not m:
            raise GrammarError(f"cannot parse projector stage {tok!r}")
        kinds += ["PW" if m.group(2) is None else int(m.group(2))] * int(m.group(3))
    return _build(kinds, d_v, d_t)


def table8_spec(a: int, b: int, c: int, order: str = "stride1_first", *,
                d_v: int, d_t: int) -> ProjectorSpec:
    """``[PW]xa [DW(k=1)PW]xb [DW(k=2)PW]xc``; ``order="stride2_first"`` swaps the DW groups."""
    if min(a, b, c) < 0:
        raise GrammarError("stage counts must be non-negative")
    if order == "stride1_first":
        kinds = ["PW"] * a + [1] * b + [2] * c
    elif order == "stride2_first":
        kinds = ["PW"] * a + [2] * c + [1] * b
    else:
        raise GrammarError(f"unknown stage order {order!r}")
    return _build(kinds, d_v, d_t)


def ldp_spec(d_v: int, d_t: int) -> ProjectorSpec:
    """Lightweight downsample projector: two PWs, a residual stride-1 DwPw, a stride-2 DwPw."""
    return table8_spec(2, 1, 1, d_v=d_v, d_t=d_t)


def mlp_spec(d_v: int, d_t: int) -> ProjectorSpec:
    return table8_spec(2, 0, 0, d_v=d_v, d_t=d_t)


# (a, b, c, order, visual tokens out of 576) for the five ablation rows
ABLATION_ROWS = (
    (2, 0, 0, "stride1_first", 576),
    (0, 1, 1, "stride1_first", 144),
    (2, 1, 1, "stride1_first", 144),
    (2, 3, 1, "stride1_first", 144),
    (2, 1, 1, "stride2_first", 144),
)


def projector_param_count(spec: ProjectorSpec) -> int:
    total = 0
    width = spec.input_dim
    for st in spec.stages:
        out = st.out_channels
        if isinstance(st, PW):
            total += width * out + out
        else:
            total += width * DW_KERNEL ** 2 + width  # depthwise + bias
            total += 2 * width  # LN after DW
            total += width * out + out  # pointwise + bias
            total += 2 * out  # LN after PW
        width = out
    return total


@dataclass(eq=False)
class PwWeights:
    conv: ConvParams


@dataclass(eq=False)
class DwPwWeights:
    dw: ConvParams
    ln1: LayerNormParams
    pw: ConvParams
    ln2: LayerNormParams


@dataclass(eq=False)
class ProjectorWeights:
    spec: ProjectorSpec
    stages: list

    def __post_init__(self):
        if len(self.stages) != len(self.spec.stages):
            raise DimensionError(f"{len(self.stages)} weight stages for {len(self.spec.stages)} spec stages")
        width = self.spec.input_dim
        for i, (st, sw) in enumerate(zip(self.spec.stages, self.stages)):
            pw = sw.conv if isinstance(st, PW) else sw.pw
            if pw.weight.shape != (width, st.out_channels):
                raise DimensionError(f"stage {i}: pointwise weight {pw.weight.shape} "
                                     f"!= {(width, st.out_channels)}")
            if isinstance(st, DwPw) and (sw.dw.weight.shape[0] != width or sw.dw.stride != st.stride):
                raise DimensionError(f"stage {i}: depthwise weight {sw.dw.weight.shape} / stride "
                                     f"{sw.dw.stride} disagree with spec")
            width = st.out_channels

    def num_elements(self) -> int:
        total = 0
        for sw in self.stages:
            convs = [sw.conv] if isinstance(sw, PwWeights) else [sw.dw, sw.pw]
            for conv in convs:
                total += conv.weight.size + (0 if conv.bias is None else conv.bias.size)
            if isinstance(sw, DwPwWeights):
                total += sw.ln1.gain.size + sw.ln1.bias.size + sw.ln2.gain.size + sw.ln2.bias.size
        return total


def project(f: Tensor, spec: ProjectorSpec, w: ProjectorWeights) -> Tensor:
    """Map visual embeddings ``[N_v, D_v]`` to language tokens ``[N_v / 4**s, D_t]``."""
    f = np.asarray(f, dtype=np.float32)
    if f.ndim != 2 or f.shape[1] != spec.input_dim:
        raise DimensionError(f"projector expects [N_v, {spec.input_dim}], got {f.shape}")
    g = math.isqrt(f.shape[0])
    if g * g != f.shape[0]:
        raise GridError(f"{f.shape[0]} tokens do not form a square grid")
    x = f.reshape(g, g, spec.input_dim)
    stages = spec.stages
    for i, (st, sw) in enumerate(zip(stages, w.stages)):
        if isinstance(st, PW):
            x = conv_on_grid(x, sw.conv)
            if i + 1 < len(stages) and isinstance(stages[i + 1], PW):
                x = gelu(x)
            continue
        if st.stride == 2 and x.shape[0] % 2:
            raise GridError(f"stage {i}: grid side {x.shape[0]} is odd before a stride-2 stage")
        y = layer_norm(conv_on_grid(x, sw.dw, require_square=True), sw.ln1)
        y = layer_norm(conv_on_grid(y, sw.pw), sw.ln2)
        x = y + x if st.residual else y
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
