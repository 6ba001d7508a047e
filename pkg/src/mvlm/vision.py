"""ViT-style patch encoder producing the visual embeddings fed to the projector."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .blocks import LayerNormParams, attend, layer_norm
from .errors import DimensionError
from .tensor import Tensor, gelu, matmul

MLP_RATIO = 4


@dataclass(frozen=True)
class VisionConfig:
    image_size: int
    patch_size: int
    embed_dim: int
    num_layers: int
    num_heads: int
    use_class_token: bool = True
    channels: int = 3
    # hidden state handed to the projector: -1 final block, -2 penultimate, ...
    feature_layer: int = -1

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise DimensionError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise DimensionError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if not -self.num_layers <= self.feature_layer < 0:
            raise DimensionError(f"feature_layer {self.feature_layer} outside [-{self.num_layers}, -1]")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def num_positions(self) -> int:
        return self.num_patches + int(self.use_class_token)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


CLIP_VIT_L14_336 = VisionConfig(image_size=336, patch_size=14, embed_dim=1024, num_layers=24, num_heads=16)
TOY_VISION = VisionConfig(image_size=84, patch_size=14, embed_dim=32, num_layers=2, num_heads=4)

PRESETS = {"clip_vit_l14_336": CLIP_VIT_L14_336, "toy": TOY_VISION}


@dataclass(eq=False)
class VisionBlock:
    ln1: LayerNormParams
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2: LayerNormParams
    fc1: np.ndarray  # [d, 4d]
    b1: np.ndarray
    fc2: np.ndarray  # [4d, d]
    b2: np.ndarray


@dataclass(eq=False)
class VisionWeights:
    config: VisionConfig
    patch_projection: np.ndarray  # [P*P*C, D]
    position_embedding: np.ndarray  # [N_v (+1), D]
    blocks: list[VisionBlock]
    class_token: Optional[np.ndarray] = None

    def __post_init__(self):
        cfg = self.config
        if self.patch_projection.shape != (cfg.patch_dim, cfg.embed_dim):
            raise DimensionError(f"patch projection {self.patch_projection.shape} "
                                 f"!= {(cfg.patch_dim, cfg.embed_dim)}")
        if self.position_embedding.shape != (cfg.num_positions, cfg.embed_dim):
            raise DimensionError(f"position embedding {self.position_embedding.shape} "
                                 f"!= {(cfg.num_positions, cfg.embed_dim)}")
        if len(self.blocks) != cfg.num_layers:
            raise DimensionError(f"{len(self.blocks)} blocks for {cfg.num_layers} layers")
        if cfg.use_class_token != (self.class_token is not None):
            raise DimensionError("class token presence disagrees with config")


def patchify(image: Tensor, patch: int) -> np.ndarray:
    """``[H, W, C]`` -> ``[N_v, P*P*C]`` with patches in row-major grid order."""
    h, w, c = image.shape
    g_h, g_w = h // patch, w // patch
    x = image.reshape(g_h, patch, g_w, patch, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(g_h * g_w, patch * patch * c))


def _encoder_block(x: np.ndarray, b: VisionBlock, heads: int) -> np.ndarray:
    n, d = x.shape
    hd = d // heads
    h = layer_norm(x, b.ln1)
    q = (matmul(h, b.wq) + b.bq).reshape(n, heads, hd)
    k = (matmul(h, b.wk) + b.bk).reshape(n, heads, hd)
    v = (matmul(h, b.wv) + b.bv).reshape(n, heads, hd)
    x = x + matmul(attend(q, k, v, causal_offset=None).reshape(n, d), b.wo) + b.bo
    h = layer_norm(x, b.ln2)
    return x + matmul(gelu(matmul(h, b.fc1) + b.b1), b.fc2) + b.b2


def encode_image(image: Tensor, cfg: VisionConfig, w: VisionWeights) -> Tensor:
    """Visual embeddings ``[N_v, D_v]``; the class token is encoded but not returned."""
    image = np.asarray(image, dtype=np.float32)
    if image.shape != (cfg.image_size, cfg.image_size, cfg.channels):
        raise DimensionError(f"image {image.shape} != {(cfg.image_size, cfg.image_size, cfg.channels)}")
    x = matmul(patchify(image, cfg.patch_size), w.patch_projection)
    if cfg.use_class_token:
        x = np.concatenate([w.class_token[None, :].astype(np.float32), x], axis=0)
    x = (x + w.position_embedding).astype(np.float32)
    depth = cfg.num_layers + 1 + cfg.feature_layer
    for block in w.blocks[:depth]:
        x = _encoder_block(x, block, cfg.num_heads)
    return np.ascontiguousarray(x[int(cfg.use_class_token):])


def rir_config(base: VisionConfig, factor: int = 2) -> VisionConfig:
    """Reduced-input-resolution variant: same patch size, image side divided by ``factor``."""
    if base.image_size % (factor * base.patch_size):
        raise DimensionError(f"image size {base.image_size} not divisible by {factor} x {base.patch_size}")
    return replace(base, image_size=base.image_size // factor)


_RAW_HEADER = struct.Struct("<iii")


def write_raw_image(path, image: Tensor) -> None:
    """Raw float image: ``H, W, C`` as little-endian int32 then H*W*C little-endian float32."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim != 3:
        raise DimensionError(f"raw images are [H, W, C], got {image.shape}")
    Path(path).write_bytes(_RAW_HEADER.pack(*image.shape) + image.tobytes(order="C"))


def read_raw_image(path) -> Tensor:
    data = Path(path).read_bytes()
    if len(data) < _RAW_HEADER.size:
        raise DimensionError(f"{path}: too short for a raw image header")
    h, w, c = _RAW_HEADER.unpack_from(data)
    if min(h, w, c) < 1 or len(data) != _RAW_HEADER.size + 4 * h * w * c:
        raise DimensionError(f"{path}: header {h}x{w}x{c} does not match {len(data)} bytes")
    return np.frombuffer(data, dtype="<f4", offset=_RAW_HEADER.size).reshape(h, w, c).astype(np.float32)
