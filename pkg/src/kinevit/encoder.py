"""Transformer encoder: patch projection, class token, learned position
embeddings, pre-norm attention/MLP blocks, and a linear readout head.

The encoded vector is the final-normed class token mapped to the output
dimension.  Parameters live in a flat name -> Tensor dict so the optimizer,
checkpointing, and parameter counting all see the same scalars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import trunc_normal

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry of the encoder.

    patch_len: length of each flattened input patch (or frame vector)
    num_tokens: number of input patches N (class token is extra)
    dim: model width D, must be divisible by heads
    depth: number of transformer blocks
    heads: attention heads
    out_dim: length of the encoded output vector
    """

    patch_len: int
    num_tokens: int
    dim: int
    depth: int
    heads: int
    out_dim: int

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("patch_len", "num_tokens", "dim", "depth", "heads", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def mlp_dim(self) -> int:
        return 4 * self.dim


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "enc.") -> dict[str, Tensor]:
    """Truncated-normal(0, 0.02) weights, zero biases, zero class token and
    position table, unit layer-norm scales."""
    d = cfg.dim
    p: dict[str, Tensor] = {}

    def w(name, shape):
        p[prefix + name] = Tensor(trunc_normal(rng, shape, std=0.02), check=False)

    def zero(name, shape):
        p[prefix + name] = Tensor(np.zeros(shape), check=False)

    def one(name, shape):
        p[prefix + name] = Tensor(np.ones(shape), check=False)

    w("patch_proj_w", (cfg.patch_len, d))
    zero("patch_proj_b", (d,))
    zero("cls_token", (d,))
    zero("pos_embed", (cfg.num_tokens + 1, d))
    for i in range(cfg.depth):
        blk = f"block{i}."
        one(blk + "ln1_scale", (d,))
        zero(blk + "ln1_shift", (d,))
        w(blk + "qkv_w", (d, 3 * d))
        zero(blk + "qkv_b", (3 * d,))
        w(blk + "attn_out_w", (d, d))
        zero(blk + "attn_out_b", (d,))
        one(blk + "ln2_scale", (d,))
        zero(blk + "ln2_shift", (d,))
        w(blk + "mlp1_w", (d, cfg.mlp_dim))
        zero(blk + "mlp1_b", (cfg.mlp_dim,))
        w(blk + "mlp2_w", (cfg.mlp_dim, d))
        zero(blk + "mlp2_b", (d,))
    one("final_ln_scale", (d,))
    zero("final_ln_shift", (d,))
    w("head_w", (d, cfg.out_dim))
    return p


def count_params(cfg: EncoderConfig) -> int:
    """Closed-form scalar count of every encoder parameter tensor."""
    d = cfg.dim
    total = cfg.patch_len * d + d          # patch projection + bias
    total += d                             # class token
    total += (cfg.num_tokens + 1) * d      # position table
    per_block = (
        2 * (2 * d)                        # two layer norms, scale + shift
        + d * 3 * d + 3 * d                # qkv projection
        + d * d + d                        # attention output projection
        + d * cfg.mlp_dim + cfg.mlp_dim    # mlp in
        + cfg.mlp_dim * d + d              # mlp out
    )
    total += cfg.depth * per_block
    total += 2 * d                         # final norm
    total += d * cfg.out_dim               # readout head (no bias)
    return total


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ad.sqrt(var + LN_EPS) * scale + shift


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention, softmax(q k^T / sqrt(d_head)) v.

    Operands are (tokens, d_head) with optional leading batch/head axes;
    each row of attention weights sums to one.
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape != k.shape:
        raise ValueError(f"q and k shapes differ: {q.shape} vs {k.shape}")
    if v.shape[:-1] != k.shape[:-1]:
        raise ValueError(f"v tokens {v.shape} do not match k {k.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = ad.matmul(q, k.mT) * scale
    return ad.matmul(ad.softmax_rows(scores), v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape((b, t, heads, d // heads)).transpose((0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.transpose((0, 2, 1, 3)).reshape((b, t, h * dh))


def encoder_tokens(params: dict[str, Tensor], cfg: EncoderConfig, patches, prefix: str = "enc.") -> Tensor:
    """Final-normed token matrix, class token first: (B, N+1, D)."""
    patches = ad.as_tensor(patches)
    single = patches.ndim == 2
    x = patches.reshape((1,) + patches.shape) if single else patches
    b, n, plen = x.shape
    if plen != cfg.patch_len:
        raise ValueError(f"patch length {plen} does not match config {cfg.patch_len}")
    if n != cfg.num_tokens:
        raise ValueError(
            f"got {n} patches but position table expects {cfg.num_tokens}"
        )

    def p(name):
        return params[prefix + name]

    tokens = ad.matmul(x, p("patch_proj_w")) + p("patch_proj_b")
    cls = ad.zeros((b, 1, cfg.dim)) + p("cls_token").reshape((1, 1, cfg.dim))
    tokens = ad.concat([cls, tokens], axis=1)
    tokens = tokens + p("pos_embed")

    for i in range(cfg.depth):
        blk = f"block{i}."
        h = layer_norm(tokens, p(blk + "ln1_scale"), p(blk + "ln1_shift"))
        qkv = ad.matmul(h, p(blk + "qkv_w")) + p(blk + "qkv_b")
        d = cfg.dim
        q = _split_heads(qkv[..., 0:d], cfg.heads)
        k = _split_heads(qkv[..., d : 2 * d], cfg.heads)
        v = _split_heads(qkv[..., 2 * d : 3 * d], cfg.heads)
        attended = _merge_heads(attention(q, k, v))
        tokens = tokens + (ad.matmul(attended, p(blk + "attn_out_w")) + p(blk + "attn_out_b"))
        h = layer_norm(tokens, p(blk + "ln2_scale"), p(blk + "ln2_shift"))
        h = ad.gelu(ad.matmul(h, p(blk + "mlp1_w")) + p(blk + "mlp1_b"))
        tokens = tokens + (ad.matmul(h, p(blk + "mlp2_w")) + p(blk + "mlp2_b"))

    tokens = layer_norm(tokens, p("final_ln_scale"), p("final_ln_shift"))
    return tokens.reshape((n + 1, cfg.dim)) if single else tokens


def encoder_forward(params: dict[str, Tensor], cfg: EncoderConfig, patches, prefix: str = "enc.") -> Tensor:
    """Encoded vector: readout head applied to the final class token."""
    patches = ad.as_tensor(patches)
    single = patches.ndim == 2
    tokens = encoder_tokens(params, cfg, patches, prefix=prefix)
    if single:
        cls = tokens[0:1, :]
        return ad.matmul(cls, params[prefix + "head_w"]).reshape((cfg.out_dim,))
    cls = tokens[:, 0, :]
    return ad.matmul(cls, params[prefix + "head_w"])
