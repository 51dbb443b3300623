"""Transformer baseline for voxel permeability regression.

Tokens are non-overlapping cubic patches; a learned positional embedding on a
fixed 8x8x8 base grid is trilinearly resized to whatever token grid the patch
size produces, then three pre-normalized attention blocks feed a pooled linear
head. Attention materializes an L x L score matrix per head, which is the term
the activation-memory benchmark tracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .modelbase import RegressionModel
from .rng import stream

__all__ = [
    "ViTConfig",
    "ViTModel",
    "count_parameters",
    "interpolate_pos_embed",
    "scaled_attention",
]


@dataclass(frozen=True)
class ViTConfig:
    patch: int = 8
    channels: int = 64
    depth: int = 3
    heads: int = 8
    expansion: int = 4
    base_grid: int = 8
    dropout: float = 0.1
    side: int = 64

    def validate(self) -> None:
        for field in ("patch", "channels", "depth", "heads", "expansion",
                      "base_grid", "side"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive, got {getattr(self, field)}")
        if self.channels % self.heads:
            raise ConfigError(
                f"channels {self.channels} not divisible by heads {self.heads}")
        if self.side % self.patch:
            raise ConfigError(f"side {self.side} not divisible by patch {self.patch}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def tokens_per_side(self) -> int:
        return self.side // self.patch

    @property
    def token_count(self) -> int:
        return self.tokens_per_side ** 3


def count_parameters(config: ViTConfig) -> int:
    """Closed-form trainable parameter count."""
    c, e = config.channels, config.expansion
    embed = c * config.patch ** 3 + c
    pos = c * config.base_grid ** 3
    qkv = c * 3 * c + 3 * c
    proj = c * c + c
    mlp = (c * e * c + e * c) + (e * c * c + c)
    block = 2 * (2 * c) + qkv + proj + mlp
    return embed + pos + config.depth * block + 2 * c + (c + 1)


def _axis_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) linear-interpolation matrix with endpoints aligned.

    Source coordinates are i*(src-1)/(dst-1); a single target sample lands at
    the source center. Rows sum to 1, and dst == src yields the identity.
    """
    w = np.zeros((dst, src))
    for i in range(dst):
        pos = (src - 1) / 2.0 if dst == 1 else i * (src - 1) / (dst - 1)
        lo = min(int(np.floor(pos)), src - 1)
        hi = min(lo + 1, src - 1)
        frac = pos - lo
        w[i, lo] += 1.0 - frac
        w[i, hi] += frac
    return w


def interpolate_pos_embed(base: Tensor, grid: tuple[int, int, int]) -> Tensor:
    """Trilinearly resize a (C, S, S, S) embedding to an (L, C) token table.

    The resize is a fixed linear map, so gradients flow back to the base
    embedding. Token order matches C-order flattening of the grid.
    """
    c, *extent = base.data.shape
    if base.data.ndim != 4 or len(set(extent)) != 1:
        raise ConfigError(f"base embedding must be (C, S, S, S), got {base.data.shape}")
    if any(t < 1 for t in grid):
        raise ConfigError(f"target grid extents must be positive, got {grid}")
    s = extent[0]
    wd, wh, ww = (_axis_weights(s, t) for t in grid)
    weights = np.einsum("ai,bj,ck->abcijk", wd, wh, ww)
    weights = weights.reshape(int(np.prod(grid)), s ** 3)
    flat = ad.permute(ad.reshape(base, (c, s ** 3)), (1, 0))
    return ad.matmul(ad.constant(weights), flat)


def scaled_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention over (B, h, L, d) heads; returns (context, attn).

    The 1/sqrt(d) temperature is folded into the queries before the score
    product. The attention matrix is returned so its normalization can be
    checked directly.
    """
    d = q.data.shape[-1]
    scores = ad.matmul(ad.scale(q, d ** -0.5), ad.permute(k, (0, 1, 3, 2)))
    attn = ad.softmax(scores)
    return ad.matmul(attn, v), attn


class ViTBlockParams:
    """Trainable tensors for one pre-norm attention block."""

    ORDER = ("norm1_gain", "norm1_shift", "qkv_w", "qkv_b", "proj_w", "proj_b",
             "norm2_gain", "norm2_shift", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")

    __slots__ = ORDER

    def __init__(self, channels: int, expansion: int, rng: np.random.Generator) -> None:
        c, e = channels, expansion
        bound = 1.0 / np.sqrt(c)
        self.norm1_gain = ad.parameter(np.ones(c))
        self.norm1_shift = ad.parameter(np.zeros(c))
        self.qkv_w = ad.parameter(rng.uniform(-bound, bound, (c, 3 * c)))
        self.qkv_b = ad.parameter(np.zeros(3 * c))
        self.proj_w = ad.parameter(rng.uniform(-bound, bound, (c, c)))
        self.proj_b = ad.parameter(np.zeros(c))
        self.norm2_gain = ad.parameter(np.ones(c))
        self.norm2_shift = ad.parameter(np.zeros(c))
        self.mlp_w1 = ad.parameter(rng.uniform(-bound, bound, (c, e * c)))
        self.mlp_b1 = ad.parameter(np.zeros(e * c))
        self.mlp_w2 = ad.parameter(
            rng.uniform(-1.0 / np.sqrt(e * c), 1.0 / np.sqrt(e * c), (e * c, c)))
        self.mlp_b2 = ad.parameter(np.zeros(c))

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{name}", getattr(self, name)) for name in self.ORDER]


class ViTModel(RegressionModel):
    """Patch transformer; construct with ``initialize``."""

    def __init__(self, config: ViTConfig, embed_w: Tensor, embed_b: Tensor,
                 pos_embed: Tensor, blocks: list[ViTBlockParams],
                 final_gain: Tensor, final_shift: Tensor, head_w: Tensor,
                 head_b: Tensor) -> None:
        config.validate()
        self.config = config
        self.embed_w = embed_w
        self.embed_b = embed_b
        self.pos_embed = pos_embed
        self.blocks = blocks
        self.final_gain = final_gain
        self.final_shift = final_shift
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def initialize(cls, config: ViTConfig, seed: int) -> "ViTModel":
        """Deterministic initialization from the model seed stream.

        Weight matrices draw uniform in +-(fan-in)^(-1/2), the positional
        embedding draws normal(0, 0.02), and the head starts at zero so the
        first prediction is zero for any input.
        """
        config.validate()
        rng = stream(seed, "vit-init")
        c, p = config.channels, config.patch
        embed_bound = 1.0 / np.sqrt(p ** 3)
        embed_w = ad.parameter(rng.uniform(-embed_bound, embed_bound, (c, 1, p, p, p)))
        embed_b = ad.parameter(np.zeros(c))
        g = config.base_grid
        pos_embed = ad.parameter(rng.normal(0.0, 0.02, (c, g, g, g)))
        blocks = [ViTBlockParams(c, config.expansion, rng)
                  for _ in range(config.depth)]
        final_gain = ad.parameter(np.ones(c))
        final_shift = ad.parameter(np.zeros(c))
        head_w = ad.parameter(np.zeros(c))
        head_b = ad.parameter(np.asarray(0.0))
        return cls(config, embed_w, embed_b, pos_embed, blocks, final_gain,
                   final_shift, head_w, head_b)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        items = [("embed.weight", self.embed_w), ("embed.bias", self.embed_b),
                 ("pos_embed", self.pos_embed)]
        for i, block in enumerate(self.blocks):
            items.extend(block.named(f"block{i}"))
        items.extend([
            ("final_norm.gain", self.final_gain),
            ("final_norm.shift", self.final_shift),
            ("head.weight", self.head_w),
            ("head.bias", self.head_b),
        ])
        return items

    def _split_heads(self, x: Tensor) -> Tensor:
        b, l, c = x.data.shape
        h = self.config.heads
        return ad.permute(ad.reshape(x, (b, l, h, c // h)), (0, 2, 1, 3))

    def _attention(self, z_norm: Tensor, params: ViTBlockParams) -> Tensor:
        b, l, c = z_norm.data.shape
        qkv = ad.add(ad.matmul(z_norm, params.qkv_w), params.qkv_b)
        q = self._split_heads(ad.take(qkv, 0, c, axis=2))
        k = self._split_heads(ad.take(qkv, c, 2 * c, axis=2))
        v = self._split_heads(ad.take(qkv, 2 * c, 3 * c, axis=2))
        ctx, _ = scaled_attention(q, k, v)
        merged = ad.reshape(ad.permute(ctx, (0, 2, 1, 3)), (b, l, c))
        return ad.add(ad.matmul(merged, params.proj_w), params.proj_b)

    def _block_forward(self, z: Tensor, params: ViTBlockParams, train: bool,
                       rng: np.random.Generator | None) -> Tensor:
        z_norm = ad.layer_norm(z, params.norm1_gain, params.norm1_shift, axis=2)
        z = ad.add(z, self._attention(z_norm, params))
        z_norm2 = ad.layer_norm(z, params.norm2_gain, params.norm2_shift, axis=2)
        hidden = ad.gelu(ad.add(ad.matmul(z_norm2, params.mlp_w1), params.mlp_b1))
        hidden = ad.dropout(hidden, self.config.dropout, rng, train)
        mlp_out = ad.add(ad.matmul(hidden, params.mlp_w2), params.mlp_b2)
        return ad.add(z, mlp_out)

    def forward(self, x: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Map a (B, 1, n, n, n) real-encoded batch to (B, 1) predictions."""
        cfg = self.config
        if x.data.ndim != 5 or x.data.shape[2:] != (cfg.side,) * 3:
            raise ConfigError(
                f"input shape {x.data.shape} does not match side {cfg.side}")
        if train and cfg.dropout > 0.0 and rng is None:
            raise ConfigError("training forward with dropout needs an rng")
        grid = ad.patchify(x, self.embed_w, self.embed_b, cfg.patch)
        b = x.data.shape[0]
        g = cfg.tokens_per_side
        tokens = ad.permute(ad.reshape(grid, (b, cfg.channels, g ** 3)), (0, 2, 1))
        pos = interpolate_pos_embed(self.pos_embed, (g, g, g))
        z = ad.add(tokens, pos)
        for params in self.blocks:
            z = self._block_forward(z, params, train, rng)
        z = ad.layer_norm(z, self.final_gain, self.final_shift, axis=2)
        pooled = ad.mean_over(z, (1,))
        return ad.affine(pooled, self.head_w, self.head_b)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation-mode forward outside any tape; returns a (B,) array."""
        out = self.forward(ad.constant(x))
        return out.data[:, 0].copy()
