"""Volumetric regression network built on axiswise selective scans.

Voxel grids are embedded as non-overlapping patch tokens on a coarse 3-D
grid. Each block normalizes the token field, generates per-token gate and
recurrence coefficients with one pointwise linear map, runs a first-order
linear recurrence along each configured spatial axis in both directions,
averages the directions and axes back together, and finishes with a gated
residual add plus a pointwise MLP. A final norm, global average pool, and
linear head produce one scalar per sample.
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
    "SCAN_AXIS_DIM", "ViMConfig", "ViMBlockParams", "ViMModel",
    "count_parameters", "generate_fields", "decay", "fuse_and_gate",
    "axis_fuse",
]

# Spatial axis names for a (B, C, D, H, W) token field; x is the fastest
# voxel axis and lands in the trailing dimension.
SCAN_AXIS_DIM = {"x": 4, "y": 3, "z": 2}


@dataclass(frozen=True)
class ViMConfig:
    """Architecture knobs; defaults give the 195841-parameter model."""

    patch: int = 8
    channels: int = 64
    blocks: int = 3
    expansion: int = 4
    side: int = 64
    scan_axes: tuple[str, ...] = ("x", "y", "z")

    def validate(self) -> None:
        if self.patch < 1:
            raise ConfigError(f"patch size must be positive, got {self.patch}")
        if self.side < 1 or self.side % self.patch:
            raise ConfigError(
                f"side {self.side} is not divisible by patch {self.patch}")
        if self.channels < 1:
            raise ConfigError(f"channel count must be positive, got {self.channels}")
        if self.blocks < 1:
            raise ConfigError(f"block count must be at least 1, got {self.blocks}")
        if self.expansion < 1:
            raise ConfigError(f"MLP expansion must be at least 1, got {self.expansion}")
        if not self.scan_axes:
            raise ConfigError("at least one scan axis is required")
        bad = [a for a in self.scan_axes if a not in SCAN_AXIS_DIM]
        if bad:
            raise ConfigError(f"scan axes must be drawn from ('x', 'y', 'z'), got {bad}")
        if len(set(self.scan_axes)) != len(self.scan_axes):
            raise ConfigError(f"scan axes repeat: {self.scan_axes}")

    @property
    def tokens_per_side(self) -> int:
        return self.side // self.patch


def count_parameters(config: ViMConfig) -> int:
    """Closed-form trainable scalar count for a config."""
    c, p, e = config.channels, config.patch, config.expansion
    embed = c * p**3 + c
    generator = c * 5 * c + 5 * c
    mlp = (c * e * c + e * c) + (e * c * c + c)
    per_block = generator + 2 * c + 2 * (2 * c) + mlp
    return embed + config.blocks * per_block + 2 * c + (c + 1)


class ViMBlockParams:
    """Parameters of one block, all float64 Tensors."""

    __slots__ = ("norm1_gain", "norm1_shift", "generator_w", "generator_b",
                 "a_raw", "d_skip", "norm2_gain", "norm2_shift",
                 "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")

    def __init__(self, channels: int, expansion: int, rng: np.random.Generator) -> None:
        c, e = channels, expansion
        bound = 1.0 / np.sqrt(c)
        self.norm1_gain = ad.parameter(np.ones(c))
        self.norm1_shift = ad.parameter(np.zeros(c))
        self.generator_w = ad.parameter(rng.uniform(-bound, bound, (5 * c, c)))
        self.generator_b = ad.parameter(np.zeros(5 * c))
        self.a_raw = ad.parameter(np.zeros(c))
        self.d_skip = ad.parameter(np.ones(c))
        self.norm2_gain = ad.parameter(np.ones(c))
        self.norm2_shift = ad.parameter(np.zeros(c))
        self.mlp_w1 = ad.parameter(rng.uniform(-bound, bound, (e * c, c)))
        self.mlp_b1 = ad.parameter(np.zeros(e * c))
        self.mlp_w2 = ad.parameter(rng.uniform(-1.0 / np.sqrt(e * c), 1.0 / np.sqrt(e * c), (c, e * c)))
        self.mlp_b2 = ad.parameter(np.zeros(c))

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{slot}", getattr(self, slot)) for slot in self.__slots__]


def generate_fields(z_norm: Tensor, weight: Tensor, bias: Tensor,
                    channels: int) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """One pointwise map producing the five per-token coefficient fields.

    Channel order of the 5C output is (input gate, output gate, drive
    coefficient, readout coefficient, raw step); the step is passed through
    softplus so it is strictly positive.
    """
    fields = ad.pointwise_linear(z_norm, weight, bias)
    c = channels
    g_in = ad.take(fields, 0, c, axis=1)
    g_out = ad.take(fields, c, 2 * c, axis=1)
    drive = ad.take(fields, 2 * c, 3 * c, axis=1)
    readout = ad.take(fields, 3 * c, 4 * c, axis=1)
    step = ad.softplus(ad.take(fields, 4 * c, 5 * c, axis=1))
    return g_in, g_out, drive, readout, step


def decay(a_raw: Tensor, step: Tensor) -> Tensor:
    """Per-token state decay exp(-softplus(a) * step), strictly in (0, 1)."""
    c = a_raw.data.shape[0]
    a_pos = ad.reshape(ad.softplus(a_raw), (1, c, 1, 1, 1))
    return ad.exp(ad.neg(ad.mul(a_pos, step)))


def fuse_and_gate(y_fwd: Tensor, y_bwd: Tensor, g_out: Tensor) -> Tensor:
    """Average the two scan directions, then gate elementwise."""
    return ad.mul(g_out, ad.scale(ad.add(y_fwd, y_bwd), 0.5))


def axis_fuse(parts: list[Tensor]) -> Tensor:
    """Arithmetic mean of the per-axis outputs."""
    if not parts:
        raise ConfigError("axis fusion needs at least one axis output")
    total = parts[0]
    for part in parts[1:]:
        total = ad.add(total, part)
    if len(parts) == 1:
        return total
    return ad.scale(total, 1.0 / len(parts))


class ViMModel(RegressionModel):
    """Scan-based regression model; construct with ``initialize``."""

    def __init__(self, config: ViMConfig, embed_w: Tensor, embed_b: Tensor,
                 blocks: list[ViMBlockParams], final_gain: Tensor,
                 final_shift: Tensor, head_w: Tensor, head_b: Tensor) -> None:
        config.validate()
        self.config = config
        self.embed_w = embed_w
        self.embed_b = embed_b
        self.blocks = blocks
        self.final_gain = final_gain
        self.final_shift = final_shift
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def initialize(cls, config: ViMConfig, seed: int) -> "ViMModel":
        """Deterministic initialization from the model seed stream.

        Weight matrices draw uniform in +-(fan-in)^(-1/2); raw decay starts
        at zero (decay rate ln 2), skip at one, gains at one, and the head
        at zero so the first prediction is zero for any input.
        """
        config.validate()
        rng = stream(seed, "vim-init")
        c, p = config.channels, config.patch
        embed_bound = 1.0 / np.sqrt(p**3)
        embed_w = ad.parameter(rng.uniform(-embed_bound, embed_bound, (c, 1, p, p, p)))
        embed_b = ad.parameter(np.zeros(c))
        blocks = [ViMBlockParams(c, config.expansion, rng) for _ in range(config.blocks)]
        final_gain = ad.parameter(np.ones(c))
        final_shift = ad.parameter(np.zeros(c))
        head_w = ad.parameter(np.zeros(c))
        head_b = ad.parameter(np.asarray(0.0))
        return cls(config, embed_w, embed_b, blocks, final_gain, final_shift,
                   head_w, head_b)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        items = [("embed.weight", self.embed_w), ("embed.bias", self.embed_b)]
        for i, block in enumerate(self.blocks):
            items.extend(block.named(f"block{i}"))
        items.extend([
            ("final_norm.gain", self.final_gain),
            ("final_norm.shift", self.final_shift),
            ("head.weight", self.head_w),
            ("head.bias", self.head_b),
        ])
        return items

    def _block_forward(self, z: Tensor, params: ViMBlockParams) -> Tensor:
        c = self.config.channels
        z_norm = ad.layer_norm(z, params.norm1_gain, params.norm1_shift, axis=1)
        g_in, g_out, drive, readout, step = generate_fields(
            z_norm, params.generator_w, params.generator_b, c)
        alpha = decay(params.a_raw, step)
        u = ad.mul(g_in, z_norm)
        parts = []
        for name in self.config.scan_axes:
            axis = SCAN_AXIS_DIM[name]
            y_fwd = ad.scan_axis(u, alpha, drive, readout, params.d_skip, axis)
            y_bwd = ad.scan_axis(u, alpha, drive, readout, params.d_skip, axis,
                                 reverse=True)
            parts.append(fuse_and_gate(y_fwd, y_bwd, g_out))
        z_res = ad.add(z, axis_fuse(parts))
        z_norm2 = ad.layer_norm(z_res, params.norm2_gain, params.norm2_shift, axis=1)
        hidden = ad.gelu(ad.pointwise_linear(z_norm2, params.mlp_w1, params.mlp_b1))
        mlp_out = ad.pointwise_linear(hidden, params.mlp_w2, params.mlp_b2)
        return ad.add(z_res, mlp_out)

    def forward(self, x: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Map a (B, 1, n, n, n) real-encoded batch to (B, 1) predictions.

        ``train`` and ``rng`` exist for interface parity with the other
        model families; this one has no stochastic layers.
        """
        if x.data.ndim != 5 or x.data.shape[2:] != (self.config.side,) * 3:
            raise ConfigError(
                f"input shape {x.data.shape} does not match side {self.config.side}")
        z = ad.patchify(x, self.embed_w, self.embed_b, self.config.patch)
        for params in self.blocks:
            z = self._block_forward(z, params)
        z = ad.layer_norm(z, self.final_gain, self.final_shift, axis=1)
        pooled = ad.global_mean(z)
        return ad.affine(pooled, self.head_w, self.head_b)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass outside any tape; returns a (B,) array."""
        out = self.forward(ad.constant(x))
        return out.data[:, 0].copy()
