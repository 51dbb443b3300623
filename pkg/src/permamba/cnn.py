"""Convolutional baseline: a stride-2 encoder to a global latent, then an MLP.

Every encoder stage is a kernel-2 stride-2 valid convolution, which touches
each 2x2x2 block exactly once, so it is implemented with the same block
embedding primitive the patch models use. Batch normalization follows every
layer except the final scalar one; those layers therefore carry no bias. The
toggles on ``CNNConfig`` exist because the reference parameter total pins the
layer widths but not the bias placement; the defaults are the combination
whose trainable count is exactly 2582369.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import ConfigError, StateError
from .modelbase import RegressionModel
from .rng import stream

__all__ = ["CNNConfig", "CNNModel", "count_parameters"]


@dataclass(frozen=True)
class CNNConfig:
    ladder: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    latent: int = 1024
    decoder: tuple[int, ...] = (512, 256)
    dropout: float = 0.7
    conv_bias: bool = False
    latent_bn: bool = True

    def validate(self) -> None:
        if not self.ladder or any(c < 1 for c in self.ladder):
            raise ConfigError(f"channel ladder must be positive, got {self.ladder}")
        if self.latent < 1:
            raise ConfigError(f"latent width must be positive, got {self.latent}")
        if not self.decoder or any(c < 1 for c in self.decoder):
            raise ConfigError(f"decoder widths must be positive, got {self.decoder}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def side(self) -> int:
        """Input edge length; six stride-2 stages collapse it to one voxel."""
        return 2 ** len(self.ladder)


def count_parameters(config: CNNConfig) -> int:
    """Closed-form trainable parameter count for any toggle combination."""
    total = 0
    cin = 1
    for cout in config.ladder:
        total += cout * cin * 8 + (cout if config.conv_bias else 0) + 2 * cout
        cin = cout
    total += config.latent * cin + (config.latent if config.conv_bias else 0)
    if config.latent_bn:
        total += 2 * config.latent
    cin = config.latent
    for cout in config.decoder:
        total += cout * cin + 2 * cout
        cin = cout
    return total + cin + 1


class CNNModel(RegressionModel):
    """Encoder-decoder regressor; construct with ``initialize``."""

    def __init__(self, config: CNNConfig, params: dict[str, Tensor],
                 bn_states: dict[str, BatchNormState]) -> None:
        config.validate()
        self.config = config
        self._params = params
        self._bn_states = bn_states

    @classmethod
    def initialize(cls, config: CNNConfig, seed: int) -> "CNNModel":
        """Deterministic initialization from the model seed stream.

        Weights draw uniform in +-(fan-in)^(-1/2); the final layer starts at
        zero so the first prediction is zero for any input.
        """
        config.validate()
        rng = stream(seed, "cnn-init")
        params: dict[str, Tensor] = {}
        bn_states: dict[str, BatchNormState] = {}

        def add_bn(name: str, channels: int) -> None:
            params[f"{name}.gain"] = ad.parameter(np.ones(channels))
            params[f"{name}.shift"] = ad.parameter(np.zeros(channels))
            bn_states[name] = BatchNormState()

        cin = 1
        for i, cout in enumerate(config.ladder, start=1):
            bound = 1.0 / np.sqrt(cin * 8)
            params[f"conv{i}.weight"] = ad.parameter(
                rng.uniform(-bound, bound, (cout, cin, 2, 2, 2)))
            if config.conv_bias:
                params[f"conv{i}.bias"] = ad.parameter(np.zeros(cout))
            add_bn(f"bn{i}", cout)
            cin = cout
        bound = 1.0 / np.sqrt(cin)
        params["latent.weight"] = ad.parameter(
            rng.uniform(-bound, bound, (config.latent, cin)))
        if config.conv_bias:
            params["latent.bias"] = ad.parameter(np.zeros(config.latent))
        if config.latent_bn:
            add_bn("bn_latent", config.latent)
        cin = config.latent
        for i, cout in enumerate(config.decoder, start=1):
            bound = 1.0 / np.sqrt(cin)
            params[f"fc{i}.weight"] = ad.parameter(
                rng.uniform(-bound, bound, (cin, cout)))
            add_bn(f"bn_fc{i}", cout)
            cin = cout
        params["head.weight"] = ad.parameter(np.zeros(cin))
        params["head.bias"] = ad.parameter(np.asarray(0.0))
        return cls(config, params, bn_states)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for name, state in self._bn_states.items():
            gain = self._params[f"{name}.gain"].data
            ready = state.initialized
            items.append((f"{name}.running_mean",
                          state.mean if ready else np.zeros_like(gain)))
            items.append((f"{name}.running_var",
                          state.var if ready else np.ones_like(gain)))
            items.append((f"{name}.initialized", np.asarray(1.0 if ready else 0.0)))
        return items

    def _set_buffer(self, name: str, arr: np.ndarray) -> None:
        layer, _, field = name.rpartition(".")
        state = self._bn_states[layer]
        if field == "running_mean":
            state.mean = arr
        elif field == "running_var":
            state.var = arr
        elif field == "initialized":
            # The flag follows mean/var in state order, so clearing here
            # undoes the two assignments above for an untrained layer.
            if float(arr) == 0.0:
                state.mean = None
                state.var = None
        else:
            raise ConfigError(f"model has no buffer named {name!r}")

    def _bn_relu(self, z: Tensor, name: str, train: bool) -> Tensor:
        z = ad.batch_norm(z, self._params[f"{name}.gain"],
                          self._params[f"{name}.shift"],
                          self._bn_states[name], train)
        return ad.relu(z)

    def forward(self, x: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Map a (B, 1, n, n, n) real-encoded batch to (B, 1) predictions."""
        cfg = self.config
        if x.data.ndim != 5 or x.data.shape[2:] != (cfg.side,) * 3:
            raise ConfigError(
                f"input shape {x.data.shape} does not match side {cfg.side}")
        if train and cfg.dropout > 0.0 and rng is None:
            raise ConfigError("training forward with dropout needs an rng")
        z = x
        for i in range(1, len(cfg.ladder) + 1):
            bias = self._params.get(f"conv{i}.bias")
            z = ad.patchify(z, self._params[f"conv{i}.weight"], bias, 2)
            z = self._bn_relu(z, f"bn{i}", train)
        z = ad.pointwise_linear(z, self._params["latent.weight"],
                                self._params.get("latent.bias"))
        if cfg.latent_bn:
            z = self._bn_relu(z, "bn_latent", train)
        else:
            z = ad.relu(z)
        h = ad.reshape(z, (x.data.shape[0], cfg.latent))
        for i in range(1, len(cfg.decoder) + 1):
            h = ad.matmul(h, self._params[f"fc{i}.weight"])
            h = self._bn_relu(h, f"bn_fc{i}", train)
            h = ad.dropout(h, cfg.dropout, rng, train)
        return ad.affine(h, self._params["head.weight"], self._params["head.bias"])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation-mode forward outside any tape; returns a (B,) array.

        Requires populated running statistics, so call only after at least
        one training batch or a checkpoint restore.
        """
        for name, state in self._bn_states.items():
            if not state.initialized:
                raise StateError(f"batch-norm layer {name} has no running stats yet")
        out = self.forward(ad.constant(x))
        return out.data[:, 0].copy()
