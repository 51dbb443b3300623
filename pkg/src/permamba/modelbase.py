"""Shared parameter and checkpoint-state bookkeeping for regression models.

A model subclass provides ``named_parameters`` (ordered trainable tensors)
and, if it carries non-trainable running statistics, ``named_buffers`` plus
``_set_buffer``. Everything checkpoint-shaped lives here so the three model
families serialize identically.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError

__all__ = ["RegressionModel"]


class RegressionModel:

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable arrays that must survive a checkpoint round trip."""
        return []

    def _set_buffer(self, name: str, arr: np.ndarray) -> None:
        raise ConfigError(f"model has no buffer named {name!r}")

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    def state_dict(self) -> list[tuple[str, np.ndarray]]:
        items = [(name, t.data) for name, t in self.named_parameters()]
        items.extend(self.named_buffers())
        return items

    def load_state(self, items: list[tuple[str, np.ndarray]]) -> None:
        """Restore parameters and buffers in place; names and shapes must
        match the model's own state order exactly."""
        expected = [name for name, _ in self.state_dict()]
        if [name for name, _ in items] != expected:
            raise ConfigError("checkpoint entry names do not match the model")
        params = dict(self.named_parameters())
        buffer_names = {name for name, _ in self.named_buffers()}
        for name, arr in items:
            if name in params:
                tensor = params[name]
                if tensor.data.shape != arr.shape:
                    raise ConfigError(
                        f"checkpoint shape {arr.shape} does not match {name} "
                        f"{tensor.data.shape}")
                tensor.data[...] = arr
            elif name in buffer_names:
                self._set_buffer(name, np.array(arr, dtype=np.float64))
            else:
                raise ConfigError(f"model has no state entry named {name!r}")
