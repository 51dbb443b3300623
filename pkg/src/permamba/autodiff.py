"""Dense float64 tensors with reverse-mode differentiation on a run-time tape.

The engine covers exactly the operations the three regression networks need:
block patch embedding, pointwise (1x1x1) channel maps, elementwise arithmetic
and activations, layer/batch normalization, dropout, batched matmul, softmax,
axiswise linear recurrence scans, reductions, and a scalar affine head.

Design notes
------------
* A ``Tensor`` wraps one C-contiguous float64 ndarray. Gradients are allocated
  lazily into ``.grad`` and accumulate across backward calls.
* Operations record nodes onto the active ``Tape`` (a ``with`` context) in
  execution order, which is already a topological order of the graph; the
  backward sweep walks it in reverse exactly once per call.
* Every forward result is checked for NaN/Inf and raises ``NonFiniteError``
  rather than letting poison propagate.
* Each node declares the arrays its adjoint will read (``saved``); the tape
  can report the total retained element count, which the scaling benchmark
  mirrors symbolically. Leaf tensors (inputs, parameters) are excluded from
  that count since they are resident regardless of the tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import ConfigError, NonFiniteError, ShapeError, StateError

__all__ = [
    "Tensor", "Tape", "parameter", "constant",
    "add", "sub", "mul", "neg", "scale", "exp", "softplus", "relu", "gelu",
    "matmul", "softmax", "layer_norm", "batch_norm", "BatchNormState",
    "dropout", "patchify", "pointwise_linear", "take", "reshape", "permute",
    "mean_over", "global_mean", "tensor_sum", "affine", "scan_axis",
]

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327
_SOFTPLUS_CUT = 30.0


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, values, requires_grad: bool = False) -> None:
        self.data = _as_array(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


class _Node:
    __slots__ = ("name", "output", "inputs", "saved_arrays", "backward")

    def __init__(self, name, output, inputs, saved_arrays, backward) -> None:
        self.name = name
        self.output = output
        self.inputs = inputs
        self.saved_arrays = saved_arrays
        self.backward = backward


class Tape:
    """Ordered record of operations for one differentiable evaluation.

    Use as a context manager; operations executed inside record themselves.
    ``backward(loss)`` seeds d(loss)/d(loss)=1 and sweeps the record in
    reverse, accumulating into ``Tensor.grad``. Calling it again re-runs the
    sweep and accumulates on top (callers that want fresh gradients zero them
    first).
    """

    _active: "Tape | None" = None

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise StateError("a tape is already active; evaluations are single-writer")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    @staticmethod
    def current() -> "Tape | None":
        return Tape._active

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from ``loss``. Leaf gradients accumulate across
        calls; intermediate gradients are rebuilt fresh each call and exposed
        on ``.grad`` for inspection."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        flowing: dict[int, np.ndarray] = {}
        if loss.is_leaf:
            loss.ensure_grad()
            loss.grad += 1.0
            return
        flowing[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            out_grad = flowing.get(id(node.output))
            if out_grad is None:
                continue
            node.output.grad = out_grad
            grads = node.backward(out_grad)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ShapeError(
                        f"adjoint of {node.name} produced shape {grad.shape} "
                        f"for input of shape {tensor.data.shape}")
                if tensor.is_leaf:
                    tensor.ensure_grad()
                    tensor.grad += grad
                elif id(tensor) in flowing:
                    flowing[id(tensor)] += grad
                else:
                    flowing[id(tensor)] = grad

    def retained_elements(self) -> int:
        """Total elements of distinct arrays the backward sweep will read."""
        seen: set[int] = set()
        total = 0
        for node in self.nodes:
            for arr in node.saved_arrays:
                if id(arr) not in seen:
                    seen.add(id(arr))
                    total += arr.size
        return total


def _record(name: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            saved: Sequence, backward: Callable) -> Tensor:
    if not np.isfinite(out_data).all():
        raise NonFiniteError(name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.is_leaf = True
    out.requires_grad = False
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        arrays = []
        for item in saved:
            if isinstance(item, Tensor):
                if not item.is_leaf:
                    arrays.append(item.data)
            else:
                arrays.append(item)
        tape.nodes.append(_Node(name, out, tuple(inputs), tuple(arrays), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# === elementwise ===

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", out, (a, b), (), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", out, (a, b), (), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record("mul", out, (a, b), (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), (), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _record("scale", a.data * factor, (a,), (), lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return _record("exp", out_data, (a,), (out_data,), backward)


def softplus(a: Tensor) -> Tensor:
    """ln(1+e^x), linearized above x=30 to avoid overflow."""
    x = a.data
    out = np.where(x > _SOFTPLUS_CUT, x, np.log1p(np.exp(np.minimum(x, _SOFTPLUS_CUT))))

    def backward(g):
        return (g * _expit(x),)

    return _record("softplus", out, (a,), (a,), backward)


def relu(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0)

    def backward(g):
        return (g * (x > 0.0),)

    return _record("relu", out, (a,), (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """x/2 * (1 + erf(x/sqrt(2))), the exact (non-tanh) form."""
    x = a.data
    out = 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))

    def backward(g):
        d = 0.5 * (1.0 + _erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * d,)

    return _record("gelu", out, (a,), (a,), backward)


# === linear algebra ===

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _record("matmul", out, (a, b), (a, b), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _record("softmax", out, (a,), (out,), backward)


# === normalization ===

def _axis_shape(ndim: int, axis: int, extent: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = extent
    return tuple(shape)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, axis: int = 1,
               eps: float = 1e-5) -> Tensor:
    """Normalize over one axis per location; affine params live on that axis."""
    axis = axis % x.data.ndim
    n = x.data.shape[axis]
    if gain.data.shape != (n,) or shift.data.shape != (n,):
        raise ShapeError(f"norm affine params must have shape ({n},)")
    pshape = _axis_shape(x.data.ndim, axis, n)
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data.reshape(pshape) * xhat + shift.data.reshape(pshape)

    def backward(g):
        reduce_axes = tuple(i for i in range(g.ndim) if i != axis)
        dxhat = g * gain.data.reshape(pshape)
        term = dxhat - dxhat.mean(axis=axis, keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)
        dx = inv * term
        dgain = (g * xhat).sum(axis=reduce_axes)
        dshift = g.sum(axis=reduce_axes)
        return dx, dgain, dshift

    return _record("layer_norm", out, (x, gain, shift), (xhat, inv, gain), backward)


class BatchNormState:
    """Running mean/var for one batch-norm layer; starts uninitialized."""

    __slots__ = ("mean", "var")

    def __init__(self) -> None:
        self.mean: np.ndarray | None = None
        self.var: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.mean is not None


def batch_norm(x: Tensor, gain: Tensor, shift: Tensor, state: BatchNormState,
               train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Channel-axis batch normalization with EMA running statistics.

    Statistics reduce over every axis except channel (axis 1). Training uses
    batch statistics and updates ``state``; evaluation uses the stored running
    statistics and raises ``StateError`` if none exist yet. The first training
    batch copies its statistics into the running buffers instead of blending
    with zeros.
    """
    if x.data.ndim < 2:
        raise ShapeError("batch_norm input needs a channel axis at position 1")
    c = x.data.shape[1]
    if gain.data.shape != (c,) or shift.data.shape != (c,):
        raise ShapeError(f"norm affine params must have shape ({c},)")
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))
    pshape = _axis_shape(x.data.ndim, 1, c)
    count = int(np.prod([x.data.shape[i] for i in reduce_axes]))

    if train:
        if count < 2:
            raise ShapeError("batch_norm training needs at least 2 values per channel")
        mu = x.data.mean(axis=reduce_axes)
        var = x.data.var(axis=reduce_axes)
        if not state.initialized:
            state.mean = mu.copy()
            state.var = var.copy()
        else:
            state.mean = (1.0 - momentum) * state.mean + momentum * mu
            state.var = (1.0 - momentum) * state.var + momentum * var
    else:
        if not state.initialized:
            raise StateError("batch_norm evaluated before any training batch")
        mu = state.mean
        var = state.var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(pshape)) * inv.reshape(pshape)
    out = gain.data.reshape(pshape) * xhat + shift.data.reshape(pshape)

    if train:
        def backward(g):
            dxhat = g * gain.data.reshape(pshape)
            term = dxhat - dxhat.mean(axis=reduce_axes, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=reduce_axes, keepdims=True)
            dx = term * inv.reshape(pshape)
            dgain = (g * xhat).sum(axis=reduce_axes)
            dshift = g.sum(axis=reduce_axes)
            return dx, dgain, dshift
    else:
        def backward(g):
            dx = g * (gain.data * inv).reshape(pshape)
            dgain = (g * xhat).sum(axis=reduce_axes)
            dshift = g.sum(axis=reduce_axes)
            return dx, dgain, dshift

    return _record("batch_norm", out, (x, gain, shift), (xhat, inv, gain), backward)


# === regularization ===

def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Zero elements with probability ``rate`` and rescale survivors by
    1/(1-rate) in training; identity in evaluation."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a random stream")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def backward(g):
        return (g * keep,)

    return _record("dropout", out, (x,), (keep,), backward)


# === structure ops ===

def patchify(x: Tensor, weight: Tensor, bias: Tensor | None, patch: int) -> Tensor:
    """Embed non-overlapping p^3 blocks with a shared linear map.

    ``x`` is (B, C_in, D, H, W) with every spatial extent divisible by
    ``patch``; ``weight`` is (C_out, C_in, p, p, p). Output is
    (B, C_out, D/p, H/p, W/p). With patch equal to the kernel and stride this
    is also a strided 3-D convolution without padding, which is how the
    convolutional encoder uses it.
    """
    if x.data.ndim != 5:
        raise ShapeError(f"patchify expects a 5-D input, got {x.data.shape}")
    b_, cin, d, h, w = x.data.shape
    if weight.data.ndim != 5 or weight.data.shape[1:] != (cin, patch, patch, patch):
        raise ShapeError(
            f"patchify weight {weight.data.shape} does not match "
            f"(C_out, {cin}, {patch}, {patch}, {patch})")
    if d % patch or h % patch or w % patch:
        raise ShapeError(f"extents {(d, h, w)} not divisible by patch {patch}")
    cout = weight.data.shape[0]
    dd, hh, ww = d // patch, h // patch, w // patch
    k = cin * patch ** 3

    def to_blocks(arr):
        blocks = arr.reshape(b_, cin, dd, patch, hh, patch, ww, patch)
        blocks = blocks.transpose(0, 2, 4, 6, 1, 3, 5, 7)
        return np.ascontiguousarray(blocks).reshape(b_, dd * hh * ww, k)

    flat = to_blocks(x.data)
    wmat = weight.data.reshape(cout, k)
    out = flat @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(b_, cout, dd, hh, ww)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gflat = np.ascontiguousarray(
            g.reshape(b_, cout, dd * hh * ww).transpose(0, 2, 1))
        blocks = to_blocks(x.data)
        dw = np.einsum("bto,btk->ok", gflat, blocks).reshape(weight.data.shape)
        dflat = gflat @ wmat
        dxb = dflat.reshape(b_, dd, hh, ww, cin, patch, patch, patch)
        dx = np.ascontiguousarray(dxb.transpose(0, 4, 1, 5, 2, 6, 3, 7)).reshape(x.data.shape)
        if bias is None:
            return dx, dw
        return dx, dw, gflat.sum(axis=(0, 1))

    return _record("patchify", out, inputs, (x, weight), backward)


def pointwise_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-location channel map: y[b, o, ...] = sum_i W[o, i] x[b, i, ...] + b[o]."""
    if x.data.ndim < 2:
        raise ShapeError("pointwise_linear input needs a channel axis at position 1")
    cin = x.data.shape[1]
    if weight.data.ndim != 2 or weight.data.shape[1] != cin:
        raise ShapeError(
            f"pointwise weight {weight.data.shape} does not match C_in={cin}")
    cout = weight.data.shape[0]
    xm = x.data.reshape(x.data.shape[0], cin, -1)
    out = np.einsum("oi,bir->bor", weight.data, xm)
    out = out.reshape((x.data.shape[0], cout) + x.data.shape[2:])
    pshape = _axis_shape(out.ndim, 1, cout)
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"pointwise bias must have shape ({cout},)")
        out = out + bias.data.reshape(pshape)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.reshape(g.shape[0], cout, -1)
        dx = np.einsum("oi,bor->bir", weight.data, gm).reshape(x.data.shape)
        dw = np.einsum("bor,bir->oi", gm, x.data.reshape(xm.shape))
        if bias is None:
            return dx, dw
        return dx, dw, gm.sum(axis=(0, 2))

    return _record("pointwise_linear", out, inputs, (x, weight), backward)


def take(x: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    """Contiguous slice along one axis; the adjoint scatters back into zeros."""
    axis = axis % x.data.ndim
    n = x.data.shape[axis]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice [{start}:{stop}] outside axis of extent {n}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(x.data[index])

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _record("take", out, (x,), (), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _record("reshape", out, (x,), (), backward)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record("permute", out, (x,), (), backward)


# === reductions ===

def mean_over(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(a % x.data.ndim for a in axes)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)
    keep_shape = tuple(1 if i in axes else n for i, n in enumerate(x.data.shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(keep_shape) / count, x.data.shape).copy(),)

    return _record("mean_over", out, (x,), (), backward)


def global_mean(x: Tensor) -> Tensor:
    """Spatial average of a (B, C, D, H, W) tensor down to (B, C)."""
    if x.data.ndim != 5:
        raise ShapeError(f"global_mean expects a 5-D input, got {x.data.shape}")
    return mean_over(x, (2, 3, 4))


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record("sum", out, (x,), (), backward)


def affine(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Scalar regression head: (B, C) features to (B, 1) predictions."""
    if h.data.ndim != 2:
        raise ShapeError(f"affine expects (B, C) features, got {h.data.shape}")
    c = h.data.shape[1]
    if weight.data.shape != (c,) or bias.data.shape != ():
        raise ShapeError("affine needs weight (C,) and scalar bias")
    out = (h.data @ weight.data)[:, None] + bias.data

    def backward(g):
        dh = g * weight.data[None, :]
        dw = h.data.T @ g[:, 0]
        db = np.asarray(g.sum())
        return dh, dw, db

    return _record("affine", out, (h, weight, bias), (h, weight), backward)


# === axiswise selective scan ===

def scan_axis(u: Tensor, alpha: Tensor, b_field: Tensor, c_field: Tensor,
              d_skip: Tensor, axis: int, reverse: bool = False) -> Tensor:
    """First-order linear recurrence along one spatial axis of a 5-D tensor.

    With sequences taken along ``axis`` (2, 3, or 4) and every other axis
    treated as an independent lane:

        s_t = alpha_t * s_{t-1} + b_t * u_t,   s_{-1} = 0
        y_t = c_t * s_t + d_skip * u_t

    ``reverse=True`` runs the same recurrence on the reversed sequence and
    un-reverses the output. ``d_skip`` has shape (C,), everything else matches
    ``u``'s (B, C, D, H, W).
    """
    shape = u.data.shape
    if len(shape) != 5:
        raise ShapeError(f"scan_axis expects 5-D tensors, got {shape}")
    if axis not in (2, 3, 4):
        raise ConfigError(f"scan axis must be 2, 3, or 4, got {axis}")
    for name, t in (("alpha", alpha), ("b_field", b_field), ("c_field", c_field)):
        if t.data.shape != shape:
            raise ShapeError(f"{name} shape {t.data.shape} does not match {shape}")
    c = shape[1]
    if d_skip.data.shape != (c,):
        raise ShapeError(f"d_skip must have shape ({c},)")
    length = shape[axis]

    def to_seq(arr):
        # (L, B, C, R): scan position leads, lanes trail.
        moved = np.moveaxis(arr, axis, 0)
        seq = moved.reshape(length, shape[0], c, -1)
        return seq[::-1].copy() if reverse else np.ascontiguousarray(seq)

    def from_seq(seq):
        if reverse:
            seq = seq[::-1]
        moved = seq.reshape((length,) + shape[:axis] + shape[axis + 1:])
        return np.ascontiguousarray(np.moveaxis(moved, 0, axis))

    u2, a2, b2, c2 = (to_seq(t.data) for t in (u, alpha, b_field, c_field))
    dk = d_skip.data.reshape(1, c, 1)

    states = np.empty_like(u2)
    s = np.zeros_like(u2[0])
    for t in range(length):
        s = a2[t] * s + b2[t] * u2[t]
        states[t] = s
    y = c2 * states + dk * u2
    out = from_seq(y)

    def backward(g):
        g2 = to_seq(g)
        u2b, a2b, b2b, c2b = (to_seq(t.data) for t in (u, alpha, b_field, c_field))
        du = g2 * dk
        db = np.empty_like(g2)
        da = np.empty_like(g2)
        dc = g2 * states
        carry = np.zeros_like(g2[0])
        for t in range(length - 1, -1, -1):
            gs = g2[t] * c2b[t] + carry
            db[t] = gs * u2b[t]
            du[t] += gs * b2b[t]
            da[t] = gs * states[t - 1] if t > 0 else np.zeros_like(gs)
            carry = gs * a2b[t]
        dd = (g2 * u2b).sum(axis=(0, 1, 3))
        return (from_seq(du), from_seq(da), from_seq(db), from_seq(dc), dd)

    return _record("scan_axis", out, (u, alpha, b_field, c_field, d_skip),
                   (u, alpha, b_field, c_field, states), backward)
