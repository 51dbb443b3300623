"""Shared test utilities: finite-difference gradient checking and the
catalogue of per-operation gradient cases used by both the unit tests and
the acceptance suite."""

from __future__ import annotations

from typing import Callable

import numpy as np

from permamba import autodiff as ad
from permamba.rng import stream

FD_STEP = 1e-5
FD_TOL = 1e-4


def eval_scalar(fn: Callable[[], ad.Tensor]) -> float:
    """Run fn outside any tape and return its scalar value."""
    out = fn()
    return out.item()


def fd_gradients(fn: Callable[[], ad.Tensor], leaf: ad.Tensor,
                 step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of fn() w.r.t. one leaf tensor."""
    flat = leaf.data.reshape(-1)
    grads = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = eval_scalar(fn)
        flat[i] = orig - step
        fm = eval_scalar(fn)
        flat[i] = orig
        grads[i] = (fp - fm) / (2.0 * step)
    return grads.reshape(leaf.data.shape)


def check_gradients(fn: Callable[[], ad.Tensor], leaves: dict[str, ad.Tensor],
                    tol: float = FD_TOL, step: float = FD_STEP) -> float:
    """Compare tape gradients of fn() against central differences.

    Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator so
    exactly-zero gradients are compared against finite-difference noise on an
    absolute footing. Returns the worst relative error over all leaves.
    """
    for t in leaves.values():
        t.zero_grad()
    with ad.Tape() as tape:
        loss = fn()
    tape.backward(loss)
    worst = 0.0
    for name, t in leaves.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = fd_gradients(fn, t, step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
        assert rel.max() < tol, (
            f"gradient mismatch for {name}: worst rel err {rel.max():.3e} "
            f"at {np.unravel_index(rel.argmax(), rel.shape)}")
    return worst


def _rand(rng: np.random.Generator, shape, lo=-1.5, hi=1.5) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape)


def _weighted_sum(out: ad.Tensor, weights: np.ndarray) -> ad.Tensor:
    return ad.tensor_sum(ad.mul(out, ad.constant(weights)))


def op_gradient_cases() -> list[tuple[str, Callable[[], ad.Tensor], dict[str, ad.Tensor]]]:
    """One (name, loss_fn, leaves) triple per differentiable operation.

    Each loss_fn is deterministic, so central differences are valid even for
    operations that draw randomness (they re-derive the same stream).
    """
    cases = []

    def register(name: str, builder) -> None:
        rng = stream(2024, "gradcase-" + name)
        fn, leaves = builder(rng)
        cases.append((name, fn, leaves))

    def case_add(rng):
        a = ad.parameter(_rand(rng, (2, 3, 4)))
        b = ad.parameter(_rand(rng, (3, 4)))
        r = _rand(rng, (2, 3, 4))
        return lambda: _weighted_sum(ad.add(a, b), r), {"a": a, "b": b}
    register("add", case_add)

    def case_sub(rng):
        a = ad.parameter(_rand(rng, (2, 3)))
        b = ad.parameter(_rand(rng, (2, 1)))
        r = _rand(rng, (2, 3))
        return lambda: _weighted_sum(ad.sub(a, b), r), {"a": a, "b": b}
    register("sub", case_sub)

    def case_mul(rng):
        a = ad.parameter(_rand(rng, (2, 3, 2)))
        b = ad.parameter(_rand(rng, (1, 3, 1)))
        r = _rand(rng, (2, 3, 2))
        return lambda: _weighted_sum(ad.mul(a, b), r), {"a": a, "b": b}
    register("mul", case_mul)

    def case_neg(rng):
        a = ad.parameter(_rand(rng, (3, 2)))
        r = _rand(rng, (3, 2))
        return lambda: _weighted_sum(ad.neg(a), r), {"a": a}
    register("neg", case_neg)

    def case_scale(rng):
        a = ad.parameter(_rand(rng, (3, 2)))
        r = _rand(rng, (3, 2))
        return lambda: _weighted_sum(ad.scale(a, -2.7), r), {"a": a}
    register("scale", case_scale)

    def case_exp(rng):
        a = ad.parameter(_rand(rng, (2, 4)))
        r = _rand(rng, (2, 4))
        return lambda: _weighted_sum(ad.exp(a), r), {"a": a}
    register("exp", case_exp)

    def case_softplus(rng):
        vals = np.array([[-8.0, -0.7, 0.0, 0.9], [4.0, 29.0, 31.0, 45.0]])
        a = ad.parameter(vals)
        r = _rand(rng, (2, 4))
        return lambda: _weighted_sum(ad.softplus(a), r), {"a": a}
    register("softplus", case_softplus)

    def case_relu(rng):
        vals = _rand(rng, (3, 4))
        vals += np.sign(vals) * 0.05  # keep clear of the kink for central FD
        a = ad.parameter(vals)
        r = _rand(rng, (3, 4))
        return lambda: _weighted_sum(ad.relu(a), r), {"a": a}
    register("relu", case_relu)

    def case_gelu(rng):
        a = ad.parameter(_rand(rng, (3, 4), -3.0, 3.0))
        r = _rand(rng, (3, 4))
        return lambda: _weighted_sum(ad.gelu(a), r), {"a": a}
    register("gelu", case_gelu)

    def case_matmul(rng):
        a = ad.parameter(_rand(rng, (2, 3, 4)))
        b = ad.parameter(_rand(rng, (2, 4, 2)))
        r = _rand(rng, (2, 3, 2))
        return lambda: _weighted_sum(ad.matmul(a, b), r), {"a": a, "b": b}
    register("matmul", case_matmul)

    def case_matmul_broadcast(rng):
        a = ad.parameter(_rand(rng, (2, 3, 4)))
        b = ad.parameter(_rand(rng, (4, 5)))
        r = _rand(rng, (2, 3, 5))
        return lambda: _weighted_sum(ad.matmul(a, b), r), {"a": a, "b": b}
    register("matmul_broadcast", case_matmul_broadcast)

    def case_softmax(rng):
        a = ad.parameter(_rand(rng, (3, 5), -2.0, 2.0))
        r = _rand(rng, (3, 5))
        return lambda: _weighted_sum(ad.softmax(a), r), {"a": a}
    register("softmax", case_softmax)

    def case_layer_norm(rng):
        x = ad.parameter(_rand(rng, (2, 4, 2, 2, 2)))
        gain = ad.parameter(_rand(rng, (4,), 0.5, 1.5))
        shift = ad.parameter(_rand(rng, (4,)))
        r = _rand(rng, (2, 4, 2, 2, 2))
        fn = lambda: _weighted_sum(ad.layer_norm(x, gain, shift, axis=1), r)
        return fn, {"x": x, "gain": gain, "shift": shift}
    register("layer_norm", case_layer_norm)

    def case_layer_norm_last(rng):
        x = ad.parameter(_rand(rng, (2, 3, 6)))
        gain = ad.parameter(_rand(rng, (6,), 0.5, 1.5))
        shift = ad.parameter(_rand(rng, (6,)))
        r = _rand(rng, (2, 3, 6))
        fn = lambda: _weighted_sum(ad.layer_norm(x, gain, shift, axis=-1), r)
        return fn, {"x": x, "gain": gain, "shift": shift}
    register("layer_norm_last_axis", case_layer_norm_last)

    def case_batch_norm_train(rng):
        x = ad.parameter(_rand(rng, (3, 4, 2, 2, 2)))
        gain = ad.parameter(_rand(rng, (4,), 0.5, 1.5))
        shift = ad.parameter(_rand(rng, (4,)))
        r = _rand(rng, (3, 4, 2, 2, 2))

        def fn():
            state = ad.BatchNormState()
            return _weighted_sum(ad.batch_norm(x, gain, shift, state, train=True), r)
        return fn, {"x": x, "gain": gain, "shift": shift}
    register("batch_norm_train", case_batch_norm_train)

    def case_batch_norm_eval(rng):
        x = ad.parameter(_rand(rng, (3, 4)))
        gain = ad.parameter(_rand(rng, (4,), 0.5, 1.5))
        shift = ad.parameter(_rand(rng, (4,)))
        r = _rand(rng, (3, 4))
        state = ad.BatchNormState()
        state.mean = _rand(rng, (4,), -0.5, 0.5)
        state.var = _rand(rng, (4,), 0.5, 1.5)

        def fn():
            return _weighted_sum(ad.batch_norm(x, gain, shift, state, train=False), r)
        return fn, {"x": x, "gain": gain, "shift": shift}
    register("batch_norm_eval", case_batch_norm_eval)

    def case_dropout(rng):
        x = ad.parameter(_rand(rng, (4, 5)))
        r = _rand(rng, (4, 5))

        def fn():
            mask_rng = stream(99, "gradcase-dropout-mask")
            return _weighted_sum(ad.dropout(x, 0.35, mask_rng, train=True), r)
        return fn, {"x": x}
    register("dropout", case_dropout)

    def case_patchify(rng):
        x = ad.parameter(_rand(rng, (2, 1, 4, 4, 4)))
        w = ad.parameter(_rand(rng, (3, 1, 2, 2, 2)))
        b = ad.parameter(_rand(rng, (3,)))
        r = _rand(rng, (2, 3, 2, 2, 2))
        fn = lambda: _weighted_sum(ad.patchify(x, w, b, 2), r)
        return fn, {"x": x, "w": w, "b": b}
    register("patchify", case_patchify)

    def case_patchify_multichannel(rng):
        x = ad.parameter(_rand(rng, (2, 3, 2, 2, 2)))
        w = ad.parameter(_rand(rng, (4, 3, 2, 2, 2)))
        r = _rand(rng, (2, 4, 1, 1, 1))
        fn = lambda: _weighted_sum(ad.patchify(x, w, None, 2), r)
        return fn, {"x": x, "w": w}
    register("patchify_multichannel", case_patchify_multichannel)

    def case_pointwise(rng):
        x = ad.parameter(_rand(rng, (2, 3, 2, 2, 2)))
        w = ad.parameter(_rand(rng, (5, 3)))
        b = ad.parameter(_rand(rng, (5,)))
        r = _rand(rng, (2, 5, 2, 2, 2))
        fn = lambda: _weighted_sum(ad.pointwise_linear(x, w, b), r)
        return fn, {"x": x, "w": w, "b": b}
    register("pointwise_linear", case_pointwise)

    def case_pointwise_2d(rng):
        x = ad.parameter(_rand(rng, (3, 4)))
        w = ad.parameter(_rand(rng, (2, 4)))
        r = _rand(rng, (3, 2))
        fn = lambda: _weighted_sum(ad.pointwise_linear(x, w, None), r)
        return fn, {"x": x, "w": w}
    register("pointwise_linear_2d", case_pointwise_2d)

    def case_take(rng):
        x = ad.parameter(_rand(rng, (2, 6, 2)))
        r = _rand(rng, (2, 3, 2))
        fn = lambda: _weighted_sum(ad.take(x, 2, 5, axis=1), r)
        return fn, {"x": x}
    register("take", case_take)

    def case_reshape(rng):
        x = ad.parameter(_rand(rng, (2, 6)))
        r = _rand(rng, (3, 4))
        fn = lambda: _weighted_sum(ad.reshape(x, (3, 4)), r)
        return fn, {"x": x}
    register("reshape", case_reshape)

    def case_permute(rng):
        x = ad.parameter(_rand(rng, (2, 3, 4)))
        r = _rand(rng, (4, 2, 3))
        fn = lambda: _weighted_sum(ad.permute(x, (2, 0, 1)), r)
        return fn, {"x": x}
    register("permute", case_permute)

    def case_mean_over(rng):
        x = ad.parameter(_rand(rng, (2, 3, 4)))
        r = _rand(rng, (2, 4))
        fn = lambda: _weighted_sum(ad.mean_over(x, (1,)), r)
        return fn, {"x": x}
    register("mean_over", case_mean_over)

    def case_global_mean(rng):
        x = ad.parameter(_rand(rng, (2, 3, 2, 2, 2)))
        r = _rand(rng, (2, 3))
        fn = lambda: _weighted_sum(ad.global_mean(x), r)
        return fn, {"x": x}
    register("global_mean", case_global_mean)

    def case_sum(rng):
        x = ad.parameter(_rand(rng, (3, 3)))
        return lambda: ad.tensor_sum(x), {"x": x}
    register("sum", case_sum)

    def case_affine(rng):
        h = ad.parameter(_rand(rng, (3, 4)))
        w = ad.parameter(_rand(rng, (4,)))
        b = ad.parameter(np.asarray(0.3))
        r = _rand(rng, (3, 1))
        fn = lambda: _weighted_sum(ad.affine(h, w, b), r)
        return fn, {"h": h, "w": w, "b": b}
    register("affine", case_affine)

    for axis in (2, 3, 4):
        for rev in (False, True):
            def case_scan(rng, axis=axis, rev=rev):
                shape = (1, 2, 3, 2, 2)
                u = ad.parameter(_rand(rng, shape))
                alpha = ad.parameter(_rand(rng, shape, 0.1, 0.9))
                bf = ad.parameter(_rand(rng, shape))
                cf = ad.parameter(_rand(rng, shape))
                dk = ad.parameter(_rand(rng, (2,)))
                r = _rand(rng, shape)
                fn = lambda: _weighted_sum(
                    ad.scan_axis(u, alpha, bf, cf, dk, axis, reverse=rev), r)
                return fn, {"u": u, "alpha": alpha, "b": bf, "c": cf, "d": dk}
            register(f"scan_axis{axis}_{'rev' if rev else 'fwd'}", case_scan)

    return cases


def dense_scan_reference(u: np.ndarray, alpha: np.ndarray, b: np.ndarray,
                         c: np.ndarray, d_skip: np.ndarray, axis: int,
                         reverse: bool = False) -> np.ndarray:
    """Closed-form recurrence expansion, quadratic in sequence length:

        y_t = c_t * sum_{j<=t} (prod_{i=j+1..t} alpha_i) * b_j * u_j
              + d_skip * u_t

    Independent of the recurrence implementation: every term is formed
    directly from explicit cumulative products.
    """
    u_m, a_m, b_m, c_m = (np.moveaxis(arr, axis, 0) for arr in (u, alpha, b, c))
    if reverse:
        u_m, a_m, b_m, c_m = (arr[::-1] for arr in (u_m, a_m, b_m, c_m))
    length = u_m.shape[0]
    y = np.zeros_like(u_m)
    for t in range(length):
        total = np.zeros_like(u_m[0])
        for j in range(t + 1):
            weight = np.ones_like(u_m[0])
            for i in range(j + 1, t + 1):
                weight = weight * a_m[i]
            total += weight * b_m[j] * u_m[j]
        y[t] = c_m[t] * total
    if reverse:
        y = y[::-1]
    y = np.moveaxis(y, 0, axis)
    return y + d_skip.reshape(1, -1, 1, 1, 1) * u
