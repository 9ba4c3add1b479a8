"""Differentiable primitives.

Every function accepts Tensors or array-likes (treated as constants) and returns
a Tensor. Shapes follow numpy broadcasting where noted.
"""
from __future__ import annotations

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record(a.data * mask, (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; the gradient is passed only where the input is inside ``[lo, hi]``."""
    a = as_tensor(a)
    lo, hi = float(lo), float(hi)  # numpy float64 bounds would upcast float32 data
    inside = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# --- shape ---------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {old} to {tuple(shape)}") from exc
    return record(out, (a,), lambda g: (_unbroadcast(g, old),))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, xs, vjp)


def take(a, index) -> Tensor:
    """``a[index]`` for any numpy index; scatter-add on the way back."""
    a = as_tensor(a)
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[index] = g  # basic indexing never repeats a position
        else:
            np.add.at(full, index, g)
        return (full,)

    return record(a.data[index], (a,), vjp)


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"token id outside [0, {table.shape[0]})")
    return take(table, ids)


# --- reductions ----------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[ax] for ax in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return record(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


# --- linear algebra ------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return record(ad @ bd, (a, b), vjp)


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; ``W`` is ``[out, in]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.data.ndim != 2 or x.data.ndim < 1 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: x {x.shape} vs W {W.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"linear: bias {b.shape} vs W {W.shape}")
    xd, Wd = x.data, W.data
    # flatten leading dims so numpy issues one GEMM instead of a batched loop
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ Wd.T
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (Wd.shape[0],))

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ Wd).reshape(xd.shape)
        gW = g2.T @ x2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    inputs = (x, W) if b is None else (x, W, b)
    return record(out, inputs, vjp)


def batched_matvec(W, x) -> Tensor:
    """Per-sample ``W[n] @ x[n]``: ``W`` is ``[n, out, in]``, ``x`` is ``[n, in]``."""
    W, x = as_tensor(W), as_tensor(x)
    if W.data.ndim != 3 or x.data.ndim != 2 or W.shape[0] != x.shape[0] or W.shape[2] != x.shape[1]:
        raise DimensionError(f"batched_matvec W {W.shape} x {x.shape}")
    Wd, xd = W.data, x.data

    def vjp(g):
        return g[:, :, None] * xd[:, None, :], np.einsum("noi,no->ni", Wd, g)

    return record(np.einsum("noi,ni->no", Wd, xd), (W, x), vjp)


# --- normalisation -------------------------------------------------------

def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardise the last axis (population variance), then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if d < 2:
        raise ContractError("layernorm over fewer than 2 features is degenerate")
    if eps <= 0:
        raise ContractError("layernorm eps must be positive")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine shapes {gamma.shape}/{beta.shape} vs {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def vjp(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        return gx, (flat * xhat.reshape(-1, d)).sum(axis=0), flat.sum(axis=0)

    return record(xhat * gd + beta.data, (x, gamma, beta), vjp)


def channel_stats(x):
    """Mean and population std over the last axis (kept as size-1 dims), plus the centred input."""
    x = as_tensor(x)
    m = mean(x, axis=-1, keepdims=True)
    c = sub(x, m)
    return m, sqrt(mean(square(c), axis=-1, keepdims=True)), c


def adain(style, content, min_std: float = 1e-8) -> Tensor:
    """Give ``content`` the per-row mean and std of ``style`` (last axis).

    Raises ContractError when some content row is (nearly) constant.
    """
    style, content = as_tensor(style), as_tensor(content)
    if style.shape != content.shape:
        raise DimensionError(f"adain shapes differ: {style.shape} vs {content.shape}")
    if content.shape[-1] < 2:
        raise ContractError("adain needs at least 2 features")
    c_std = content.data.std(axis=-1)
    if np.any(c_std <= min_std):
        raise ContractError("content std is ~0; statistics are degenerate")
    s_mean, s_std, _ = channel_stats(style)
    _, c_stdt, c_centered = channel_stats(content)
    return add(mul(s_std, div(c_centered, c_stdt)), s_mean)


# --- losses --------------------------------------------------------------

def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def vjp(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return record(np.asarray(np.mean(diff * diff)), (a, b), vjp)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of ``[n, K]`` logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross-entropy logits {logits.shape} labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DimensionError("label outside logit range")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(n)
    loss = np.mean(logsum - z[rows, labels])

    def vjp(g):
        p = softmax(logits.data)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return record(np.asarray(loss), (logits,), vjp)


def gaussian_kl(mu, logvar) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis, averaged over rows."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    per = mul(0.5, sum(sub(sub(add(square(mu), exp(logvar)), 1.0), logvar), axis=-1))
    return mean(per)


def reparam_sample(mu, logvar, noise) -> Tensor:
    """``mu + exp(logvar / 2) * noise``; gradients reach ``mu`` and ``logvar``."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    noise = np.asarray(noise, dtype=mu.data.dtype)
    if noise.shape != mu.shape or logvar.shape != mu.shape:
        raise DimensionError("reparam_sample shapes differ")
    return add(mu, mul(exp(mul(0.5, logvar)), noise))
