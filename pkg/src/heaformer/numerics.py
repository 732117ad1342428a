"""Dense float64 kernels with hand-written backward rules.

Each differentiable op comes as a pair: ``op(...)`` returns the output and a
cache, ``op_backward(dout, cache)`` returns gradients w.r.t. the inputs. Arrays
are plain ``numpy.ndarray``; the trailing axis is the feature axis, leading
axes are batch/position and broadcast freely.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _check_matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray):
    _check_matmul(a, b)
    return a @ b, (a, b)


def matmul_backward(dout, cache):
    """Gradients of ``a @ b`` where ``b`` may be a shared 2-D weight."""
    a, b = cache
    da = dout @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ dout
    if b.ndim == 2 and db.ndim > 2:
        db = db.reshape(-1, *b.shape).sum(axis=0)
    return da, db


def add(a, b):
    return a + b, (a.shape, b.shape)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add_backward(dout, cache):
    sa, sb = cache
    return _unbroadcast(dout, sa), _unbroadcast(dout, sb)


def scale(a, s: float):
    return a * s, s


def scale_backward(dout, s):
    return dout * s


def transpose(a):
    return np.swapaxes(a, -1, -2), None


def transpose_backward(dout, _cache=None):
    return np.swapaxes(dout, -1, -2)


def concat_last(parts: Sequence[np.ndarray]):
    sizes = [p.shape[-1] for p in parts]
    return np.concatenate(parts, axis=-1), sizes


def concat_last_backward(dout, sizes):
    cuts = np.cumsum(sizes)[:-1]
    return np.split(dout, cuts, axis=-1)


def softmax_rows(x: np.ndarray, mask: np.ndarray | None = None):
    """Softmax over the last axis, with ``mask`` (broadcastable, 1 = valid) zeroing columns."""
    if mask is None:
        valid = np.ones(x.shape, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask).astype(bool), x.shape)
    if not valid.any(axis=-1).all():
        raise ValueError("softmax_rows: a row has no valid column")
    z = np.where(valid, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def softmax_rows_backward(dout, y):
    return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS):
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs a feature dimension >= 2")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dout, cache):
    xhat, inv, gamma = cache
    d = dout.shape[-1]
    lead = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=lead)
    dbeta = dout.sum(axis=lead)
    dxhat = dout * gamma
    dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dgamma, dbeta


def gelu(x: np.ndarray):
    """tanh approximation of GELU."""
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dout, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets, positions=None):
    """Mean negative log-likelihood of ``targets`` over the selected rows.

    ``logits`` is (n, C); ``positions`` indexes the rows that count (all rows
    when omitted). Returns ``(loss, dlogits)`` with ``dlogits`` shaped like
    ``logits`` and zero on unselected rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(logits)) if positions is None else np.asarray(positions, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("cross_entropy needs at least one position")
    if targets.shape != rows.shape:
        raise ValueError("one target per selected position is required")
    lp = log_softmax(logits[rows])
    n = rows.size
    loss = -lp[np.arange(n), targets].mean()
    g = np.exp(lp)
    g[np.arange(n), targets] -= 1.0
    dlogits = np.zeros_like(logits)
    np.add.at(dlogits, rows, g / n)
    return float(loss), dlogits


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss length mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def grad_check(
    fn: Callable[..., tuple[float, Sequence[np.ndarray]]],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(*inputs)`` must return ``(loss, grads)`` with one gradient per input.
    Inputs are perturbed in place and restored. Relative error per coordinate
    is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    _, grads = fn(*inputs)
    worst = 0.0
    for x, g in zip(inputs, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != x.shape:
            raise ValueError(f"gradient shape {g.shape} does not match input {x.shape}")
        for i in np.ndindex(x.shape):
            orig = x[i]
            x[i] = orig + eps
            fp = fn(*inputs)[0]
            x[i] = orig - eps
            fm = fn(*inputs)[0]
            x[i] = orig
            num = (fp - fm) / (2 * eps)
            if not (math.isfinite(num) and math.isfinite(g[i])):
                raise FloatingPointError(f"non-finite gradient at coordinate {i}")
            err = abs(g[i] - num) / max(1e-8, abs(g[i]) + abs(num))
            worst = max(worst, err)
    return worst
