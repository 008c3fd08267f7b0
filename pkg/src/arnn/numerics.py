"""Dense float64 primitives with hand-written reverse-mode gradients.

Every function accepts plain ``numpy`` arrays.  A "matrix" is any float64
array with at least two dimensions; leading dimensions are treated as a
batch of independent matrices so that the same code path serves a single
segment ``(c, m)`` and a mini-batch ``(B, c, m)``.

Backward functions take the upstream gradient ``dy`` of a scalar loss with
respect to the forward output and return the gradient with respect to the
inputs.  Gradients of :class:`Param` objects are *accumulated* in place.
"""

import numpy as np

from .errors import DimensionError, ParameterError

LN_EPS = 1e-5


def make_rng(seed):
    """Seeded PCG64 generator; identical seeds give identical streams on any platform."""
    return np.random.Generator(np.random.PCG64(seed))


class Param:
    """A trainable tensor together with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise DimensionError(f"Param must be 2-D, got shape {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param(shape={self.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


def as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    return a


def _t(a):
    return np.swapaxes(a, -1, -2)


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape`` by summing leading axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b):
    """Matrix product ``a @ b`` with a shape check.

    Raises
    ------
    DimensionError
        If ``a.shape[-1] != b.shape[-2]``.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions differ, a{a.shape} vs b{b.shape}"
        )
    if a.ndim > 2 and b.ndim == 2:
        # one GEMM over all stacked rows instead of a loop over the batch
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def matmul_backward(a, b, dy):
    """Gradients of ``a @ b``; a shared 2-D operand receives the batch sum."""
    da = dy @ _t(b)
    if b.ndim == 2 and dy.ndim > 2:
        # (B, r, k)^T (B, r, n) summed over B == flatten rows
        db = a.reshape(-1, a.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    else:
        db = _t(a) @ dy
    if a.ndim == 2 and dy.ndim > 2:
        da = da.sum(axis=tuple(range(dy.ndim - 2)))
    return da, db


# ---------------------------------------------------------------------------
# softmax


def softmax_rows(a):
    """Row-wise softmax over the last axis, stabilised by subtracting the row max."""
    a = as_matrix(a)
    e = a - a.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def softmax_rows_backward(y, dy):
    """Gradient through softmax given its output ``y``."""
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# layer norm


def _check_affine(a, gain, bias):
    want = (1, a.shape[-1])
    if gain.shape != want or bias.shape != want:
        raise DimensionError(
            f"layer_norm: gain{gain.shape}/bias{bias.shape} must be {want} for input {a.shape}"
        )


def layer_norm(a, gain, bias, eps=LN_EPS):
    """Standardise each row (population variance + ``eps``), then scale and shift.

    ``gain`` and ``bias`` are :class:`Param` objects of shape ``(1, cols)``.
    """
    a = as_matrix(a)
    _check_affine(a, gain, bias)
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    xhat = (a - mu) / np.sqrt(var + eps)
    return xhat * gain.value + bias.value


def layer_norm_backward(a, gain, bias, dy, eps=LN_EPS):
    """Accumulate into ``gain.grad``/``bias.grad`` and return ``d a``."""
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    gain.grad += _sum_to(dy * xhat, gain.shape)
    bias.grad += _sum_to(dy, bias.shape)
    dxhat = dy * gain.value
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


# ---------------------------------------------------------------------------
# activations


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(y, dy):
    return dy * y * (1.0 - y)


def tanh_m(a):
    return np.tanh(np.asarray(a, dtype=np.float64))


def tanh_backward(y, dy):
    return dy * (1.0 - y * y)


# ---------------------------------------------------------------------------
# dropout


def dropout_mask(shape, p, rng):
    """Inverted-dropout multiplier: 0 with probability ``p``, else ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(a, p, training, rng=None):
    """Inverted dropout; the identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    return a * dropout_mask(np.shape(a), p, rng)
