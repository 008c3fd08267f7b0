"""One recurrent step of the attentive recurrent cell.

Tokens are channels: a window ``x_hat`` of shape ``(c, m)`` holds ``c``
tokens, each an ``m``-dimensional slice of consecutive samples.  The state
block has shape ``(s, m)``.  All functions also accept a leading batch axis.

Step layout::

    Qx, Kx, Vx = x_hat @ Wx_{q,k,v}          Qs, Ks, Vs = state @ Ws_{q,k,v}
    u_x  = attn(Qx, Kx, Vx)                  (c, m)
    u_xs = attn(Qx, Ks, Vs)                  (c, m)
    u_sx = attn(Qs, Kx, Vx)                  (s, m)
    h    = dropout(layer_norm(W_o @ [u_x; u_xs; u_sx]))     (s, m)
    z = tanh(h W_z^T + b_z); i = sigmoid(h W_i^T + b_i - 1); f = sigmoid(h W_f^T + b_f + 1)
    state' = state * f + z * i
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .numerics import Param

INPUT_GATE_SHIFT = -1.0
FORGET_GATE_SHIFT = 1.0

PARAM_NAMES = (
    "Wx_q", "Wx_k", "Wx_v",
    "Ws_q", "Ws_k", "Ws_v",
    "W_o",
    "W_z", "W_i", "W_f",
    "b_z", "b_i", "b_f",
    "ln_gain", "ln_bias",
    "c0",
)


@dataclass(frozen=True)
class CellConfig:
    c: int
    m: int
    s: int
    dropout_p: float = 0.0

    def __post_init__(self):
        for name in ("c", "m", "s"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def d_k(self):
        return self.m

    def param_shapes(self):
        c, m, s = self.c, self.m, self.s
        shapes = dict.fromkeys(("Wx_q", "Wx_k", "Wx_v", "Ws_q", "Ws_k", "Ws_v"), (m, m))
        shapes["W_o"] = (s, 2 * c + s)
        shapes.update(dict.fromkeys(("W_z", "W_i", "W_f"), (m, m)))
        shapes.update(dict.fromkeys(("b_z", "b_i", "b_f", "ln_gain", "ln_bias"), (1, m)))
        shapes["c0"] = (s, m)
        return shapes


class CellParams:
    """All learnable tensors of one cell, addressable by name in a fixed order."""

    def __init__(self, config, tensors):
        self.config = config
        shapes = config.param_shapes()
        for name in PARAM_NAMES:
            p = tensors[name]
            if not isinstance(p, Param):
                p = Param(p)
            if p.shape != shapes[name]:
                raise DimensionError(f"{name}: expected shape {shapes[name]}, got {p.shape}")
            setattr(self, name, p)

    @classmethod
    def init(cls, config, rng):
        """Fan-in uniform init; gate biases zero, layer norm identity, small ``c0``."""
        shapes = config.param_shapes()
        bound = 1.0 / np.sqrt(config.m)
        t = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            if name == "W_o":
                b = 1.0 / np.sqrt(shape[1])
                t[name] = rng.uniform(-b, b, shape)
            elif name.startswith("W"):
                t[name] = rng.uniform(-bound, bound, shape)
            elif name == "ln_gain":
                t[name] = np.ones(shape)
            elif name == "c0":
                t[name] = rng.uniform(-0.02, 0.02, shape)
            else:
                t[name] = np.zeros(shape)
        return cls(config, t)

    @classmethod
    def zeros(cls, config):
        return cls(config, {k: np.zeros(v) for k, v in config.param_shapes().items()})

    def named_params(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def params(self):
        return [getattr(self, name) for name in PARAM_NAMES]


class QKV(NamedTuple):
    Qx: np.ndarray
    Kx: np.ndarray
    Vx: np.ndarray
    Qs: np.ndarray
    Ks: np.ndarray
    Vs: np.ndarray


class AttentionOutputs(NamedTuple):
    u_x: np.ndarray
    u_xs: np.ndarray
    u_sx: np.ndarray


def _check_inputs(x_hat, state, config):
    c, m, s = config.c, config.m, config.s
    if x_hat.shape[-2:] != (c, m):
        raise DimensionError(f"window shape {x_hat.shape[-2:]} != (c={c}, m={m})")
    if state.shape[-2:] != (s, m):
        raise DimensionError(f"state shape {state.shape[-2:]} != (s={s}, m={m})")


def project_qkv(x_hat, state, params):
    """Right-multiply window and state by their three projection matrices each."""
    x_hat = nx.as_matrix(x_hat)
    state = nx.as_matrix(state)
    _check_inputs(x_hat, state, params.config)
    return QKV(
        nx.matmul(x_hat, params.Wx_q.value),
        nx.matmul(x_hat, params.Wx_k.value),
        nx.matmul(x_hat, params.Wx_v.value),
        nx.matmul(state, params.Ws_q.value),
        nx.matmul(state, params.Ws_k.value),
        nx.matmul(state, params.Ws_v.value),
    )


def attention(q, k, v, return_weights=False):
    """``softmax(q k^T / sqrt(d_k)) v`` with ``d_k`` the feature width of ``k``."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query{q.shape} and key{k.shape} widths differ")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: key{k.shape} and value{v.shape} token counts differ")
    scale = 1.0 / np.sqrt(k.shape[-1])
    w = nx.softmax_rows(nx.matmul(q, np.swapaxes(k, -1, -2)) * scale)
    out = nx.matmul(w, v)
    if return_weights:
        return out, w
    return out


def attention_backward(q, k, v, w, dout):
    """Gradients of :func:`attention` w.r.t. ``q, k, v`` given cached weights ``w``."""
    scale = 1.0 / np.sqrt(k.shape[-1])
    dw = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(w, -1, -2) @ dout
    dlogits = nx.softmax_rows_backward(w, dw) * scale
    dq = dlogits @ k
    dk = np.swapaxes(dlogits, -1, -2) @ q
    return dq, dk, dv


def self_attention(Qx, Kx, Vx):
    """All-to-all attention among the channel tokens of one window (no mask)."""
    return attention(Qx, Kx, Vx)


def cross_attention(Qa, Kb, Vb):
    """Queries from one token set attend over keys/values of the other."""
    return attention(Qa, Kb, Vb)


def stack_outputs(u):
    return np.concatenate([u.u_x, u.u_xs, u.u_sx], axis=-2)


def fuse_hidden(u, params, training=False, rng=None):
    """Project the stacked attention outputs to ``(s, m)``, layer-normalise, drop out."""
    h0 = nx.matmul(params.W_o.value, stack_outputs(u))
    h = nx.layer_norm(h0, params.ln_gain, params.ln_bias)
    return nx.dropout(h, params.config.dropout_p, training, rng)


def recurrent_gate(h, state, params):
    """Gated update of the state block; the -1/+1 shifts bias towards keeping memory."""
    z, i, f = _gates(h, params)
    return state * f + z * i


def _gates(h, params):
    z = nx.tanh_m(nx.matmul(h, params.W_z.value.T) + params.b_z.value)
    i = nx.sigmoid(nx.matmul(h, params.W_i.value.T) + params.b_i.value + INPUT_GATE_SHIFT)
    f = nx.sigmoid(nx.matmul(h, params.W_f.value.T) + params.b_f.value + FORGET_GATE_SHIFT)
    return z, i, f


# ---------------------------------------------------------------------------
# cached step for training


class StepCache(NamedTuple):
    x_hat: np.ndarray
    state: np.ndarray
    qkv: QKV
    w_x: np.ndarray
    w_xs: np.ndarray
    w_sx: np.ndarray
    stacked: np.ndarray
    h0: np.ndarray
    mask: np.ndarray | None
    h: np.ndarray
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray


def cell_step_forward(x_hat, state, params, training=False, rng=None):
    """Run one step and keep every intermediate needed by :func:`cell_step_backward`."""
    qkv = project_qkv(x_hat, state, params)
    u_x, w_x = attention(qkv.Qx, qkv.Kx, qkv.Vx, return_weights=True)
    u_xs, w_xs = attention(qkv.Qx, qkv.Ks, qkv.Vs, return_weights=True)
    u_sx, w_sx = attention(qkv.Qs, qkv.Kx, qkv.Vx, return_weights=True)
    stacked = stack_outputs(AttentionOutputs(u_x, u_xs, u_sx))
    h0 = nx.matmul(params.W_o.value, stacked)
    h = nx.layer_norm(h0, params.ln_gain, params.ln_bias)
    mask = None
    p = params.config.dropout_p
    if training and p > 0.0:
        mask = nx.dropout_mask(h.shape, p, rng)
        h = h * mask
    z, i, f = _gates(h, params)
    new_state = state * f + z * i
    cache = StepCache(np.asarray(x_hat, dtype=np.float64), np.asarray(state, dtype=np.float64),
                      qkv, w_x, w_xs, w_sx, stacked, h0, mask, h, z, i, f)
    return new_state, cache


def cell_step(x_hat, state, params, training=False, rng=None):
    """One recurrent step: attention, fusion, gate.  Returns the next state block."""
    new_state, _ = cell_step_forward(x_hat, state, params, training, rng)
    return new_state


def cell_step_backward(cache, dnew, params):
    """Accumulate parameter gradients of one step; return the gradient w.r.t. the input state."""
    P = params
    c = P.config.c
    # gate
    dstate = dnew * cache.f
    daz = nx.tanh_backward(cache.z, dnew * cache.i)
    dai = nx.sigmoid_backward(cache.i, dnew * cache.z)
    daf = nx.sigmoid_backward(cache.f, dnew * cache.state)
    dh = 0.0
    for W, b, da in ((P.W_z, P.b_z, daz), (P.W_i, P.b_i, dai), (P.W_f, P.b_f, daf)):
        _, dWt = nx.matmul_backward(cache.h, W.value.T, da)
        W.grad += dWt.T
        b.grad += nx._sum_to(da, b.shape)
        dh = dh + da @ W.value
    if cache.mask is not None:
        dh = dh * cache.mask
    # fusion
    dh0 = nx.layer_norm_backward(cache.h0, P.ln_gain, P.ln_bias, dh)
    dWo, dstacked = nx.matmul_backward(P.W_o.value, cache.stacked, dh0)
    P.W_o.grad += dWo
    du_x = dstacked[..., :c, :]
    du_xs = dstacked[..., c:2 * c, :]
    du_sx = dstacked[..., 2 * c:, :]
    # attention
    q = cache.qkv
    dQx, dKx, dVx = attention_backward(q.Qx, q.Kx, q.Vx, cache.w_x, du_x)
    dQx2, dKs, dVs = attention_backward(q.Qx, q.Ks, q.Vs, cache.w_xs, du_xs)
    dQs, dKx2, dVx2 = attention_backward(q.Qs, q.Kx, q.Vx, cache.w_sx, du_sx)
    dQx = dQx + dQx2
    dKx = dKx + dKx2
    dVx = dVx + dVx2
    # projections
    for W, src, dy in (
        (P.Wx_q, cache.x_hat, dQx), (P.Wx_k, cache.x_hat, dKx), (P.Wx_v, cache.x_hat, dVx),
        (P.Ws_q, cache.state, dQs), (P.Ws_k, cache.state, dKs), (P.Ws_v, cache.state, dVs),
    ):
        dsrc, dW = nx.matmul_backward(src, W.value, dy)
        W.grad += dW
        if src is cache.state:
            dstate = dstate + dsrc
    return dstate
