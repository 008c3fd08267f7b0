"""Segment classifier: windowing, recurrence over windows, pooled head, checkpoints."""

import struct
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from ._atomic import atomic_open
from .cell import PARAM_NAMES, CellConfig, CellParams, cell_step_backward, cell_step_forward
from .errors import ConfigError, DimensionError, FormatError, StateError
from .numerics import Param

MAGIC = b"ARNN"
VERSION = 1
CHECKPOINT_ORDER = PARAM_NAMES + ("head_w", "head_b")
_HEADER = struct.Struct("<4I")


@dataclass(frozen=True)
class ModelConfig:
    c: int
    n: int
    l: int
    s: int
    dropout_p: float = 0.0

    def __post_init__(self):
        for name in ("c", "n", "l", "s"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if self.n % self.l:
            raise ConfigError(f"window count l={self.l} does not divide segment length n={self.n}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def m(self):
        return self.n // self.l

    def cell_config(self):
        return CellConfig(self.c, self.m, self.s, self.dropout_p)


def window_segment(x, l):
    """Split ``x`` of shape ``(..., c, n)`` into ``l`` consecutive column blocks of width ``n/l``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if l < 1 or n % l:
        raise ConfigError(f"window count l={l} does not divide segment length n={n}")
    m = n // l
    return [x[..., p * m:(p + 1) * m] for p in range(l)]


class ForwardResult(NamedTuple):
    logit: np.ndarray
    prob: np.ndarray
    states: list


class ArnnModel:
    """Attentive recurrent classifier for ``(c, n)`` segments.

    The final state block is mean-pooled over its ``s`` rows and mapped to a
    single logit by an affine head.
    """

    def __init__(self, config, cell, head_w, head_b):
        self.config = config
        self.cell = cell
        self.head_w = head_w if isinstance(head_w, Param) else Param(head_w)
        self.head_b = head_b if isinstance(head_b, Param) else Param(head_b)
        if self.head_w.shape != (1, config.m) or self.head_b.shape != (1, 1):
            raise DimensionError(
                f"head shapes {self.head_w.shape}/{self.head_b.shape} do not fit m={config.m}"
            )
        self._cache = None

    @classmethod
    def init(cls, config, rng):
        if isinstance(rng, (int, np.integer)):
            rng = nx.make_rng(rng)
        cell = CellParams.init(config.cell_config(), rng)
        bound = 1.0 / np.sqrt(config.m)
        return cls(config, cell, rng.uniform(-bound, bound, (1, config.m)), np.zeros((1, 1)))

    @classmethod
    def zeros(cls, config):
        return cls(config, CellParams.zeros(config.cell_config()),
                   np.zeros((1, config.m)), np.zeros((1, 1)))

    def with_dropout(self, p):
        """Same parameter objects, different dropout rate."""
        config = replace(self.config, dropout_p=p)
        cell = CellParams(config.cell_config(), dict(self.cell.named_params()))
        return ArnnModel(config, cell, self.head_w, self.head_b)

    def named_params(self):
        return self.cell.named_params() + [("head_w", self.head_w), ("head_b", self.head_b)]

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grads(self):
        nx.zero_grads(self.params())

    # -- forward / backward -------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        cfg = self.config
        if x.ndim not in (2, 3) or x.shape[-2:] != (cfg.c, cfg.n):
            raise DimensionError(f"segment shape {x.shape} does not match (c={cfg.c}, n={cfg.n})")
        return x

    def forward(self, x, training=False, rng=None):
        """Run the recurrence over all windows of ``x`` (``(c, n)`` or ``(B, c, n)``).

        Returns the logit, the probability and the ``l + 1`` state blocks
        ``c_0 .. c_l``.  Intermediates are cached for :meth:`backward`.
        """
        x = self._check(x)
        batch_shape = x.shape[:-2]
        params = self.cell
        state = np.broadcast_to(params.c0.value, batch_shape + params.c0.shape).copy()
        states = [state]
        caches = []
        for window in window_segment(x, self.config.l):
            state, cache = cell_step_forward(window, state, params, training, rng)
            states.append(state)
            caches.append(cache)
        feature = state.mean(axis=-2)
        mask = None
        p = self.config.dropout_p
        if training and p > 0.0:
            mask = nx.dropout_mask(feature.shape, p, rng)
            feature = feature * mask
        logit = feature @ self.head_w.value[0] + self.head_b.value[0, 0]
        prob = nx.sigmoid(logit)
        self._cache = (caches, feature, mask, batch_shape)
        return ForwardResult(logit, prob, states)

    def backward(self, dlogit):
        """Accumulate gradients of a scalar loss given ``d loss / d logit``.

        Raises
        ------
        StateError
            If no forward pass has been cached.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        caches, feature, mask, batch_shape = self._cache
        dlogit = np.asarray(dlogit, dtype=np.float64).reshape(batch_shape)
        self.head_w.grad += (dlogit[..., None] * feature).reshape(-1, self.config.m).sum(0)[None]
        self.head_b.grad += dlogit.sum()
        dfeature = dlogit[..., None] * self.head_w.value[0]
        if mask is not None:
            dfeature = dfeature * mask
        s = self.config.s
        dstate = np.broadcast_to(dfeature[..., None, :] / s, batch_shape + (s, self.config.m))
        for cache in reversed(caches):
            dstate = cell_step_backward(cache, dstate, self.cell)
        self.cell.c0.grad += nx._sum_to(dstate, self.cell.c0.shape)
        self._cache = None

    def predict(self, x, threshold=0.5):
        """1 where the probability reaches ``threshold`` (ties count as positive)."""
        prob = self.forward(x).prob
        self._cache = None
        return (prob >= threshold).astype(int)

    # -- persistence --------------------------------------------------------

    def to_bytes(self):
        cfg = self.config
        parts = [MAGIC, bytes([VERSION]), _HEADER.pack(cfg.c, cfg.n, cfg.l, cfg.s)]
        params = dict(self.named_params())
        for name in CHECKPOINT_ORDER:
            parts.append(params[name].value.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < 5 + _HEADER.size:
            raise FormatError(f"header truncated: {len(buf)} bytes")
        if buf[:4] != MAGIC:
            raise FormatError(f"magic: expected {MAGIC!r}, got {bytes(buf[:4])!r}")
        if buf[4] != VERSION:
            raise FormatError(f"version: expected {VERSION}, got {buf[4]}")
        c, n, l, s = _HEADER.unpack_from(buf, 5)
        try:
            config = ModelConfig(c, n, l, s)
        except ConfigError as e:
            raise FormatError(f"dims c={c}, n={n}, l={l}, s={s}: {e}") from None
        shapes = config.cell_config().param_shapes()
        shapes["head_w"] = (1, config.m)
        shapes["head_b"] = (1, 1)
        need = sum(int(np.prod(shapes[k])) for k in CHECKPOINT_ORDER) * 8
        offset = 5 + _HEADER.size
        if len(buf) - offset != need:
            raise FormatError(
                f"payload is {len(buf) - offset} bytes but dims c={c}, n={n}, l={l}, s={s} "
                f"require {need}"
            )
        tensors = {}
        for name in CHECKPOINT_ORDER:
            count = int(np.prod(shapes[name]))
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
            tensors[name] = arr.astype(np.float64).reshape(shapes[name])
            offset += count * 8
        cell = CellParams(config.cell_config(), {k: tensors[k] for k in PARAM_NAMES})
        return cls(config, cell, tensors["head_w"], tensors["head_b"])


def save(model, path):
    """Write a checkpoint atomically (temp file + rename)."""
    with atomic_open(path, "wb") as fh:
        fh.write(model.to_bytes())


def load(path):
    with open(path, "rb") as fh:
        return ArnnModel.from_bytes(fh.read())
