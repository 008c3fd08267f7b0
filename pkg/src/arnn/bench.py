"""FLOP model, a naive full-attention baseline, and wall-clock sweeps.

Counting convention: one multiply-add is two FLOPs and only matrix
products are counted (softmax, normalisation and elementwise gates are
free).  For ``m = n / l``:

* full attention over a ``(c, n)`` segment with ``(n, n)`` projections::

      flops_full = 3 * 2*c*n*n  +  2 * 2*c*c*n

* the cell's self-attention path, summed over ``l`` windows::

      flops_arnn = l * (3 * 2*c*m*m  +  2 * 2*c*c*m)  =  6*c*n*n/l + 4*c*c*n

* the remaining cell work (state projections, both cross-attentions,
  fusion, gate) is reported separately by :func:`flops_arnn_terms`.
"""

import csv
import math
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from ._atomic import atomic_open
from .cell import self_attention
from .errors import ConfigError, DimensionError
from .model import ArnnModel, ModelConfig

CSV_COLUMNS = ("mechanism", "c", "n", "l", "s", "flops", "median_ms", "repeats")
DEFAULT_GRID = tuple((16, 1024, l, 32) for l in (2, 4, 8, 16, 32, 64))


def full_attention_forward(x, wq, wk, wv, matmul=np.matmul):
    """Single-window attention over the whole segment: ``softmax(QK^T/sqrt(n)) V``.

    Written independently of :mod:`arnn.cell` so that it can serve as an
    oracle.  ``x`` is ``(c, n)`` (or batched), each weight is ``(n, n)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if np.shape(w) != (n, n):
            raise DimensionError(f"{name} has shape {np.shape(w)}, expected ({n}, {n}) for x{x.shape}")
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    logits = matmul(q, np.swapaxes(k, -1, -2)) / math.sqrt(n)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return matmul(e / e.sum(axis=-1, keepdims=True), v)


# ---------------------------------------------------------------------------
# analytic counts


def _window(n, l):
    if l < 1 or n % l:
        raise ConfigError(f"window count l={l} does not divide segment length n={n}")
    return n // l


def flops_full(c, n):
    return 3 * (2 * c * n * n) + 2 * (2 * c * c * n)


def flops_arnn(c, n, l):
    """Self-attention path of the cell summed over all ``l`` windows."""
    m = _window(n, l)
    return l * (3 * (2 * c * m * m) + 2 * (2 * c * c * m))


def flops_arnn_terms(c, n, l, s):
    """Per-component FLOPs of a full forward over one segment."""
    m = _window(n, l)
    return {
        "input_projection": l * 3 * (2 * c * m * m),
        "self_attention": l * 2 * (2 * c * c * m),
        "state_projection": l * 3 * (2 * s * m * m),
        "cross_attention": l * 2 * 2 * (2 * c * s * m),
        "fusion": l * 2 * s * (2 * c + s) * m,
        "gate": l * 3 * (2 * s * m * m),
    }


class MacCounter:
    """Callable stand-in for ``matmul`` that tallies multiply-adds."""

    def __init__(self, inner=np.matmul):
        self.inner = inner
        self.macs = 0

    def __call__(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        out = self.inner(a, b)
        batch = int(np.prod(np.broadcast_shapes(a.shape[:-2], b.shape[:-2])))
        self.macs += batch * a.shape[-2] * a.shape[-1] * b.shape[-1]
        return out

    @property
    def flops(self):
        return 2 * self.macs


@contextmanager
def count_cell_macs():
    """Route every ``numerics.matmul`` call through a :class:`MacCounter`."""
    original = nx.matmul
    counter = MacCounter(original)
    nx.matmul = counter
    try:
        yield counter
    finally:
        nx.matmul = original


def arnn_self_attention_path(x, params, l):
    """Input projections and self-attention for each window; no state interaction.

    The windows are independent here, so all ``l`` of them go through one
    batched call.  Returns an array of shape ``(..., l, c, m)``.
    """
    x = np.asarray(x, dtype=np.float64)
    m = _window(x.shape[-1], l)
    # (..., c, n) -> (..., l, c, m)
    windows = np.swapaxes(x.reshape(x.shape[:-1] + (l, m)), -3, -2)
    q = nx.matmul(windows, params.Wx_q.value)
    k = nx.matmul(windows, params.Wx_k.value)
    v = nx.matmul(windows, params.Wx_v.value)
    return self_attention(q, k, v)


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    c: int
    n: int
    l: int
    s: int
    flops: int
    median_ms: float
    repeats: int
    std_ms: float = 0.0

    def row(self):
        return [self.mechanism, self.c, self.n, self.l, self.s, self.flops,
                repr(float(self.median_ms)), self.repeats]


@contextmanager
def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _time(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times), (statistics.stdev(times) if len(times) > 1 else 0.0)


def validate_grid(grid):
    points = []
    for idx, row in enumerate(grid, start=1):
        try:
            c, n, l, s = (int(v) for v in row)
            ModelConfig(c, n, l, s)
        except (ValueError, TypeError, ConfigError) as e:
            raise ConfigError(f"grid row {idx} {tuple(row)}: {e}") from None
        points.append((c, n, l, s))
    if not points:
        raise ConfigError("grid is empty")
    return points


def sweep(grid=DEFAULT_GRID, repeats=5, batch=50, seed=0, warmup=2, mechanisms=("arnn", "full_attention")):
    """Time the two attention mechanisms over a batch of random segments.

    The ``arnn`` rows time :func:`arnn_self_attention_path`, the same scope
    as their ``flops`` column and as the full-attention baseline; the state
    path is not part of the comparison.  Every timed region runs with BLAS
    limited to one thread.  Full-attention timings depend only on ``(c, n)``
    and are measured once per pair.
    """
    if repeats < 5:
        raise ConfigError(f"repeats must be >= 5, got {repeats}")
    points = validate_grid(grid)
    records = []
    full_cache = {}
    with _single_thread():
        for c, n, l, s in points:
            rng = nx.make_rng(seed)
            x = rng.standard_normal((batch, c, n))
            if "arnn" in mechanisms:
                cell = ArnnModel.init(ModelConfig(c, n, l, s), rng).cell
                med, sd = _time(lambda: arnn_self_attention_path(x, cell, l), repeats, warmup)
                records.append(BenchRecord("arnn", c, n, l, s, flops_arnn(c, n, l), med, repeats, sd))
            if "full_attention" in mechanisms:
                if (c, n) not in full_cache:
                    b = 1.0 / math.sqrt(n)
                    w = [rng.uniform(-b, b, (n, n)) for _ in range(3)]
                    full_cache[(c, n)] = _time(lambda: full_attention_forward(x, *w), repeats, warmup)
                med, sd = full_cache[(c, n)]
                records.append(BenchRecord("full_attention", c, n, l, s, flops_full(c, n), med, repeats, sd))
    return records


def write_csv(records, path_or_file):
    """CSV with columns ``mechanism,c,n,l,s,flops,median_ms,repeats``."""
    if hasattr(path_or_file, "write"):
        _write_rows(records, path_or_file)
        return
    with atomic_open(path_or_file) as fh:
        _write_rows(records, fh)


def _write_rows(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())


def read_grid(path):
    """Grid CSV with header ``c,n,l,s``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["c", "n", "l", "s"]:
        raise ConfigError(f"{path}: header must be 'c,n,l,s'")
    return [r for r in rows[1:] if r]
