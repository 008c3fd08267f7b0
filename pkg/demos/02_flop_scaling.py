"""
How the cost of the windowed attention path changes with the window count.

Counts are exact multiply-adds (two FLOPs each) over matrix products only.
The projection term falls as 1/l; the channel-score term c*c*m summed over
l windows stays at c*c*n.  An instrumented matmul confirms both.
"""

import numpy as np

from arnn import bench
from arnn.model import ArnnModel, ModelConfig

c, n = 16, 1024

## Analytic counts over the ablation sweep
print(f"{'l':>4s} {'flops_arnn':>12s} {'flops*l':>12s} {'projection':>12s} {'scores':>10s}")
for l in (1, 2, 4, 8, 16, 32, 64):
    terms = bench.flops_arnn_terms(c, n, l, 32)
    f = bench.flops_arnn(c, n, l)
    print(f"{l:4d} {f:12d} {f * l:12d} {terms['input_projection']:12d} {terms['self_attention']:10d}")
print("full attention:", bench.flops_full(c, n))

## Cross-check against counted multiply-adds
x = np.random.default_rng(0).standard_normal((c, 400))
model = ArnnModel.init(ModelConfig(c, 400, 4, 8), 0)
with bench.count_cell_macs() as counter:
    bench.arnn_self_attention_path(x, model.cell, 4)
print("counted", counter.flops, "analytic", bench.flops_arnn(c, 400, 4))

## A short timing sweep (single-threaded BLAS, median of repeats)
records = bench.sweep([(c, n, l, 32) for l in (2, 8, 32)], repeats=5, batch=10)
for r in records:
    print(f"{r.mechanism:15s} l={r.l:3d} {r.median_ms:8.2f} ms")
