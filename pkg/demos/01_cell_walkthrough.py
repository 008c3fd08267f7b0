"""
One step of the attentive recurrent cell, piece by piece.

A window of c channels and m samples is treated as c tokens of width m.
The cell attends within the window, across window and state in both
directions, fuses the three results and gates them into the state.
"""

import numpy as np

from arnn import numerics as nx
from arnn.cell import (
    AttentionOutputs, CellConfig, CellParams, attention, cell_step, cross_attention,
    fuse_hidden, project_qkv, recurrent_gate,
)

rng = nx.make_rng(0)
cfg = CellConfig(c=4, m=8, s=3)
params = CellParams.init(cfg, rng)
x = rng.standard_normal((cfg.c, cfg.m))
state = params.c0.value

## Projections: six matrices, three for the window and three for the state
q = project_qkv(x, state, params)
print("Qx", q.Qx.shape, "Qs", q.Qs.shape)

## Self-attention among the channel tokens
u_x, w = attention(q.Qx, q.Kx, q.Vx, return_weights=True)
print("channel-to-channel weights (rows sum to 1):")
print(np.round(w, 3))

## Cross-attention both ways
u_xs = cross_attention(q.Qx, q.Ks, q.Vs)    # window reads the state
u_sx = cross_attention(q.Qs, q.Kx, q.Vx)    # state reads the window
print("u_x", u_x.shape, "u_xs", u_xs.shape, "u_sx", u_sx.shape)

## Fuse and normalise into a hidden block with one row per state vector
h = fuse_hidden(AttentionOutputs(u_x, u_xs, u_sx), params)
print("h rows have mean ~0:", np.round(h.mean(axis=1), 12))

## Gate into the new state; the composition matches cell_step
new = recurrent_gate(h, state, params)
print("matches cell_step:", np.array_equal(new, cell_step(x, state, params)))

## With every weight zero the gate only forgets, by sigmoid(1) per step
zero = CellParams.zeros(cfg)
s = np.ones((cfg.s, cfg.m))
for k in range(1, 6):
    s = cell_step(x, s, zero)
    print(f"step {k}: state = {s[0, 0]:.6f}  sigmoid(1)^{k} = {nx.sigmoid(np.array(1.0)) ** k:.6f}")
