import math

import numpy as np
import pytest

from arnn import numerics as nx
from arnn.cell import (
    AttentionOutputs, CellConfig, CellParams, attention, cell_step, cell_step_backward,
    cell_step_forward, cross_attention, fuse_hidden, project_qkv, recurrent_gate,
    self_attention,
)
from arnn.errors import ConfigError, DimensionError

SIG1 = 1.0 / (1.0 + math.exp(-1.0))


def loop_attention(q, k, v):
    """Explicit loops, own exp/normalise; no shared code with the library path."""
    r, d = q.shape
    t = k.shape[0]
    out = np.zeros((r, v.shape[1]))
    for i in range(r):
        logits = [sum(q[i, a] * k[j, a] for a in range(d)) / math.sqrt(d) for j in range(t)]
        top = max(logits)
        w = [math.exp(x - top) for x in logits]
        z = sum(w)
        for j in range(t):
            out[i] += (w[j] / z) * v[j]
    return out


def loop_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def random_params(cfg, seed=0, scale=0.3):
    rng = nx.make_rng(seed)
    p = CellParams.init(cfg, rng)
    for _, t in p.named_params():
        t.value += rng.normal(0, scale, t.shape)
    return p


@pytest.fixture
def cfg():
    return CellConfig(c=3, m=4, s=2)


class TestConfig:
    def test_dk_is_window_length(self, cfg):
        assert cfg.d_k == cfg.m

    @pytest.mark.parametrize("bad", [dict(c=0, m=4, s=2), dict(c=1, m=4, s=0), dict(c=1, m=4, s=1, dropout_p=1.0)])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            CellConfig(**bad)

    def test_param_shapes(self):
        cfg = CellConfig(c=5, m=7, s=3)
        p = CellParams.init(cfg, nx.make_rng(0))
        shapes = {k: v.shape for k, v in p.named_params()}
        assert shapes["W_o"] == (3, 13)
        assert shapes["Wx_q"] == shapes["W_f"] == (7, 7)
        assert shapes["b_i"] == shapes["ln_gain"] == (1, 7)
        assert shapes["c0"] == (3, 7)

    def test_init_ranges(self):
        cfg = CellConfig(c=4, m=16, s=8)
        p = CellParams.init(cfg, nx.make_rng(1))
        assert np.abs(p.Wx_q.value).max() <= 0.25
        assert np.abs(p.c0.value).max() <= 0.02
        assert not p.b_i.value.any() and not p.b_f.value.any()
        assert np.all(p.ln_gain.value == 1.0)


class TestProjection:
    def test_identity(self, cfg):
        p = CellParams.zeros(cfg)
        for name in ("Wx_q", "Wx_k", "Wx_v", "Ws_q", "Ws_k", "Ws_v"):
            getattr(p, name).value[...] = np.eye(cfg.m)
        x = np.arange(12.0).reshape(3, 4)
        s = np.ones((2, 4))
        q = project_qkv(x, s, p)
        for t in (q.Qx, q.Kx, q.Vx):
            np.testing.assert_array_equal(t, x)
        np.testing.assert_array_equal(q.Vs, s)

    def test_zero(self, cfg):
        q = project_qkv(np.ones((3, 4)), np.ones((2, 4)), CellParams.zeros(cfg))
        assert all(not t.any() for t in q)

    def test_random_vs_matmul(self, cfg):
        p = random_params(cfg)
        rng = np.random.default_rng(0)
        x, s = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        q = project_qkv(x, s, p)
        np.testing.assert_array_equal(q.Qx, nx.matmul(x, p.Wx_q.value))
        np.testing.assert_array_equal(q.Ks, nx.matmul(s, p.Ws_k.value))

    def test_shape_error(self, cfg):
        with pytest.raises(DimensionError):
            project_qkv(np.ones((3, 5)), np.ones((2, 4)), CellParams.zeros(cfg))


class TestAttention:
    def test_single_token(self):
        rng = np.random.default_rng(0)
        q, k, v = rng.normal(size=(3, 1, 4))
        out, w = attention(q, k, v, return_weights=True)
        np.testing.assert_array_equal(w, [[1.0]])
        np.testing.assert_array_equal(out, v)

    def test_zero_keys_average_values(self):
        rng = np.random.default_rng(1)
        q, v = rng.normal(size=(2, 3, 4))
        out = self_attention(q, np.zeros((3, 4)), v)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (3, 1)), atol=1e-15)

    def test_self_vs_loops(self):
        rng = np.random.default_rng(2)
        q, k, v = rng.normal(size=(3, 3, 4))
        assert np.max(np.abs(self_attention(q, k, v) - loop_attention(q, k, v))) < 1e-12

    def test_cross_single_state(self):
        rng = np.random.default_rng(3)
        qa = rng.normal(size=(5, 4))
        kb, vb = rng.normal(size=(2, 1, 4))
        np.testing.assert_allclose(cross_attention(qa, kb, vb), np.tile(vb, (5, 1)), atol=1e-15)

    def test_cross_zero_query(self):
        rng = np.random.default_rng(4)
        kb, vb = rng.normal(size=(2, 3, 4))
        out = cross_attention(np.zeros((2, 4)), kb, vb)
        np.testing.assert_allclose(out, np.tile(vb.mean(axis=0), (2, 1)), atol=1e-15)

    def test_cross_vs_loops(self):
        rng = np.random.default_rng(5)
        qx, kx, vx = rng.normal(size=(3, 2, 4))
        qs, ks, vs = rng.normal(size=(3, 3, 4))
        assert np.max(np.abs(cross_attention(qx, ks, vs) - loop_attention(qx, ks, vs))) < 1e-12
        assert np.max(np.abs(cross_attention(qs, kx, vx) - loop_attention(qs, kx, vx))) < 1e-12

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            cross_attention(np.ones((2, 4)), np.ones((3, 5)), np.ones((3, 5)))

    def test_weights_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            q, k, v = rng.normal(scale=10, size=(3, 6, 5))
            _, w = attention(q, k, v, return_weights=True)
            assert np.max(np.abs(w.sum(axis=-1) - 1)) < 1e-12

    def test_query_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=(5, 4))
        k, v = rng.normal(size=(2, 3, 4))
        perm = rng.permutation(5)
        np.testing.assert_allclose(attention(q[perm], k, v), attention(q, k, v)[perm], atol=1e-15)

    def test_depends_only_on_scaled_logits(self):
        rng = np.random.default_rng(8)
        q, k, v = rng.normal(size=(3, 3, 4))
        # scaling q by a and k by 1/a keeps q k^T fixed
        a = 3.7
        np.testing.assert_allclose(self_attention(q * a, k / a, v), self_attention(q, k, v), atol=1e-12)


class TestFuse:
    def test_selector_projection(self, cfg):
        p = CellParams.zeros(cfg)
        p.ln_gain.value[...] = 1.0
        c, s = cfg.c, cfg.s
        p.W_o.value[:, 2 * c:] = np.eye(s)
        rng = np.random.default_rng(0)
        u = AttentionOutputs(rng.normal(size=(c, 4)), rng.normal(size=(c, 4)), rng.normal(size=(s, 4)))
        expect = nx.layer_norm(u.u_sx, p.ln_gain, p.ln_bias)
        np.testing.assert_allclose(fuse_hidden(u, p), expect, atol=1e-15)

    def test_zero_inputs_give_bias(self, cfg):
        p = random_params(cfg)
        u = AttentionOutputs(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((2, 4)))
        np.testing.assert_allclose(fuse_hidden(u, p), np.tile(p.ln_bias.value, (2, 1)), atol=1e-15)

    def test_random_vs_composition(self, cfg):
        p = random_params(cfg, seed=3)
        rng = np.random.default_rng(1)
        u = AttentionOutputs(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(2, 4)))
        stacked = np.vstack(u)
        h0 = loop_matmul_rows(p.W_o.value, stacked)
        mu = h0.mean(axis=1, keepdims=True)
        var = ((h0 - mu) ** 2).mean(axis=1, keepdims=True)
        expect = (h0 - mu) / np.sqrt(var + 1e-5) * p.ln_gain.value + p.ln_bias.value
        assert np.max(np.abs(fuse_hidden(u, p) - expect)) < 1e-12

    def test_dropout_only_in_training(self):
        cfg = CellConfig(c=3, m=4, s=2, dropout_p=0.5)
        p = random_params(cfg)
        rng = np.random.default_rng(2)
        u = AttentionOutputs(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(2, 4)))
        ev = fuse_hidden(u, p)
        tr = fuse_hidden(u, p, training=True, rng=nx.make_rng(0))
        kept = tr != 0
        np.testing.assert_allclose(tr[kept], 2 * ev[kept])


def loop_matmul_rows(a, b):
    return np.array([[sum(a[i, k] * b[k, j] for k in range(a.shape[1])) for j in range(b.shape[1])]
                     for i in range(a.shape[0])])


class TestGate:
    def test_zero_params_remember_bias(self, cfg):
        p = CellParams.zeros(cfg)
        state = np.random.default_rng(0).normal(size=(2, 4))
        new = recurrent_gate(np.zeros((2, 4)), state, p)
        np.testing.assert_allclose(new, SIG1 * state, atol=1e-15)
        assert abs(SIG1 - 0.7310586) < 1e-7
        assert abs(loop_sigmoid(-1.0) - 0.2689414) < 1e-7

    def test_zero_fixed_point(self, cfg):
        p = random_params(cfg)
        p.W_z.value[...] = 0.0
        p.b_z.value[...] = 0.0
        h = np.random.default_rng(1).normal(size=(2, 4))
        np.testing.assert_array_equal(recurrent_gate(h, np.zeros((2, 4)), p), np.zeros((2, 4)))

    def test_vs_loops(self):
        cfg = CellConfig(c=2, m=4, s=3)
        p = random_params(cfg, seed=5, scale=0.5)
        rng = np.random.default_rng(2)
        h, state = rng.normal(size=(2, 3, 4))
        expect = np.zeros((3, 4))
        for r in range(3):
            for j in range(4):
                az = sum(p.W_z.value[j, k] * h[r, k] for k in range(4)) + p.b_z.value[0, j]
                ai = sum(p.W_i.value[j, k] * h[r, k] for k in range(4)) + p.b_i.value[0, j] - 1
                af = sum(p.W_f.value[j, k] * h[r, k] for k in range(4)) + p.b_f.value[0, j] + 1
                expect[r, j] = state[r, j] * loop_sigmoid(af) + math.tanh(az) * loop_sigmoid(ai)
        assert np.max(np.abs(recurrent_gate(h, state, p) - expect)) < 1e-12


class TestCellStep:
    @pytest.mark.parametrize("c,m,s", [(1, 1, 1), (4, 8, 2), (16, 64, 32), (2, 3, 7)])
    def test_shape(self, c, m, s):
        cfg = CellConfig(c, m, s)
        p = CellParams.init(cfg, nx.make_rng(0))
        rng = np.random.default_rng(0)
        out = cell_step(rng.normal(size=(c, m)), rng.normal(size=(s, m)), p)
        assert out.shape == (s, m)

    def test_zero_params_contract(self, cfg):
        p = CellParams.zeros(cfg)
        rng = np.random.default_rng(1)
        state = rng.normal(size=(2, 4))
        x = rng.normal(size=(3, 4))
        s = state
        for k in range(1, 51):
            s = cell_step(x, s, p)
            np.testing.assert_allclose(s, SIG1 ** k * state, rtol=1e-9, atol=1e-15)

    def test_equals_composition(self):
        cfg = CellConfig(c=3, m=5, s=4)
        p = random_params(cfg, seed=9)
        rng = np.random.default_rng(3)
        x, state = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
        q = project_qkv(x, state, p)
        u = AttentionOutputs(self_attention(q.Qx, q.Kx, q.Vx),
                             cross_attention(q.Qx, q.Ks, q.Vs),
                             cross_attention(q.Qs, q.Kx, q.Vx))
        expect = recurrent_gate(fuse_hidden(u, p), state, p)
        assert np.max(np.abs(cell_step(x, state, p) - expect)) < 1e-12

    def test_bounded_over_many_steps(self):
        cfg = CellConfig(c=4, m=8, s=3)
        p = random_params(cfg, seed=2, scale=1.0)
        rng = np.random.default_rng(4)
        s = p.c0.value
        for _ in range(10_000):
            s = cell_step(rng.uniform(-1, 1, size=(4, 8)), s, p)
        assert np.all(np.isfinite(s))
        # with f < 1 and |z i| < 1 the state stays within 1 / (1 - f_max) of zero
        assert np.abs(s).max() < 1e6

    def test_batched_matches_single(self):
        cfg = CellConfig(c=3, m=4, s=2)
        p = random_params(cfg)
        rng = np.random.default_rng(5)
        xb, sb = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 2, 4))
        out = cell_step(xb, sb, p)
        for i in range(5):
            np.testing.assert_allclose(out[i], cell_step(xb[i], sb[i], p), atol=1e-14)


def test_cell_step_gradients_fd():
    cfg = CellConfig(c=2, m=3, s=2)
    p = random_params(cfg, seed=11, scale=0.5)
    rng = np.random.default_rng(6)
    x, state = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    weight = rng.normal(size=(2, 3))

    def loss():
        return float((cell_step(x, state, p) * weight).sum())

    _, cache = cell_step_forward(x, state, p)
    nx.zero_grads(p.params())
    dstate = cell_step_backward(cache, weight, p)
    eps = 1e-5
    for name, t in p.named_params():
        if name == "c0":
            continue
        num = np.zeros_like(t.value)
        for idx in np.ndindex(t.shape):
            o = t.value[idx]
            t.value[idx] = o + eps
            up = loss()
            t.value[idx] = o - eps
            down = loss()
            t.value[idx] = o
            num[idx] = (up - down) / (2 * eps)
        rel = np.abs(t.grad - num) / np.maximum(np.maximum(np.abs(t.grad), np.abs(num)), 1e-6)
        assert rel.max() < 1e-4, name
    num = np.zeros_like(state)
    for idx in np.ndindex(state.shape):
        o = state[idx]
        state[idx] = o + eps
        up = loss()
        state[idx] = o - eps
        down = loss()
        state[idx] = o
        num[idx] = (up - down) / (2 * eps)
    np.testing.assert_allclose(dstate, num, rtol=1e-4, atol=1e-9)
