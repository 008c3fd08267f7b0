"""Central finite-difference verification of the model's analytic gradients."""

import numpy as np

from . import numerics as nx
from .model import ArnnModel, ModelConfig
from .training import bce_loss

CONFIGS = {
    "small": ModelConfig(c=2, n=16, l=4, s=3),
    "default": ModelConfig(c=4, n=48, l=6, s=5),
}

# Entries whose gradient is below this magnitude are compared absolutely.
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Entry-wise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic)
    b = np.asarray(numeric)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def batch_loss(model, x, y):
    out = model.forward(x)
    loss, dlogit = bce_loss(out.prob, y)
    return loss, dlogit


def analytic_grads(model, x, y):
    model.zero_grads()
    _, dlogit = batch_loss(model, x, y)
    model.backward(dlogit)
    return {name: p.grad.copy() for name, p in model.named_params()}


def numeric_grad(model, param, x, y, eps):
    g = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up, _ = batch_loss(model, x, y)
        flat[k] = orig - eps
        down, _ = batch_loss(model, x, y)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * eps)
    model._cache = None
    return g


def check_model(model, x, y, eps=1e-5):
    """Worst relative error per parameter tensor, in checkpoint order."""
    grads = analytic_grads(model, x, y)
    worst = {}
    for name, p in model.named_params():
        num = numeric_grad(model, p, x, y, eps)
        worst[name] = float(relative_error(grads[name], num).max())
    return worst


def seeded_problem(config, seed=0, batch=2):
    """A random model plus a small labelled batch for gradient checking."""
    rng = nx.make_rng(seed)
    model = ArnnModel.init(config, rng)
    # perturb away from the structured init so every tensor carries signal
    for name, p in model.named_params():
        p.value += rng.normal(0.0, 0.1, p.shape)
    x = rng.normal(0.0, 1.0, (batch, config.c, config.n))
    y = (np.arange(batch) % 2).astype(np.float64)
    return model, x, y
