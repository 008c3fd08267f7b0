"""
Train on the synthetic burst task and check a checkpoint round trip.

The full-size run (16 channels, 1024 samples, 100 segments per class,
16 windows, 32 state vectors) takes about a minute per 30 epochs on one
core.  Set SMALL = True for a quick look.
"""

import tempfile
from pathlib import Path

import numpy as np

from arnn import ArnnModel, ModelConfig, SynthConfig, TrainConfig, evaluate, load, save, synth_generate
from arnn.training import split_train_test, train_on_split

SMALL = False
seed = 0

if SMALL:
    synth = SynthConfig(c=4, n=256, count=40, seed=seed)
    config = ModelConfig(4, 256, 8, 8)
else:
    synth = SynthConfig(seed=seed)
    config = ModelConfig(16, 1024, 16, 32)

## Data: colored background noise, class 1 adds sinusoidal bursts
segments = synth_generate(synth)
first_pos = next(s for s in segments if s.label)
print("bursts in first positive:", first_pos.info["bursts"])

## Train with the default schedule (Adam, lr 1e-3 decayed x0.1 every 10 epochs)
tc = TrainConfig(seed=seed)
train_set, test_set = split_train_test(segments, tc.split, tc.seed)
model = ArnnModel.init(config, seed)
model, history = train_on_split(model, train_set, test_set, tc)
for rec in history[::5] + history[-1:]:
    print(f"epoch {rec.epoch:2d} lr {rec.lr:.0e} loss {rec.train_loss:.4f} test acc {rec.test_accuracy:.3f}")

## Held-out metrics
m = evaluate(model, test_set)
print(m.as_dict())

## Checkpoint round trip is bit-exact
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.arnn"
    save(model, path)
    again = load(path)
    x = np.stack([s.data for s in test_set[:4]])
    print("identical logits:", model.forward(x).logit.tobytes() == again.forward(x).logit.tobytes())
