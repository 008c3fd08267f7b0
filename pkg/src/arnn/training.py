"""Mini-batch Adam training with binary cross-entropy and confusion-matrix metrics."""

import csv
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from ._atomic import atomic_open
from .errors import DataError, DimensionError, ParameterError

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 10
    epochs: int = 30
    dropout_p: float = 0.3
    seed: int = 0
    split: float = 0.75
    verbose: bool = False

    def __post_init__(self):
        if not self.lr0 >= 0:
            raise ParameterError(f"lr0 must be non-negative, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ParameterError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.decay_every < 1:
            raise ParameterError(f"decay_every must be >= 1, got {self.decay_every}")
        if not 0 < self.split < 1:
            raise ParameterError(f"split must be in (0, 1), got {self.split}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")


# ---------------------------------------------------------------------------
# loss / schedule / optimiser


def bce_loss(prob, label):
    """Mean binary cross-entropy and its gradient w.r.t. the logit.

    ``prob`` and ``label`` may be scalars or equal-length arrays; the
    gradient is ``(p - y) / B`` so that it matches the batch mean.
    """
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    size = max(losses.size, 1)
    dlogit = (np.asarray(prob, dtype=np.float64) - y) / size
    return float(losses.mean()), dlogit


def lr_at(epoch, config):
    """Step decay: ``lr0 * decay_factor ** (epoch // decay_every)``."""
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


def adam_step(params, adam, lr):
    """One bias-corrected Adam update in place.  Gradients are left untouched."""
    adam.t += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** adam.t
    c2 = 1.0 - b2 ** adam.t
    for p, m, v in zip(params, adam.m, adam.v):
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)


# ---------------------------------------------------------------------------
# data handling


def split_train_test(dataset, split=0.75, seed=0):
    """Seeded shuffle, then the first ``max(1, floor(split * N))`` items train."""
    dataset = list(dataset)
    if not dataset:
        raise DataError("cannot split an empty dataset")
    if not 0 < split < 1:
        raise ParameterError(f"split must be in (0, 1), got {split}")
    order = nx.make_rng(seed).permutation(len(dataset))
    n_train = max(1, math.floor(split * len(dataset)))
    train = [dataset[i] for i in order[:n_train]]
    test = [dataset[i] for i in order[n_train:]]
    if not test:
        warnings.warn(f"test split is empty ({len(dataset)} segment(s) total)", stacklevel=2)
    return train, test


def _stack(segments, config):
    want = (config.c, config.n)
    for idx, seg in enumerate(segments):
        if np.shape(seg.data) != want:
            raise DimensionError(f"segment {idx} has shape {np.shape(seg.data)}, expected {want}")
    x = np.stack([np.asarray(s.data, dtype=np.float64) for s in segments])
    y = np.array([s.label for s in segments], dtype=np.float64)
    return x, y


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @classmethod
    def from_predictions(cls, labels, preds):
        labels = np.asarray(labels).astype(int)
        preds = np.asarray(preds).astype(int)
        return cls(
            tp=int(np.sum((preds == 1) & (labels == 1))),
            fp=int(np.sum((preds == 1) & (labels == 0))),
            fn=int(np.sum((preds == 0) & (labels == 1))),
            tn=int(np.sum((preds == 0) & (labels == 0))),
        )

    def as_dict(self):
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
        }


def predict_probs(model, segments, batch_size=50):
    """Eval-mode probabilities for a list of segments, in order."""
    if not segments:
        return np.zeros(0)
    x, _ = _stack(segments, model.config)
    out = [model.forward(x[i:i + batch_size]).prob for i in range(0, len(x), batch_size)]
    model._cache = None
    return np.concatenate(out)


def evaluate(model, segments, threshold=0.5):
    """Micro-averaged confusion metrics at ``threshold`` (ties predict 1)."""
    if not segments:
        raise DataError("cannot evaluate on an empty set")
    probs = predict_probs(model, segments)
    labels = [s.label for s in segments]
    return Metrics.from_predictions(labels, probs >= threshold)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_accuracy: float
    test_f1: float


LOG_COLUMNS = ("epoch", "lr", "train_loss", "test_accuracy", "test_f1")


def train_on_split(model, train_set, test_set, config):
    """Train on an explicit split.  See :func:`train`."""
    model = model.with_dropout(config.dropout_p)
    x, y = _stack(train_set, model.config)
    if test_set:
        _stack(test_set, model.config)
    rng = nx.make_rng(config.seed)
    params = model.params()
    adam = AdamState(params)
    history = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            model.zero_grads()
            out = model.forward(x[idx], training=True, rng=rng)
            loss, dlogit = bce_loss(out.prob, y[idx])
            model.backward(dlogit)
            adam_step(params, adam, lr)
            total += loss * len(idx)
            if config.verbose:
                log.debug("epoch %d batch %d loss %.6f", epoch, start // config.batch_size, loss)
        if test_set:
            m = evaluate(model, test_set)
            acc, f1 = m.accuracy, m.f1
        else:
            acc = f1 = float("nan")
        rec = EpochRecord(epoch, lr, total / len(x), acc, f1)
        history.append(rec)
        log.info("epoch %d lr %.1e loss %.5f test_acc %.4f test_f1 %.4f", *rec.__dict__.values())
    model.zero_grads()
    return model.with_dropout(0.0), history


def train(model, dataset, config):
    """Split ``dataset`` per ``config`` and train with Adam on mini-batches.

    Each epoch reshuffles the training set, runs one Adam step per batch
    (the last batch may be short) at the epoch's step-decayed learning rate,
    and records the mean training loss plus test accuracy/F1.

    Returns
    -------
    model : ArnnModel
        The trained model (same parameter objects, dropout off).
    history : list of EpochRecord
    """
    train_set, test_set = split_train_test(dataset, config.split, config.seed)
    return train_on_split(model, train_set, test_set, config)


def write_log(history, path_or_file):
    """Epoch log as CSV with columns ``epoch,lr,train_loss,test_accuracy,test_f1``."""
    if hasattr(path_or_file, "write"):
        _write_log_rows(history, path_or_file)
        return
    with atomic_open(path_or_file) as fh:
        _write_log_rows(history, fh)


def _write_log_rows(history, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in history:
        w.writerow([r.epoch] + [repr(float(v)) for v in
                                (r.lr, r.train_loss, r.test_accuracy, r.test_f1)])
