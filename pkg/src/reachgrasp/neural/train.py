"""Mini-batch training of :class:`SequenceNet` on variable-length sequences."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import EmptyDataset, NonFiniteGradient
from .losses import CompositeLoss
from .network import SequenceNet
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 64
    dropout_rate: float = 0.2
    seed: int = 0
    loss_weights: dict = field(default_factory=lambda: {"time": 3.0, "position": 1.0})
    lambda_smooth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if any(w <= 0 for w in self.loss_weights.values()):
            raise ValueError("loss weights must be > 0")
        if self.lambda_smooth < 0:
            raise ValueError("lambda_smooth must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def length_batches(lengths, batch_size, rng=None):
    """Group sample indices into same-length batches; shuffled when ``rng`` is given."""
    buckets = defaultdict(list)
    for i, n in enumerate(lengths):
        buckets[int(n)].append(i)
    batches = []
    for n in sorted(buckets):
        idx = np.array(buckets[n])
        if rng is not None:
            idx = idx[rng.permutation(len(idx))]
        batches.extend(idx[k:k + batch_size] for k in range(0, len(idx), batch_size))
    if rng is not None:
        batches = [batches[k] for k in rng.permutation(len(batches))]
    return batches


def fit_sequences(net: SequenceNet, X, targets, loss: CompositeLoss, config: TrainConfig, aux=None):
    """Train ``net`` in place; returns per-epoch mean training loss.

    ``X`` is a list of (T_i, in) arrays, ``targets`` a matching list of
    (T_i, out) per-step targets and ``aux`` an optional (n, aux) array.
    """
    if len(X) == 0:
        raise EmptyDataset("no training sequences")
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params, lr=config.learning_rate)
    lengths = [len(x) for x in X]
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for b, idx in enumerate(length_batches(lengths, config.batch_size, rng)):
            xb = np.stack([X[i] for i in idx])
            yb = np.stack([targets[i] for i in idx])
            ab = None if aux is None else aux[idx]
            out, cache = net.forward(xb, ab, train=True, rng=rng)
            value, dY = loss.value_and_grad(out, yb)
            grads = net.backward(cache, dY)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteGradient(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            opt.step(net.params, grads)
            total += value * len(idx)
            count += len(idx)
        history.append(total / count)
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    return history


def predict_sequences(net: SequenceNet, X, aux=None, batch_size=256):
    """Eval-mode per-step outputs for a list of sequences (same order)."""
    out = [None] * len(X)
    for idx in length_batches([len(x) for x in X], batch_size):
        xb = np.stack([X[i] for i in idx])
        ab = None if aux is None else aux[idx]
        yb = net.predict(xb, ab)
        for j, i in enumerate(idx):
            out[i] = yb[j]
    return out
