"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-exported)

from .exceptions import EmptyDataset, ShapeMismatch


def check_sequences(X, n_features=None, name="X"):
    """Validate a list of 2-D float arrays of shape (T_i, n_features).

    Returns a list of contiguous float64 arrays.
    """
    if X is None or len(X) == 0:
        raise EmptyDataset(f"{name} is empty")
    out = []
    for i, x in enumerate(X):
        a = np.asarray(x, dtype=float)
        if a.ndim != 2 or len(a) == 0:
            raise ShapeMismatch(f"{name}[{i}] must be a non-empty 2-D array, got shape {a.shape}")
        if n_features is not None and a.shape[1] != n_features:
            raise ShapeMismatch(f"{name}[{i}] has {a.shape[1]} features, expected {n_features}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
        out.append(np.ascontiguousarray(a))
    return out


def check_targets(y, n_samples, n_outputs, name="y"):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1 and n_outputs == 1:
        y = y[:, None]
    if y.shape != (n_samples, n_outputs):
        raise ShapeMismatch(f"{name} must have shape ({n_samples}, {n_outputs}), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y


class SequenceScaler:
    """Per-channel standardization fitted over every timestep of every sequence."""

    def fit(self, seqs):
        stacked = np.concatenate(seqs, axis=0)
        self.mean_ = stacked.mean(axis=0)
        self.scale_ = np.maximum(stacked.std(axis=0), 1e-3)
        return self

    def transform(self, seqs):
        return [(s - self.mean_) / self.scale_ for s in seqs]

    def to_dict(self):
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d):
        obj = cls()
        obj.mean_ = np.asarray(d["mean"], dtype=float)
        obj.scale_ = np.asarray(d["scale"], dtype=float)
        return obj
