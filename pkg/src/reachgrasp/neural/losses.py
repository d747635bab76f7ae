"""Regression losses on per-step outputs of shape (batch, time, dims)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def temporal_smoothness(pred) -> float:
    """Sum over consecutive steps of the squared distance between predictions.

    ``pred`` has shape (T, d) (or (T,) for scalar outputs).  Zero for T == 1.
    """
    p = np.asarray(pred, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    d = np.diff(p, axis=0)
    return float(np.sum(d * d))


def mean_step_displacement(pred) -> float:
    """Mean Euclidean distance between consecutive predictions."""
    p = np.asarray(pred, dtype=float)
    if len(p) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p.reshape(len(p), -1), axis=0), axis=1).mean())


@dataclass(frozen=True)
class Head:
    name: str
    start: int
    stop: int
    kind: str = "mse"  # "mse" or "mae"
    weight: float = 1.0


@dataclass(frozen=True)
class CompositeLoss:
    """Weighted sum of per-head MSE/MAE plus an optional smoothness penalty.

    For each sample the head losses are averaged over steps and output
    components; the smoothness term is ``lambda_smooth`` times the summed
    squared step-to-step change of the outputs.  The batch loss is the mean
    over samples.
    """

    heads: tuple
    lambda_smooth: float = 0.0
    smooth_slice: tuple = field(default=None)

    def __call__(self, Y, target):
        return self.value_and_grad(Y, target)[0]

    def value(self, Y, target):
        """Loss in the precision of ``Y`` (no conversion to Python float)."""
        B, T, _ = Y.shape
        total = Y.dtype.type(0)
        for h in self.heads:
            diff = Y[..., h.start:h.stop] - target[..., h.start:h.stop]
            count = B * T * (h.stop - h.start)
            term = np.sum(diff * diff) if h.kind == "mse" else np.sum(np.abs(diff))
            total = total + h.weight * term / count
        if self.lambda_smooth and T > 1:
            lo, hi = self.smooth_slice or (0, Y.shape[-1])
            d = np.diff(Y[..., lo:hi], axis=1)
            total = total + self.lambda_smooth * np.sum(d * d) / B
        return total

    def terms(self, Y, target) -> dict:
        B = Y.shape[0]
        out = {}
        for h in self.heads:
            diff = Y[..., h.start:h.stop] - target[..., h.start:h.stop]
            per = np.mean(diff * diff) if h.kind == "mse" else np.mean(np.abs(diff))
            out[h.name] = float(per)
        if self.lambda_smooth:
            lo, hi = self.smooth_slice or (0, Y.shape[-1])
            d = np.diff(Y[..., lo:hi], axis=1)
            out["smooth"] = float(np.sum(d * d) / B)
        return out

    def value_and_grad(self, Y, target):
        B, T, _ = Y.shape
        loss = 0.0
        dY = np.zeros_like(Y)
        for h in self.heads:
            diff = Y[..., h.start:h.stop] - target[..., h.start:h.stop]
            count = B * T * (h.stop - h.start)
            if h.kind == "mse":
                loss += h.weight * float(np.sum(diff * diff)) / count
                dY[..., h.start:h.stop] += h.weight * 2.0 * diff / count
            elif h.kind == "mae":
                loss += h.weight * float(np.sum(np.abs(diff))) / count
                dY[..., h.start:h.stop] += h.weight * np.sign(diff) / count
            else:
                raise ValueError(f"unknown loss kind {h.kind!r}")
        if self.lambda_smooth and T > 1:
            lo, hi = self.smooth_slice or (0, Y.shape[-1])
            d = np.diff(Y[..., lo:hi], axis=1)
            loss += self.lambda_smooth * float(np.sum(d * d)) / B
            g = 2.0 * self.lambda_smooth * d / B
            dY[:, 1:, lo:hi] += g
            dY[:, :-1, lo:hi] -= g
        return loss, dY
