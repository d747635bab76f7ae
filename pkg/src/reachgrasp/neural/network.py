"""Recurrent regressor: LSTM -> dropout -> [concat static branches] -> ReLU dense -> linear output.

Every timestep produces an output.  Static per-sample inputs ("aux") pass
through their own ReLU dense branches and are concatenated with the LSTM
output at every step.

Parameter order (also the checkpoint order): ``lstm.W, lstm.U, lstm.b``,
then ``branch{k}.W, branch{k}.b`` per branch, ``dense{k}.W, dense{k}.b`` per
trunk layer, and ``out.W, out.b``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ShapeMismatch
from . import layers

CHECKPOINT_FORMAT = "reachgrasp-sequence-model/1"


@dataclass(frozen=True)
class Architecture:
    input_size: int
    hidden_size: int
    output_size: int
    trunk: tuple = (16,)
    branches: tuple = ()  # ((start, stop, units), ...) columns of the aux vector
    dropout: float = 0.2
    tag: str = "lstm"

    @property
    def aux_size(self) -> int:
        return max((b[1] for b in self.branches), default=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = list(self.trunk)
        d["branches"] = [list(b) for b in self.branches]
        return d

    @classmethod
    def from_dict(cls, d) -> "Architecture":
        d = dict(d)
        d["trunk"] = tuple(d["trunk"])
        d["branches"] = tuple(tuple(b) for b in d["branches"])
        return cls(**d)


def _as_float(a):
    # keeps extended precision inputs (used by the gradient check) intact
    a = np.asarray(a)
    return a if np.issubdtype(a.dtype, np.floating) else a.astype(float)


class SequenceNet:
    def __init__(self, arch: Architecture, seed: int = 0):
        self.arch = arch
        rng = np.random.default_rng(seed)
        p = {}
        for k, v in layers.init_lstm(rng, arch.input_size, arch.hidden_size).items():
            p[f"lstm.{k}"] = v
        width = arch.hidden_size
        for j, (start, stop, units) in enumerate(arch.branches):
            for k, v in layers.init_dense(rng, stop - start, units).items():
                p[f"branch{j}.{k}"] = v
            width += units
        for j, units in enumerate(arch.trunk):
            for k, v in layers.init_dense(rng, width, units).items():
                p[f"dense{j}.{k}"] = v
            width = units
        for k, v in layers.init_dense(rng, width, arch.output_size).items():
            p[f"out.{k}"] = v
        self.params = p

    # ------------------------------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, X, aux=None, train=False, rng=None):
        """Per-step outputs (B, T, output_size) and the backward cache."""
        a, p = self.arch, self.params
        X = _as_float(X)
        if X.ndim != 3 or X.shape[2] != a.input_size:
            raise ShapeMismatch(f"expected input (batch, time, {a.input_size}), got {X.shape}")
        B, T, _ = X.shape
        if a.branches:
            aux = _as_float(aux)
            if aux.shape != (B, a.aux_size):
                raise ShapeMismatch(f"expected aux ({B}, {a.aux_size}), got {None if aux is None else aux.shape}")
        hs, lstm_cache = layers.lstm_forward(p["lstm.W"], p["lstm.U"], p["lstm.b"], X)
        hd, mask = layers.dropout_apply(hs, a.dropout, "train" if train else "eval", rng)
        parts = [hd]
        branch_caches = []
        for j, (start, stop, _) in enumerate(a.branches):
            y, c = layers.dense_forward(p[f"branch{j}.W"], p[f"branch{j}.b"], aux[:, start:stop], "relu")
            branch_caches.append(c)
            parts.append(np.broadcast_to(y[:, None, :], (B, T, y.shape[1])))
        z = np.concatenate(parts, axis=2) if len(parts) > 1 else hd
        dense_caches = []
        for j in range(len(a.trunk)):
            z, c = layers.dense_forward(p[f"dense{j}.W"], p[f"dense{j}.b"], z, "relu")
            dense_caches.append(c)
        out, out_cache = layers.dense_forward(p["out.W"], p["out.b"], z, "identity")
        cache = (lstm_cache, mask, branch_caches, dense_caches, out_cache, T)
        return out, cache

    def backward(self, cache, dY) -> dict:
        a, p = self.arch, self.params
        lstm_cache, mask, branch_caches, dense_caches, out_cache, T = cache
        grads = {}
        g, dz = layers.dense_backward(p["out.W"], out_cache, dY, "identity")
        grads["out.W"], grads["out.b"] = g["W"], g["b"]
        for j in reversed(range(len(a.trunk))):
            g, dz = layers.dense_backward(p[f"dense{j}.W"], dense_caches[j], dz, "relu")
            grads[f"dense{j}.W"], grads[f"dense{j}.b"] = g["W"], g["b"]
        dh = dz[..., :a.hidden_size]
        offset = a.hidden_size
        for j, (start, stop, units) in enumerate(a.branches):
            dy = dz[..., offset:offset + units].sum(axis=1)
            offset += units
            g, _ = layers.dense_backward(p[f"branch{j}.W"], branch_caches[j], dy, "relu")
            grads[f"branch{j}.W"], grads[f"branch{j}.b"] = g["W"], g["b"]
        if mask is not None:
            dh = dh * mask
        g, _ = layers.lstm_backward(p["lstm.W"], p["lstm.U"], lstm_cache, np.ascontiguousarray(dh))
        grads["lstm.W"], grads["lstm.U"], grads["lstm.b"] = g["W"], g["U"], g["b"]
        return {k: grads[k] for k in p}

    def astype(self, dtype) -> "SequenceNet":
        """Copy with parameters cast to ``dtype``."""
        twin = SequenceNet.__new__(SequenceNet)
        twin.arch = self.arch
        twin.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return twin

    def predict(self, X, aux=None):
        return self.forward(X, aux, train=False)[0]

    # ------------------------------------------------------------------
    def flat_params(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def manifest(self) -> list:
        return [[k, list(v.shape)] for k, v in self.params.items()]

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for k, v in self.params.items():
            self.params[k] = flat[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size

    def digest(self) -> str:
        return hashlib.sha256(self.flat_params().tobytes()).hexdigest()


@dataclass
class Checkpoint:
    net: SequenceNet
    config: dict = field(default_factory=dict)
    seed: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, net: SequenceNet, config: dict, seed: int, extra: dict | None = None):
    """Write a JSON checkpoint: header (architecture, config, seed, shape manifest) and flat parameters."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": net.arch.to_dict(),
        "config": config,
        "seed": seed,
        "manifest": net.manifest(),
        "extra": extra or {},
        "params": [float(v) for v in net.flat_params()],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    net = SequenceNet(Architecture.from_dict(doc["architecture"]), seed=0)
    if doc["manifest"] != net.manifest():
        raise ShapeMismatch(f"{path}: parameter manifest does not match architecture")
    net.set_flat_params(doc["params"])
    return Checkpoint(net, doc["config"], doc["seed"], doc.get("extra", {}))
