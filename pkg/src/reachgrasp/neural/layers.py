"""LSTM and dense layers with explicit forward/backward passes (float64).

Gate order inside the stacked LSTM weights is [input, forget, cell, output].
Sequences are processed as dense (batch, time, features) arrays; callers
bucket sequences by length so no masking is needed.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import ShapeMismatch


def sigmoid(x):
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_uniform(rng, shape, fan_in):
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def init_lstm(rng, input_size, hidden_size):
    h = hidden_size
    b = init_uniform(rng, 4 * h, h)
    b[h:2 * h] = 1.0
    return {
        "W": init_uniform(rng, (4 * h, input_size), input_size),
        "U": init_uniform(rng, (4 * h, h), h),
        "b": b,
    }


def init_dense(rng, in_size, out_size):
    return {"W": init_uniform(rng, (out_size, in_size), in_size), "b": init_uniform(rng, out_size, in_size)}


def lstm_forward(W, U, b, x):
    """Run an LSTM over ``x`` of shape (B, T, in) from zero state.

    Returns hidden states (B, T, h) and a cache for :func:`lstm_backward`.
    """
    if x.ndim != 3 or x.shape[2] != W.shape[1]:
        raise ShapeMismatch(f"LSTM expects (batch, time, {W.shape[1]}), got {x.shape}")
    B, T, _ = x.shape
    n = U.shape[1]
    # time-major buffers keep the per-step slices contiguous
    xw = np.ascontiguousarray((x @ W.T + b).transpose(1, 0, 2))
    dt = xw.dtype
    hs = np.zeros((T, B, n), dtype=dt)
    cs = np.zeros((T, B, n), dtype=dt)
    gates = np.empty((T, B, 4 * n), dtype=dt)
    h = np.zeros((B, n), dtype=dt)
    c = np.zeros((B, n), dtype=dt)
    UT = np.ascontiguousarray(U.T)
    for t in range(T):
        a = xw[t] + h @ UT
        gt = gates[t]
        gt[:] = sigmoid(a)
        gt[:, 2 * n:3 * n] = np.tanh(a[:, 2 * n:3 * n])
        c = gt[:, n:2 * n] * c + gt[:, :n] * gt[:, 2 * n:3 * n]
        h = gt[:, 3 * n:] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs.transpose(1, 0, 2), (x, hs, cs, gates)


def lstm_backward(W, U, cache, dhs):
    """Backpropagation through time.

    ``dhs`` is dLoss/dh for every step, shape (B, T, h).  Returns the
    parameter gradients and dLoss/dx.
    """
    x, hs, cs, gates = cache
    T, B, n = hs.shape
    dhs = np.ascontiguousarray(np.asarray(dhs).transpose(1, 0, 2))
    da = np.empty((T, B, 4 * n))
    dh_next = np.zeros((B, n))
    dc_next = np.zeros((B, n))
    zeros = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        gt = gates[t]
        i, f, g, o = gt[:, :n], gt[:, n:2 * n], gt[:, 2 * n:3 * n], gt[:, 3 * n:]
        c_prev = cs[t - 1] if t > 0 else zeros
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dat = da[t]
        dat[:, :n] = dc * g * i * (1.0 - i)
        dat[:, n:2 * n] = dc * c_prev * f * (1.0 - f)
        dat[:, 2 * n:3 * n] = dc * i * (1.0 - g * g)
        dat[:, 3 * n:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dat @ U
    h_prev = np.concatenate([np.zeros((1, B, n)), hs[:-1]], axis=0)
    flat_da = da.reshape(T * B, -1)
    x_tm = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(T * B, -1)
    grads = {
        "W": flat_da.T @ x_tm,
        "U": flat_da.T @ h_prev.reshape(T * B, -1),
        "b": flat_da.sum(axis=0),
    }
    return grads, (da @ W).transpose(1, 0, 2)


def lstm_cell(W, U, b, x, h, c):
    """One LSTM step on single vectors; reference for tests."""
    n = U.shape[1]
    a = W @ x + U @ h + b
    i, f = sigmoid(a[:n]), sigmoid(a[n:2 * n])
    g, o = np.tanh(a[2 * n:3 * n]), sigmoid(a[3 * n:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def dense_forward(W, b, x, activation="identity"):
    z = x @ W.T + b
    if activation == "relu":
        return np.maximum(z, 0.0), (x, z)
    if activation == "identity":
        return z, (x, z)
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(W, cache, dy, activation="identity"):
    x, z = cache
    if activation == "relu":
        dy = dy * (z > 0.0)
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    grads = {"W": flat_dy.T @ flat_x, "b": flat_dy.sum(axis=0)}
    return grads, dy @ W


def dropout_apply(x, rate, mode="train", rng=None):
    """Inverted dropout; returns ``(output, mask)``.

    In eval mode, or with ``rate == 0``, the input is returned unchanged and
    the mask is None.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask
