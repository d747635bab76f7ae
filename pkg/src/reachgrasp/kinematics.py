"""Uniform resampling, Savitzky-Golay filtering, hand speed and movement onset."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Union

import numpy as np

from .exceptions import BadSpec, NotMoving, TooFewFrames

DEFAULT_RATE = 60.0
DEFAULT_WINDOW = 7
DEFAULT_ORDER = 3
ONSET_THRESHOLD = 0.03  # m/s
ONSET_DEBOUNCE = 3  # samples


@dataclass(frozen=True)
class SavgolSpec:
    window_length: int = DEFAULT_WINDOW
    poly_order: int = DEFAULT_ORDER
    deriv_order: int = 0
    dt: float = 1.0

    def validate(self) -> "SavgolSpec":
        w, p, d = self.window_length, self.poly_order, self.deriv_order
        if not isinstance(w, (int, np.integer)) or w < 3 or w % 2 == 0:
            raise BadSpec(f"window_length must be an odd integer >= 3, got {w!r}")
        if not 0 <= p < w:
            raise BadSpec(f"poly_order must be in [0, window_length), got {p!r}")
        if d not in (0, 1):
            raise BadSpec(f"deriv_order must be 0 or 1, got {d!r}")
        if p < d:
            raise BadSpec("poly_order must be >= deriv_order")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise BadSpec(f"dt must be positive, got {self.dt!r}")
        return self


@dataclass(frozen=True)
class UniformSeries:
    t0: float
    dt: float
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))


Channel = Union[str, Callable]


def _channel_values(frames, channel: Channel) -> np.ndarray:
    if callable(channel):
        return np.array([channel(f) for f in frames], dtype=float)
    if channel in ("palm", "palm_center"):
        return np.array([f.right.palm_center for f in frames], dtype=float)
    if channel == "object_center":
        return np.array([f.object_center for f in frames], dtype=float)
    hand, _, point = channel.partition(".")
    if hand in ("right", "left") and point:
        return np.array([getattr(getattr(f, hand), point) for f in frames], dtype=float)
    raise ValueError(f"unknown channel {channel!r}")


def resample_arrays(times, values, rate: float) -> UniformSeries:
    """Linearly interpolate ``values`` sampled at ``times`` onto a uniform grid.

    The grid spans ``[times[0], times[-1]]`` with ``round(span * rate) + 1``
    points, so both endpoints are kept exactly and the realized spacing is
    the closest one to ``1 / rate`` that divides the span.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        raise TooFewFrames(f"need at least 2 samples to resample, got {len(times)}")
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    span = times[-1] - times[0]
    n = max(int(round(span * rate)) + 1, 2)
    dt = span / (n - 1)
    grid = times[0] + dt * np.arange(n)
    grid[-1] = times[-1]
    if values.ndim == 1:
        out = np.interp(grid, times, values)
    else:
        out = np.column_stack([np.interp(grid, times, values[:, k]) for k in range(values.shape[1])])
    out[0], out[-1] = values[0], values[-1]
    return UniformSeries(t0=float(times[0]), dt=float(dt), values=out)


def resample_uniform(frames, rate: float = DEFAULT_RATE, channel: Channel = "palm") -> UniformSeries:
    """Resample one channel of a trial (or a frame sequence) onto a uniform grid."""
    frames = getattr(frames, "frames", frames)
    if len(frames) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(frames)}")
    times = np.array([f.t for f in frames], dtype=float)
    return resample_arrays(times, _channel_values(frames, channel), rate)


def savgol_coefficients(spec: SavgolSpec, pos: int | None = None) -> np.ndarray:
    """Least-squares polynomial filter weights, in the order of the window samples.

    ``weights @ x[i - h : i + h + 1]`` estimates the ``deriv_order``-th
    derivative at sample ``i`` (``h = window_length // 2``).  ``pos`` moves the
    evaluation point inside the window (default: the center), which is how
    the one-sided edge fits are obtained.
    """
    spec.validate()
    w = spec.window_length
    if pos is None:
        pos = w // 2
    if not 0 <= pos < w:
        raise BadSpec(f"pos must be within the window, got {pos}")
    offsets = np.arange(w, dtype=float) - pos
    design = np.vander(offsets, spec.poly_order + 1, increasing=True)
    # row d of the pseudo-inverse gives the d-th polynomial coefficient
    pinv = np.linalg.pinv(design)
    weights = pinv[spec.deriv_order] * math.factorial(spec.deriv_order)
    return weights / spec.dt**spec.deriv_order


def savgol_apply(values, spec: SavgolSpec) -> np.ndarray:
    """Filter a uniformly sampled series along axis 0.

    Interior samples use the centered kernel; the first and last
    ``window_length // 2`` samples use one-sided fits over the nearest full
    window, so the output has the same length as the input.
    """
    spec.validate()
    x = np.asarray(values, dtype=float)
    n, w = len(x), spec.window_length
    if n < w:
        raise TooFewFrames(f"series of {n} samples is shorter than the filter window {w}")
    h = w // 2
    center = savgol_coefficients(spec)
    out = np.empty_like(x)
    # sliding_window_view over axis 0 gives (n - w + 1, w[, dims]) after moving the window axis
    win = np.lib.stride_tricks.sliding_window_view(x, w, axis=0)
    if x.ndim == 1:
        out[h:n - h] = win @ center
    else:
        out[h:n - h] = np.einsum("i...w,w->i...", win, center)
    for i in range(h):
        c = savgol_coefficients(spec, pos=i)
        out[i] = np.tensordot(c, x[:w], axes=(0, 0))
        c = savgol_coefficients(spec, pos=w - h + i)
        out[n - h + i] = np.tensordot(c, x[n - w:], axes=(0, 0))
    return out


def smooth_positions(series: UniformSeries, window_length=DEFAULT_WINDOW, poly_order=DEFAULT_ORDER) -> np.ndarray:
    spec = SavgolSpec(window_length, poly_order, 0, series.dt)
    return savgol_apply(series.values, spec)


def speed_from_series(series: UniformSeries, spec: SavgolSpec | None = None) -> UniformSeries:
    spec = replace(spec or SavgolSpec(), deriv_order=1, dt=series.dt)
    vel = savgol_apply(series.values, spec)
    speed = np.linalg.norm(vel, axis=1) if vel.ndim == 2 else np.abs(vel)
    return UniformSeries(series.t0, series.dt, speed)


def speed_profile(trial, spec: SavgolSpec | None = None, rate: float = DEFAULT_RATE) -> UniformSeries:
    """Palm speed (m/s) on a uniform grid from the Savitzky-Golay derivative.

    ``spec.dt`` and ``spec.deriv_order`` are overridden by the resampling
    grid spacing and 1.
    """
    series = resample_uniform(trial, rate, "palm")
    return speed_from_series(series, spec)


def velocity_profile(times, positions, spec: SavgolSpec | None = None, rate: float = DEFAULT_RATE) -> UniformSeries:
    series = resample_arrays(times, positions, rate)
    spec = replace(spec or SavgolSpec(), deriv_order=1, dt=series.dt)
    return UniformSeries(series.t0, series.dt, savgol_apply(series.values, spec))


def detect_onset(speed, threshold: float = ONSET_THRESHOLD, debounce: int = ONSET_DEBOUNCE) -> int:
    """Index of the first sample starting a run of ``debounce`` samples above ``threshold``.

    Raises
    ------
    NotMoving
        If no such run exists.
    """
    values = np.asarray(getattr(speed, "values", speed), dtype=float)
    if values.size == 0:
        raise ValueError("empty speed series")
    debounce = max(int(debounce), 1)
    above = values > threshold
    if len(above) >= debounce:
        run = np.lib.stride_tricks.sliding_window_view(above, debounce).all(axis=1)
        hits = np.flatnonzero(run)
        if hits.size:
            return int(hits[0])
    raise NotMoving(f"speed never stays above {threshold} m/s for {debounce} samples")


class Onset(NamedTuple):
    index: int  # on the uniform grid
    t0: float
    x0: np.ndarray  # smoothed position at onset


def find_onset(times, positions, spec: SavgolSpec | None = None, rate: float = DEFAULT_RATE,
               threshold: float = ONSET_THRESHOLD, debounce: int = ONSET_DEBOUNCE) -> Onset:
    """Movement onset of a position track: time and smoothed position.

    Only the samples passed in are used, so calling this on a prefix of a
    trial never looks past the prefix end.
    """
    spec = spec or SavgolSpec()
    series = resample_arrays(times, positions, rate)
    if len(series) < spec.window_length:
        raise TooFewFrames(f"{len(series)} samples is shorter than the filter window {spec.window_length}")
    speed = speed_from_series(series, spec)
    idx = detect_onset(speed, threshold, debounce)
    # the hand is close to rest at onset; a local linear fit has lower variance
    # there than the cubic used for differentiation
    smoothed = savgol_apply(series.values, replace(spec, poly_order=1, deriv_order=0, dt=series.dt))
    return Onset(idx, float(series.times[idx]), smoothed[idx])
