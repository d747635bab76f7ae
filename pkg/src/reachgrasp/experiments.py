"""Shared experiment plumbing: seeded splits and time-bucketed evaluation of trained models."""
from __future__ import annotations

import zlib

import numpy as np

from .posture import PostureBaseline, PostureLSTMRegressor, build_posture_windows
from .reach import MJTReachPredictor, ReachLSTMRegressor, build_dataset_windows
from .report import abs_time_error, bucket_curve, distance_errors, posture_errors, time_error

# Windows start 2 s before the grasp; with these settings every window end
# sits at the center of a 0.25 s evaluation bucket.
EVAL_STRIDE = 0.25
EVAL_MIN_LEN = 0.125
REACH_METRICS = ("distance_m", "time_error_s", "abs_time_error_s")
POSTURE_METRICS = ("mse", "euclid_m")


def derive_seed(seed: int, name: str) -> int:
    """Independent child seed for a named stage."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def split_trials(trials, test_fraction=0.2, seed=0):
    """Seeded trial-level train/test split; both parts keep the input order."""
    trials = list(trials)
    n_test = int(round(test_fraction * len(trials)))
    if not 0 < n_test < len(trials):
        raise ValueError(f"test_fraction {test_fraction} leaves an empty part for {len(trials)} trials")
    test_idx = set(np.random.default_rng(seed).permutation(len(trials))[:n_test].tolist())
    train = [t for i, t in enumerate(trials) if i not in test_idx]
    test = [t for i, t in enumerate(trials) if i in test_idx]
    return train, test


def reach_windows(trials, stride=EVAL_STRIDE, min_len=EVAL_MIN_LEN):
    return build_dataset_windows(trials, stride=stride, min_len=min_len)


def posture_windows(trials, stride=EVAL_STRIDE, min_len=EVAL_MIN_LEN):
    return build_dataset_windows(trials, stride=stride, min_len=min_len, builder=build_posture_windows)


def reach_records(model, samples, mjt_predictions=None) -> dict:
    """Per-window errors of a reach model: metric -> (n, 2) array of (offset, value).

    Failed MJT fits give NaN values, which :func:`bucket_curve` skips.
    """
    if isinstance(model, MJTReachPredictor):
        pred = model.predict(samples)
    else:
        pred = model.predict(samples, mjt_predictions) if model.use_mjt else model.predict(samples)
    truth_pos = np.array([s.target_position for s in samples])
    truth_t = np.array([s.target_time for s in samples])
    off = np.array([s.window_end_offset for s in samples])
    values = {
        "distance_m": distance_errors(pred[:, :3], truth_pos),
        "time_error_s": time_error(pred[:, 3], truth_t),
        "abs_time_error_s": abs_time_error(pred[:, 3], truth_t),
    }
    return {k: np.column_stack([off, v]) for k, v in values.items()}


def posture_records(model, samples) -> dict:
    pred = model.predict(samples)
    truth = np.array([s.targets.reshape(-1) for s in samples])
    off = np.array([s.window_end_offset for s in samples])
    ok = np.all(np.isfinite(pred), axis=1)
    mse = np.full(len(samples), np.nan)
    euc = np.full(len(samples), np.nan)
    if ok.any():
        mse[ok], euc[ok] = posture_errors(pred[ok], truth[ok])
    return {"mse": np.column_stack([off, mse]), "euclid_m": np.column_stack([off, euc])}


def model_tag(model) -> str:
    if isinstance(model, MJTReachPredictor):
        return "MJT"
    if isinstance(model, ReachLSTMRegressor):
        return model.model_tag
    if isinstance(model, PostureLSTMRegressor):
        return "POSTURE_" + model.model_tag
    if isinstance(model, PostureBaseline):
        return "POSTURE_" + model.model_tag
    return type(model).__name__


def curves_from_records(records: dict, model: str, seed: int = 0) -> list:
    out = []
    for metric, rec in records.items():
        if np.isfinite(rec[:, 1]).any():
            out.append(bucket_curve(rec, seed=derive_seed(seed, f"{model}/{metric}"), metric=metric, model=model))
    return out
