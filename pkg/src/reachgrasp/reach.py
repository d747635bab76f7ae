"""Grasp position and time-to-grasp prediction from palm trajectories.

Three predictors share one sample format (:class:`ReachSample`, built by
:func:`build_reach_windows`):

* :class:`MJTReachPredictor` fits a minimum-jerk reach to the window,
* :class:`ReachLSTMRegressor` learns the mapping with an LSTM,
* ``ReachLSTMRegressor(use_mjt=True)`` also feeds the MJT estimate through
  two small dense branches.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import SequenceScaler, check_is_fitted, check_sequences, check_targets
from .data import Trial
from .exceptions import EmptyDataset, NoFeasibleFit, NotMoving, ShapeMismatch, TooFewFrames, TooFewPoints, TrialTooShort
from .kinematics import DEFAULT_RATE, ONSET_THRESHOLD, SavgolSpec, find_onset
from .mjt import MAX_REMAINING, POSITION_BOX, fit_mjt
from .neural import Architecture, CompositeLoss, Head, SequenceNet, TrainConfig, fit_sequences, predict_sequences
from .neural.network import load_checkpoint, save_checkpoint

HISTORY_SPAN = 2.0  # s of data before the grasp fed to the models
_EPS = 1e-9


@dataclass(frozen=True)
class ReachSample:
    """One sliding window of palm positions before a grasp.

    ``inputs`` rows are ``[x, y, z, dt]`` with ``dt`` the time since the
    previous frame of the trial.  ``history_times``/``history_palm`` hold
    every frame of the trial up to the window end; they give onset
    detection its context and never extend past the window end.
    """

    inputs: np.ndarray
    times: np.ndarray
    window_end: float
    window_end_offset: float
    target_position: np.ndarray
    target_time: float
    trial_id: str
    user_id: str = ""
    history_times: Optional[np.ndarray] = None
    history_palm: Optional[np.ndarray] = None

    @property
    def positions(self) -> np.ndarray:
        return self.inputs[:, :3]


@dataclass(frozen=True)
class ReachPrediction:
    position: np.ndarray
    time_remaining: float
    model_tag: str


def frame_deltas(times) -> np.ndarray:
    """Time since the previous frame; the first frame reuses the first gap."""
    times = np.asarray(times, dtype=float)
    dt = np.diff(times, prepend=np.nan)
    dt[0] = times[1] - times[0] if len(times) > 1 else 0.0
    return dt


def window_plan(times, grasp_time, stride, min_len, span=HISTORY_SPAN):
    """Window start and end times for one trial.

    The start is ``max(grasp_time - span, first frame)``; ends run from
    ``start + min_len`` towards ``grasp_time`` in steps of ``stride``.
    """
    if stride <= 0 or min_len < 0:
        raise ValueError("stride must be > 0 and min_len >= 0")
    times = np.asarray(times, dtype=float)
    n_before = int(np.sum(times <= grasp_time + _EPS))
    if n_before < 2:
        raise TrialTooShort(f"only {n_before} frame(s) at or before the grasp")
    start = max(grasp_time - span, float(times[0]))
    usable = grasp_time - start - min_len
    if usable < -_EPS:
        raise TrialTooShort(f"{grasp_time - start:.3f} s before the grasp is shorter than min_len {min_len}")
    count = int(math.floor(max(usable, 0.0) / stride + 1e-9)) + 1
    ends = start + min_len + stride * np.arange(count)
    return start, np.minimum(ends, grasp_time)


def palm_at(times, palm, t) -> np.ndarray:
    return np.array([np.interp(t, times, palm[:, k]) for k in range(3)])


def build_reach_windows(trial: Trial, stride: float = 1.0 / 60.0, min_len: float = 0.25,
                        span: float = HISTORY_SPAN) -> list:
    """Sliding-window samples over the last ``span`` seconds before the grasp.

    Each sample's inputs are the frames in ``[start, end]``; the target is
    the palm position at the grasp (interpolated if the grasp falls between
    frames) and the time from the window end to the grasp.
    """
    times, palm = trial.times, trial.palm
    grasp = trial.meta.grasp_time
    start, ends = window_plan(times, grasp, stride, min_len, span)
    dts = frame_deltas(times)
    target = palm_at(times, palm, grasp)
    first = int(np.searchsorted(times, start - _EPS, side="left"))
    samples = []
    for end in ends:
        last = int(np.searchsorted(times, end + _EPS, side="right"))
        if last <= first:
            continue
        sl = slice(first, last)
        samples.append(ReachSample(
            inputs=np.column_stack([palm[sl], dts[sl]]),
            times=times[sl].copy(),
            window_end=float(end),
            window_end_offset=float(end - grasp),
            target_position=target,
            target_time=float(grasp - end),
            trial_id=trial.meta.trial_id,
            user_id=trial.meta.user_id,
            history_times=times[:last].copy(),
            history_palm=palm[:last].copy(),
        ))
    return samples


def build_dataset_windows(trials, stride, min_len, span=HISTORY_SPAN, builder=None) -> list:
    """Windows of every trial long enough to yield one; order follows ``trials``."""
    builder = builder or build_reach_windows
    out = []
    for trial in trials:
        try:
            out.extend(builder(trial, stride=stride, min_len=min_len, span=span))
        except TrialTooShort:
            continue
    return out


def _sample_arrays(X, y=None):
    """Normalize estimator input to (sequences (T,4), y (n,4), rel_times, end_gap).

    ``X`` is either a list of :class:`ReachSample` or a list of raw (T, 4)
    arrays with ``y`` rows ``[x, y, z, time_remaining]``; raw windows are
    assumed to end at their last frame.
    """
    if len(X) and isinstance(X[0], ReachSample):
        seqs = [s.inputs for s in X]
        if y is None:
            y = np.array([np.append(s.target_position, s.target_time) for s in X])
        rel = [s.times - s.window_end for s in X]
        gap = np.array([s.window_end - s.times[-1] for s in X])
    else:
        seqs = check_sequences(X, 4)
        rel = []
        for s in seqs:
            back = np.concatenate([np.cumsum(s[:0:-1, 3])[::-1], [0.0]])
            rel.append(-back)
        gap = np.zeros(len(seqs))
    if y is not None:
        y = check_targets(y, len(seqs), 4)
    return seqs, y, rel, gap


# --------------------------------------------------------------------------
# minimum-jerk predictor


class MJTReachPredictor(BaseEstimator):
    """Model-based predictor: onset detection followed by a bounded MJT fit.

    Nothing is learned, ``fit`` only records the input width.  ``predict``
    returns NaN rows for windows where no fit is possible (no onset yet,
    too few points, or an infeasible fit).

    Parameters
    ----------
    sg_window, sg_order : int
        Savitzky-Golay settings for the speed used in onset detection.
    onset_threshold : float
        Speed (m/s) that marks movement onset.
    rate : float
        Resampling rate (Hz) before filtering.
    box : float
        Half-width (m) of the end-point box around the last known position.
    max_remaining : float
        Upper bound (s) on the remaining movement duration.
    n_jobs : int
        Threads used across windows; results do not depend on it.
    """

    def __init__(self, sg_window=7, sg_order=3, onset_threshold=ONSET_THRESHOLD, rate=DEFAULT_RATE,
                 box=POSITION_BOX, max_remaining=MAX_REMAINING, n_jobs=1):
        self.sg_window = sg_window
        self.sg_order = sg_order
        self.onset_threshold = onset_threshold
        self.rate = rate
        self.box = box
        self.max_remaining = max_remaining
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.n_features_in_ = 4
        return self

    def predict_one(self, sample) -> ReachPrediction:
        """Prediction for one window; raises NotMoving / TooFewPoints / NoFeasibleFit."""
        if isinstance(sample, ReachSample):
            times, pos, end = sample.times, sample.positions, sample.window_end
            h_times = sample.history_times if sample.history_times is not None else times
            h_palm = sample.history_palm if sample.history_palm is not None else pos
        else:
            arr = np.asarray(sample, dtype=float)
            times = np.concatenate([[0.0], np.cumsum(arr[1:, 3])])
            pos, end = arr[:, :3], times[-1]
            h_times, h_palm = times, pos
        spec = SavgolSpec(self.sg_window, self.sg_order)
        try:
            onset = find_onset(h_times, h_palm, spec, self.rate, self.onset_threshold)
        except TooFewFrames as exc:
            raise NotMoving(str(exc)) from exc
        keep = times >= onset.t0 - _EPS
        fit = fit_mjt(times[keep], pos[keep], onset.t0, onset.x0, pos[-1], end,
                      box=self.box, max_remaining=self.max_remaining)
        return ReachPrediction(fit.params.xf.copy(), max(fit.remaining, 0.0), "MJT")

    def _safe(self, sample):
        try:
            p = self.predict_one(sample)
        except (NotMoving, TooFewPoints, NoFeasibleFit):
            return None
        return p

    def predict_details(self, X) -> list:
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                return list(pool.map(self._safe, X))
        return [self._safe(s) for s in X]

    def predict(self, X) -> np.ndarray:
        """(n, 4) array of ``[x, y, z, time_remaining]``; NaN where no fit exists."""
        out = np.full((len(X), 4), np.nan)
        for i, p in enumerate(self.predict_details(X)):
            if p is not None:
                out[i, :3] = p.position
                out[i, 3] = p.time_remaining
        return out


def mjt_aux(samples, mjt_pred: np.ndarray, max_remaining=MAX_REMAINING) -> np.ndarray:
    """Static LSTM-MJT inputs ``[xf(3), T, valid]``; failed fits fall back to the last position and the cap."""
    rows = []
    for s, p in zip(samples, mjt_pred):
        last = np.asarray(s[-1, :3] if not isinstance(s, ReachSample) else s.positions[-1])
        if np.all(np.isfinite(p)):
            rows.append(np.concatenate([p[:3], [p[3], 1.0]]))
        else:
            rows.append(np.concatenate([last, [max_remaining, 0.0]]))
    return np.array(rows)


def predict_reach_mjt(sample, predictor: MJTReachPredictor | None = None) -> ReachPrediction:
    return (predictor or MJTReachPredictor()).predict_one(sample)


# --------------------------------------------------------------------------
# LSTM regressors


class ReachLSTMRegressor(RegressorMixin, BaseEstimator):
    """LSTM regressor for grasp position and time-to-grasp.

    Architecture: ``[x, y, z, dt] -> LSTM(hidden_size) -> dropout ->
    ReLU dense(dense_units) -> position (3) + time (1)``.  With
    ``use_mjt=True`` the MJT end point and remaining time (plus a validity
    flag) pass through ReLU dense branches of ``mjt_position_units`` and
    ``mjt_time_units`` that are concatenated with the LSTM output before the
    dense layer.

    Every step is supervised: the position head predicts the remaining
    displacement from that step's palm position to the grasp position, the
    time head the time from that step to the grasp.  Input positions are
    expressed relative to the window's first frame.  The loss is
    ``time_weight * MAE(time) + position_weight * MSE(position)``.
    """

    def __init__(self, hidden_size=64, dense_units=16, dropout=0.2, learning_rate=0.001, epochs=50,
                 batch_size=64, time_weight=3.0, position_weight=1.0, seed=0, use_mjt=False,
                 mjt_position_units=16, mjt_time_units=8, mjt=None):
        self.hidden_size = hidden_size
        self.dense_units = dense_units
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.time_weight = time_weight
        self.position_weight = position_weight
        self.seed = seed
        self.use_mjt = use_mjt
        self.mjt_position_units = mjt_position_units
        self.mjt_time_units = mjt_time_units
        self.mjt = mjt

    @property
    def model_tag(self) -> str:
        return "LSTM_MJT" if self.use_mjt else "LSTM"

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           dropout_rate=self.dropout, seed=self.seed,
                           loss_weights={"time": self.time_weight, "position": self.position_weight})

    def architecture(self) -> Architecture:
        branches = ()
        if self.use_mjt:
            branches = ((0, 3, self.mjt_position_units), (3, 5, self.mjt_time_units))
        return Architecture(input_size=4, hidden_size=self.hidden_size, output_size=4,
                            trunk=(self.dense_units,), branches=branches, dropout=self.dropout,
                            tag=self.model_tag.lower())

    def loss(self) -> CompositeLoss:
        return CompositeLoss((Head("position", 0, 3, "mse", self.position_weight),
                              Head("time", 3, 4, "mae", self.time_weight)))

    # inputs ------------------------------------------------------------
    @staticmethod
    def _relative(seqs):
        out = []
        for s in seqs:
            r = s.copy()
            r[:, :3] -= s[0, :3]
            out.append(r)
        return out

    def _mjt_estimator(self):
        return self.mjt if self.mjt is not None else MJTReachPredictor()

    def _aux(self, X, seqs, mjt_predictions):
        if not self.use_mjt:
            return None
        if mjt_predictions is None:
            mjt_predictions = self._mjt_estimator().predict(X)
        mjt_predictions = np.asarray(mjt_predictions, dtype=float)
        if mjt_predictions.shape != (len(seqs), 4):
            raise ShapeMismatch(f"mjt_predictions must have shape ({len(seqs)}, 4)")
        aux = mjt_aux(seqs, mjt_predictions, self._mjt_estimator().max_remaining)
        aux[:, :3] -= np.array([s[0, :3] for s in seqs])
        return aux

    def _step_targets(self, seqs, y, rel, gap):
        targets = []
        for s, yy, r in zip(seqs, y, rel):
            # remaining displacement from each step's palm position
            pos = yy[:3] - s[:, :3]
            # time from each step to the grasp
            tt = yy[3] - r
            targets.append(np.column_stack([pos, tt]))
        return targets

    # estimator API -----------------------------------------------------
    def fit(self, X, y=None, mjt_predictions=None):
        """Train on windows.

        Parameters
        ----------
        X : list of ReachSample, or list of (T, 4) arrays
        y : array of shape (n, 4), optional
            Required for raw arrays; derived from the samples otherwise.
        mjt_predictions : array of shape (n, 4), optional
            Precomputed MJT outputs for ``use_mjt=True`` (NaN rows = failed fit).
        """
        if X is None or len(X) == 0:
            raise EmptyDataset("no training windows")
        seqs, y, rel, gap = _sample_arrays(X, y)
        if y is None:
            raise ValueError("y is required when X holds raw arrays")
        rel_seqs = self._relative(seqs)
        self.scaler_ = SequenceScaler().fit(rel_seqs)
        aux = self._aux(X, seqs, mjt_predictions)
        if aux is not None:
            self.aux_scaler_ = SequenceScaler().fit([aux])
            aux = self.aux_scaler_.transform([aux])[0]
        targets = self._step_targets(seqs, y, rel, gap)
        self.target_scaler_ = SequenceScaler().fit(targets)
        self.net_ = SequenceNet(self.architecture(), seed=self.seed)
        self.history_ = fit_sequences(self.net_, self.scaler_.transform(rel_seqs),
                                      self.target_scaler_.transform(targets), self.loss(), self.train_config(), aux)
        self.n_features_in_ = 4
        return self

    def predict_steps(self, X, mjt_predictions=None) -> list:
        """Per-step outputs ``[x, y, z, time_to_grasp_from_step]`` (absolute positions)."""
        check_is_fitted(self, "net_")
        seqs, _, _, _ = _sample_arrays(X)
        rel_seqs = self._relative(seqs)
        aux = self._aux(X, seqs, mjt_predictions)
        if aux is not None:
            aux = self.aux_scaler_.transform([aux])[0]
        outs = predict_sequences(self.net_, self.scaler_.transform(rel_seqs), aux)
        ts = self.target_scaler_
        outs = [o * ts.scale_ + ts.mean_ for o in outs]
        for o, s in zip(outs, seqs):
            o[:, :3] += s[:, :3]
        return outs

    def predict(self, X, mjt_predictions=None) -> np.ndarray:
        """(n, 4) array of ``[x, y, z, time_remaining]`` from the last step; time clamped at 0."""
        steps = self.predict_steps(X, mjt_predictions)
        _, _, _, gap = _sample_arrays(X)
        out = np.array([s[-1] for s in steps])
        out[:, 3] = np.maximum(out[:, 3] - gap, 0.0)
        return out

    def predict_one(self, sample, mjt_prediction=None) -> ReachPrediction:
        mp = None if mjt_prediction is None else np.asarray(mjt_prediction, dtype=float)[None]
        row = self.predict([sample], mp)[0]
        return ReachPrediction(row[:3].copy(), float(row[3]), self.model_tag)

    # persistence -------------------------------------------------------
    def save(self, path):
        check_is_fitted(self, "net_")
        extra = {"estimator": "ReachLSTMRegressor", "params": _jsonable(self.get_params(deep=False)),
                 "scaler": self.scaler_.to_dict(), "target_scaler": self.target_scaler_.to_dict(),
                 "history": list(self.history_)}
        if self.use_mjt:
            extra["aux_scaler"] = self.aux_scaler_.to_dict()
        save_checkpoint(path, self.net_, _jsonable(self.train_config().__dict__), self.seed, extra)

    @classmethod
    def load(cls, path) -> "ReachLSTMRegressor":
        ck = load_checkpoint(path)
        params = dict(ck.extra["params"])
        params.pop("mjt", None)
        est = cls(**params)
        est.net_ = ck.net
        est.scaler_ = SequenceScaler.from_dict(ck.extra["scaler"])
        est.target_scaler_ = SequenceScaler.from_dict(ck.extra["target_scaler"])
        if "aux_scaler" in ck.extra:
            est.aux_scaler_ = SequenceScaler.from_dict(ck.extra["aux_scaler"])
        est.history_ = ck.extra.get("history", [])
        est.n_features_in_ = 4
        return est


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, BaseEstimator):
            continue
        out[k] = v
    return json.loads(json.dumps(out, default=float))


def _estimator_from_config(config: TrainConfig, use_mjt: bool, **arch) -> ReachLSTMRegressor:
    return ReachLSTMRegressor(
        learning_rate=config.learning_rate, epochs=config.epochs, batch_size=config.batch_size,
        dropout=config.dropout_rate, seed=config.seed, time_weight=config.loss_weights.get("time", 3.0),
        position_weight=config.loss_weights.get("position", 1.0), use_mjt=use_mjt, **arch)


def train_reach_lstm(samples, config: TrainConfig = TrainConfig(), **arch) -> ReachLSTMRegressor:
    return _estimator_from_config(config, False, **arch).fit(samples)


def train_reach_lstm_mjt(samples, config: TrainConfig = TrainConfig(), mjt_predictions=None, **arch) -> ReachLSTMRegressor:
    return _estimator_from_config(config, True, **arch).fit(samples, mjt_predictions=mjt_predictions)


def predict_reach(model, sample) -> ReachPrediction:
    if isinstance(model, MJTReachPredictor):
        return model.predict_one(sample)
    return model.predict_one(sample)
