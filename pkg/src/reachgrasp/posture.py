"""Hand posture at grasp: the five palm-to-fingertip vectors.

Samples use the same sliding windows as the reach predictors.  Each input
step holds the five fingertip-minus-palm vectors (15 values) and the frame
gap ``dt``; the target is the five vectors at the grasp.

Models:

* :class:`PostureLSTMRegressor`, optionally with a temporal smoothness
  penalty on consecutive per-step predictions,
* :class:`PostureBaseline`, classical regressors on a fixed-length window
  (linear least squares, CART, random forest).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import SequenceScaler, check_is_fitted, check_sequences, check_targets
from .data import FINGER_TIPS, HAND_POINTS, Trial
from .exceptions import EmptyDataset, ShapeMismatch, SingularDesign
from .neural import Architecture, CompositeLoss, Head, SequenceNet, TrainConfig, fit_sequences, predict_sequences
from .neural.network import load_checkpoint, save_checkpoint
from .reach import _EPS, HISTORY_SPAN, frame_deltas, window_plan
from .trees import CARTRegressor, RandomForestRegressor, regressor_from_dict, regressor_to_dict

N_VECTORS = len(FINGER_TIPS)
STEP_WIDTH = 3 * N_VECTORS + 1
DEFAULT_LAMBDA = 0.1
RIDGE = 1e-8
BASELINE_WINDOW = 0.5  # s
BASELINE_FORMAT = "reachgrasp-posture-baseline/1"
_TIP_IDX = [HAND_POINTS.index(n) for n in FINGER_TIPS]


@dataclass(frozen=True)
class PostureSample:
    """Window of fingertip vectors; ``inputs`` rows are ``[u_1 .. u_5 (15 values), dt]``."""

    inputs: np.ndarray
    times: np.ndarray
    window_end: float
    window_end_offset: float
    targets: np.ndarray  # (5, 3)
    trial_id: str
    user_id: str = ""


@dataclass(frozen=True)
class PosturePrediction:
    vectors: np.ndarray  # (5, 3)
    steps: np.ndarray  # (T, 5, 3)


def tip_offsets(trial: Trial, hand: str = "right") -> np.ndarray:
    """(n_frames, 5, 3) fingertip positions relative to the palm center."""
    pts = trial.hand_array(hand)
    return pts[:, _TIP_IDX, :] - pts[:, :1, :]


def build_posture_windows(trial: Trial, stride: float = 1.0 / 60.0, min_len: float = 0.25,
                          span: float = HISTORY_SPAN) -> list:
    """Sliding-window posture samples; the windowing matches the reach builder."""
    times = trial.times
    grasp = trial.meta.grasp_time
    start, ends = window_plan(times, grasp, stride, min_len, span)
    u = tip_offsets(trial).reshape(len(times), -1)
    steps = np.column_stack([u, frame_deltas(times)])
    target = np.array([np.interp(grasp, times, u[:, k]) for k in range(u.shape[1])]).reshape(N_VECTORS, 3)
    first = int(np.searchsorted(times, start - _EPS, side="left"))
    samples = []
    for end in ends:
        last = int(np.searchsorted(times, end + _EPS, side="right"))
        if last <= first:
            continue
        samples.append(PostureSample(
            inputs=steps[first:last].copy(),
            times=times[first:last].copy(),
            window_end=float(end),
            window_end_offset=float(end - grasp),
            targets=target,
            trial_id=trial.meta.trial_id,
            user_id=trial.meta.user_id,
        ))
    return samples


def _posture_arrays(X, y=None):
    if len(X) and isinstance(X[0], PostureSample):
        seqs = [s.inputs for s in X]
        if y is None:
            y = np.array([s.targets.reshape(-1) for s in X])
    else:
        seqs = check_sequences(X, STEP_WIDTH)
    if y is not None:
        y = check_targets(np.asarray(y, dtype=float).reshape(len(seqs), -1), len(seqs), 3 * N_VECTORS)
    return seqs, y


class PostureLSTMRegressor(RegressorMixin, BaseEstimator):
    """LSTM predicting the grasp posture at every step of a window.

    Architecture: ``16 -> LSTM(hidden_size) -> dropout -> ReLU
    dense(dense_units) -> 15``.  The loss is the per-step MSE to the grasp
    posture plus ``lambda_smooth`` times the summed squared change between
    consecutive per-step predictions.  Targets are standardized per
    component, so both terms (and ``lambda_smooth``) act on standardized
    outputs.
    """

    def __init__(self, hidden_size=64, dense_units=32, dropout=0.2, learning_rate=0.001, epochs=100,
                 batch_size=64, lambda_smooth=0.0, seed=0):
        self.hidden_size = hidden_size
        self.dense_units = dense_units
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lambda_smooth = lambda_smooth
        self.seed = seed

    @property
    def model_tag(self) -> str:
        return "LSTM_TEMPORAL" if self.lambda_smooth > 0 else "LSTM"

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           dropout_rate=self.dropout, seed=self.seed, loss_weights={"posture": 1.0},
                           lambda_smooth=self.lambda_smooth)

    def architecture(self) -> Architecture:
        return Architecture(input_size=STEP_WIDTH, hidden_size=self.hidden_size, output_size=3 * N_VECTORS,
                            trunk=(self.dense_units,), dropout=self.dropout, tag=self.model_tag.lower())

    def loss(self) -> CompositeLoss:
        return CompositeLoss((Head("posture", 0, 3 * N_VECTORS, "mse"),), lambda_smooth=self.lambda_smooth)

    def fit(self, X, y=None):
        """Train on a list of :class:`PostureSample` (or raw (T, 16) arrays with ``y`` of shape (n, 15))."""
        if X is None or len(X) == 0:
            raise EmptyDataset("no training windows")
        seqs, y = _posture_arrays(X, y)
        if y is None:
            raise ValueError("y is required when X holds raw arrays")
        self.scaler_ = SequenceScaler().fit(seqs)
        self.target_scaler_ = SequenceScaler().fit([y])
        z = self.target_scaler_.transform([y])[0]
        targets = [np.broadcast_to(zz, (len(s), len(zz))) for s, zz in zip(seqs, z)]
        self.net_ = SequenceNet(self.architecture(), seed=self.seed)
        self.history_ = fit_sequences(self.net_, self.scaler_.transform(seqs), targets, self.loss(),
                                      self.train_config())
        self.n_features_in_ = STEP_WIDTH
        return self

    def predict_steps(self, X) -> list:
        """Per-step predictions, each of shape (T_i, 15), in meters."""
        check_is_fitted(self, "net_")
        seqs, _ = _posture_arrays(X)
        outs = predict_sequences(self.net_, self.scaler_.transform(seqs))
        return [o * self.target_scaler_.scale_ + self.target_scaler_.mean_ for o in outs]

    def predict(self, X) -> np.ndarray:
        """(n, 15) last-step predictions."""
        return np.array([s[-1] for s in self.predict_steps(X)])

    def predict_one(self, sample) -> PosturePrediction:
        steps = self.predict_steps([sample])[0]
        return PosturePrediction(steps[-1].reshape(N_VECTORS, 3).copy(), steps.reshape(-1, N_VECTORS, 3))

    def save(self, path):
        check_is_fitted(self, "net_")
        extra = {"estimator": "PostureLSTMRegressor", "params": self.get_params(deep=False),
                 "scaler": self.scaler_.to_dict(), "target_scaler": self.target_scaler_.to_dict(),
                 "history": list(self.history_)}
        extra = json.loads(json.dumps(extra, default=float))
        save_checkpoint(path, self.net_, json.loads(json.dumps(self.train_config().__dict__)), self.seed, extra)

    @classmethod
    def load(cls, path) -> "PostureLSTMRegressor":
        ck = load_checkpoint(path)
        est = cls(**ck.extra["params"])
        est.net_ = ck.net
        est.scaler_ = SequenceScaler.from_dict(ck.extra["scaler"])
        est.target_scaler_ = SequenceScaler.from_dict(ck.extra["target_scaler"])
        est.history_ = ck.extra.get("history", [])
        est.n_features_in_ = STEP_WIDTH
        return est


def train_posture_lstm(samples, config: TrainConfig = TrainConfig(epochs=100), **arch) -> PostureLSTMRegressor:
    return PostureLSTMRegressor(learning_rate=config.learning_rate, epochs=config.epochs,
                                batch_size=config.batch_size, dropout=config.dropout_rate, seed=config.seed,
                                lambda_smooth=config.lambda_smooth, **arch).fit(samples)


def train_posture_lstm_temporal(samples, config: TrainConfig = TrainConfig(epochs=100, lambda_smooth=DEFAULT_LAMBDA),
                                **arch) -> PostureLSTMRegressor:
    if config.lambda_smooth <= 0:
        raise ValueError("the temporal variant needs lambda_smooth > 0")
    return train_posture_lstm(samples, config, **arch)


def predict_posture(model: PostureLSTMRegressor, sample) -> PosturePrediction:
    return model.predict_one(sample)


# --------------------------------------------------------------------------
# fixed-length baselines


class LeastSquares(RegressorMixin, BaseEstimator):
    """Ordinary least squares with an intercept.

    Rank-deficient designs trigger a :class:`SingularDesign` warning and are
    solved with a tiny ridge penalty ``ridge`` on the (centered) weights.
    """

    def __init__(self, ridge=RIDGE):
        self.ridge = ridge

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise EmptyDataset("no samples")
        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = y.mean(axis=0)
        Xc, yc = X - self.x_mean_, y - self.y_mean_
        rank = np.linalg.matrix_rank(Xc) if len(X) > 1 else 0
        self.singular_ = rank < X.shape[1]
        if self.singular_:
            warnings.warn(f"design has rank {rank} < {X.shape[1]} features; applying ridge {self.ridge:g}",
                          SingularDesign, stacklevel=2)
            if X.shape[0] < X.shape[1]:
                # dual form keeps the solve n x n
                self.coef_ = Xc.T @ np.linalg.solve(Xc @ Xc.T + self.ridge * np.eye(len(X)), yc)
            else:
                self.coef_ = np.linalg.solve(Xc.T @ Xc + self.ridge * np.eye(X.shape[1]), Xc.T @ yc)
        else:
            self.coef_ = np.linalg.lstsq(Xc, yc, rcond=None)[0]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return (np.asarray(X, dtype=float) - self.x_mean_) @ self.coef_ + self.y_mean_


def fixed_length_inputs(samples, n_steps: int):
    """Flatten the last ``n_steps`` input rows of each sample; shorter samples are dropped.

    Returns ``(X, kept_indices)``.
    """
    rows, kept = [], []
    for i, s in enumerate(samples):
        inputs = s.inputs if isinstance(s, PostureSample) else np.asarray(s, dtype=float)
        if len(inputs) >= n_steps:
            rows.append(inputs[-n_steps:].reshape(-1))
            kept.append(i)
    X = np.array(rows).reshape(len(rows), n_steps * STEP_WIDTH)
    return X, np.array(kept, dtype=int)


class PostureBaseline(RegressorMixin, BaseEstimator):
    """Classical regressor on the last ``window`` seconds of each sample.

    Parameters
    ----------
    kind : {"linear", "tree", "forest"}
    window : float
        Seconds of history; converted to a step count from the median frame
        gap of the training data.
    n_estimators : int
        Forest size.
    seed : int
    n_jobs : int
        Forest threads.
    """

    def __init__(self, kind="linear", window=BASELINE_WINDOW, n_estimators=100, seed=0, n_jobs=1):
        self.kind = kind
        self.window = window
        self.n_estimators = n_estimators
        self.seed = seed
        self.n_jobs = n_jobs

    @property
    def model_tag(self) -> str:
        return self.kind.upper()

    def _model(self):
        if self.kind == "linear":
            return LeastSquares()
        if self.kind == "tree":
            return CARTRegressor(random_state=self.seed)
        if self.kind == "forest":
            return RandomForestRegressor(n_estimators=self.n_estimators, max_features="sqrt",
                                         random_state=self.seed, n_jobs=self.n_jobs)
        raise ValueError(f"unknown baseline kind {self.kind!r}")

    def fit(self, X, y=None):
        if X is None or len(X) == 0:
            raise EmptyDataset("no training windows")
        seqs, y = _posture_arrays(X, y)
        dt = float(np.median(np.concatenate([s[1:, -1] for s in seqs if len(s) > 1] or [seqs[0][:, -1]])))
        self.n_steps_ = int(round(self.window / dt)) + 1
        F, kept = fixed_length_inputs(seqs, self.n_steps_)
        if len(kept) == 0:
            raise EmptyDataset(f"no window has {self.n_steps_} steps")
        self.model_ = self._model().fit(F, y[kept])
        self.n_features_in_ = STEP_WIDTH
        return self

    def supports(self, X) -> np.ndarray:
        """Boolean mask of samples long enough for the fixed window."""
        check_is_fitted(self, "model_")
        seqs, _ = _posture_arrays(X)
        return np.array([len(s) >= self.n_steps_ for s in seqs])

    def predict(self, X) -> np.ndarray:
        """(n, 15) predictions; NaN rows for samples shorter than the window."""
        check_is_fitted(self, "model_")
        seqs, _ = _posture_arrays(X)
        F, kept = fixed_length_inputs(seqs, self.n_steps_)
        out = np.full((len(seqs), 3 * N_VECTORS), np.nan)
        if len(kept):
            out[kept] = np.asarray(self.model_.predict(F)).reshape(len(kept), -1)
        return out


def save_baseline(model: PostureBaseline, path, config: dict | None = None):
    check_is_fitted(model, "model_")
    m = model.model_
    if isinstance(m, LeastSquares):
        body = {"kind": "linear", "x_mean": m.x_mean_.tolist(), "y_mean": m.y_mean_.tolist(),
                "coef": m.coef_.tolist(), "singular": bool(m.singular_)}
    else:
        body = regressor_to_dict(m)
    params = model.get_params()
    params.pop("n_jobs")  # scheduling only; keeps files identical across thread counts
    doc = {"format": BASELINE_FORMAT, "params": params, "n_steps": model.n_steps_,
           "config": config or {}, "model": body}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_baseline(path) -> PostureBaseline:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != BASELINE_FORMAT:
        raise ValueError(f"{path}: not a {BASELINE_FORMAT} file")
    est = PostureBaseline(**doc["params"])
    body = doc["model"]
    if body["kind"] == "linear":
        m = LeastSquares()
        m.x_mean_ = np.asarray(body["x_mean"])
        m.y_mean_ = np.asarray(body["y_mean"])
        m.coef_ = np.asarray(body["coef"])
        m.singular_ = body["singular"]
        m.n_features_in_ = len(m.x_mean_)
    else:
        m = regressor_from_dict(body)
    est.model_ = m
    est.n_steps_ = doc["n_steps"]
    est.n_features_in_ = STEP_WIDTH
    return est


def train_posture_baselines(samples, kind: str, window: float = BASELINE_WINDOW, seed: int = 0,
                            n_jobs: int = 1) -> PostureBaseline:
    if kind not in ("linear", "tree", "forest"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    return PostureBaseline(kind=kind, window=window, seed=seed, n_jobs=n_jobs).fit(samples)


def check_posture_shape(pred) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    if pred.shape[-1] != 3 * N_VECTORS and pred.shape[-2:] != (N_VECTORS, 3):
        raise ShapeMismatch(f"posture predictions need 15 values per sample, got {pred.shape}")
    return pred.reshape(-1, N_VECTORS, 3)
