"""Per-frame classification of object, size and task from hand features.

Frames near the grasp are turned into labeled feature rows
(:func:`build_classification_samples`), split into trial-grouped k-fold or
leave-one-user-out folds (:func:`make_split`) and scored with one
independently trained classifier per target (:func:`evaluate_cv`).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import EmptyWindow, ReachGraspError, TooFewUsers
from .features import trial_features
from .kinematics import DEFAULT_RATE, SavgolSpec
from .report import ConfusionMatrix
from .trees import CARTClassifier, NearestNeighborClassifier, RandomForestClassifier

TARGETS = ("object", "size", "task")
CLASSIFIERS = ("tree", "forest", "knn")


@dataclass(frozen=True)
class LabeledSample:
    """One frame's features with its trial labels.

    ``frame_offset`` is -1 for the grasp frame (the last frame at or before
    the grasp time), -2 for the frame before it, and so on.
    """

    features: np.ndarray
    labels: dict
    user_id: str
    trial_id: str
    frame_offset: int


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple  # tuple of index arrays
    kind: str
    seed: int = 0

    def train_test(self, k: int, n: int):
        test = np.asarray(self.folds[k], dtype=int)
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        return np.flatnonzero(mask), test


@dataclass(frozen=True)
class ClassifierSpec:
    """Classifier kind plus keyword parameters for its constructor."""

    kind: str = "forest"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {self.kind!r}")

    def build(self, seed: int = 0, n_jobs: int = 1):
        if self.kind == "tree":
            return CARTClassifier(random_state=seed, **self.params)
        if self.kind == "forest":
            return RandomForestClassifier(random_state=seed, n_jobs=n_jobs, **self.params)
        return NearestNeighborClassifier(**self.params)


@dataclass
class CVResult:
    accuracy: dict  # per target plus "overall"
    confusion: dict  # target -> ConfusionMatrix
    n_samples: int
    failed_folds: list
    predictions: dict  # target -> array of predicted labels (None where the fold failed)


def parse_window(window) -> tuple:
    """Frame-offset window as ``(lo, hi)`` with ``lo <= hi <= -1``.

    Accepts a pair in either order or a string such as ``"-1..-5"``.
    """
    if isinstance(window, str):
        a, sep, b = window.partition("..")
        if not sep:
            raise ValueError(f"window must look like '-1..-5', got {window!r}")
        window = (int(a), int(b))
    lo, hi = sorted(int(v) for v in window)
    if hi > -1:
        raise ValueError(f"frame offsets must be <= -1, got {window}")
    return lo, hi


def samples_from_features(feature_rows, trials, window) -> list:
    """Labeled samples from precomputed per-trial feature matrices."""
    lo, hi = parse_window(window)
    out = []
    for F, trial in zip(feature_rows, trials):
        g = trial.grasp_index()
        labels = {"object": trial.meta.object, "size": trial.meta.size, "task": trial.meta.task}
        for off in range(lo, hi + 1):
            i = g + 1 + off
            if 0 <= i <= g:
                out.append(LabeledSample(F[i], labels, trial.meta.user_id, trial.meta.trial_id, off))
    return out


def dataset_features(ds: Dataset, hands="right", spec: SavgolSpec | None = None, rate=DEFAULT_RATE,
                     n_jobs: int = 1) -> list:
    """Per-trial feature matrices, in dataset order."""
    def one(trial):
        return trial_features(trial, hands, spec, rate)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(one, ds.trials))
    return [one(t) for t in ds.trials]


def build_classification_samples(ds: Dataset, window=(-5, -1), hands="right", spec: SavgolSpec | None = None,
                                 rate=DEFAULT_RATE, n_jobs: int = 1) -> list:
    """One :class:`LabeledSample` per frame inside ``window`` of every trial.

    Trials with fewer frames than the window contribute the frames they have.
    """
    samples = samples_from_features(dataset_features(ds, hands, spec, rate, n_jobs), ds.trials, window)
    if not samples:
        raise EmptyWindow(f"no frames inside window {window}")
    return samples


def samples_from_arrays(X, labels: dict, user_ids, trial_ids=None, frame_offsets=None) -> list:
    """Wrap plain arrays as labeled samples (for synthetic feature experiments)."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    trial_ids = [f"s{i}" for i in range(n)] if trial_ids is None else list(trial_ids)
    frame_offsets = [-1] * n if frame_offsets is None else list(frame_offsets)
    return [LabeledSample(X[i], {k: v[i] for k, v in labels.items()}, str(user_ids[i]), str(trial_ids[i]),
                          int(frame_offsets[i])) for i in range(n)]


def sample_matrix(samples):
    if not samples:
        raise EmptyWindow("no samples")
    X = np.stack([s.features for s in samples])
    if X.ndim != 2:
        raise ValueError("features must be 1-D per sample with a common length")
    return X


def labels_of(samples, target) -> np.ndarray:
    return np.array([s.labels[target] for s in samples])


# --------------------------------------------------------------------------
# training


def _train(samples, target, spec: ClassifierSpec, seed=0, n_jobs=1):
    return spec.build(seed, n_jobs).fit(sample_matrix(samples), labels_of(samples, target))


def train_tree(samples, target, seed=0, **params):
    return _train(samples, target, ClassifierSpec("tree", params), seed)


def train_forest(samples, target, seed=0, n_jobs=1, **params):
    return _train(samples, target, ClassifierSpec("forest", params), seed, n_jobs)


def train_knn(samples, target, **params):
    return _train(samples, target, ClassifierSpec("knn", params))


# --------------------------------------------------------------------------
# splits


def make_split(samples, kind="kfold", k=5, seed=0) -> SplitPlan:
    """Folds of sample indices.

    ``kfold`` shuffles trial ids with ``seed`` and deals them round-robin
    into ``k`` folds, so a trial never straddles folds.
    ``leave_one_user_out`` (alias ``louo``) makes one fold per user in sorted
    user order.
    """
    trial_ids = [s.trial_id for s in samples]
    if kind == "kfold":
        uniq = list(dict.fromkeys(trial_ids))
        if k < 2 or len(uniq) < k:
            raise ValueError(f"kfold needs 2 <= k <= number of trials ({len(uniq)}), got k={k}")
        order = np.random.default_rng(seed).permutation(len(uniq))
        fold_of = {uniq[j]: r % k for r, j in enumerate(order)}
        assign = np.array([fold_of[t] for t in trial_ids])
        folds = tuple(np.flatnonzero(assign == f) for f in range(k))
    elif kind in ("leave_one_user_out", "louo"):
        kind = "leave_one_user_out"
        users = np.array([s.user_id for s in samples])
        uniq = sorted(set(users.tolist()))
        if len(uniq) < 2:
            raise TooFewUsers(f"leave-one-user-out needs >= 2 users, got {len(uniq)}")
        folds = tuple(np.flatnonzero(users == u) for u in uniq)
    else:
        raise ValueError(f"unknown split kind {kind!r}")
    return SplitPlan(folds, kind, seed)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


# --------------------------------------------------------------------------
# evaluation


def evaluate_cv(samples, plan: SplitPlan, spec: ClassifierSpec = ClassifierSpec(), targets=TARGETS,
                n_jobs: int = 1, seed: int | None = None) -> CVResult:
    """Cross-validated accuracy per target and overall.

    For every fold one classifier per target is trained on the other folds.
    "Overall" is the fraction of scored samples whose targets are all
    predicted correctly.  A fold whose training fails is recorded in
    ``failed_folds`` and its samples are left out of every score.
    """
    X = sample_matrix(samples)
    n = len(samples)
    Y = {t: labels_of(samples, t) for t in targets}
    seed = plan.seed if seed is None else seed

    def run_fold(k):
        train, test = plan.train_test(k, n)
        rs = fold_seed(seed, k)
        out = {}
        for t in targets:
            model = spec.build(rs).fit(X[train], Y[t][train])
            out[t] = model.predict(X[test])
        return test, out

    def safe(k):
        try:
            return run_fold(k)
        except (ReachGraspError, ValueError) as exc:
            return k, exc

    ks = range(len(plan.folds))
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(safe, ks))
    else:
        results = [safe(k) for k in ks]

    preds = {t: np.full(n, None, dtype=object) for t in targets}
    scored = np.zeros(n, dtype=bool)
    failed = []
    for k, (first, second) in enumerate(results):
        if isinstance(second, Exception):
            failed.append((k, str(second)))
            continue
        for t in targets:
            preds[t][first] = second[t]
        scored[first] = True

    acc, conf = {}, {}
    all_ok = scored.copy()
    for t in targets:
        labels = sorted(set(Y[t].tolist()))
        ok = scored & (preds[t] == Y[t])
        all_ok &= ok
        acc[t] = float(ok[scored].mean()) if scored.any() else math.nan
        conf[t] = ConfusionMatrix.from_labels(Y[t][scored].tolist(), preds[t][scored].tolist(),
                                              sorted(set(labels) | set(preds[t][scored].tolist())))
    acc["overall"] = float(all_ok[scored].mean()) if scored.any() else math.nan
    return CVResult(acc, conf, int(scored.sum()), failed, preds)


def window_sweep_accuracy(ds: Dataset, windows, spec: ClassifierSpec = ClassifierSpec(), hands="right", k=5,
                          seed=0, targets=TARGETS, n_jobs=1, feature_rows=None) -> list:
    """Accuracy for each frame window under trial-grouped k-fold CV.

    Returns one row per window with the sample count and per-target
    accuracies; windows with no frames (or too few trials to split) get
    count 0 and NaN accuracies.
    """
    feature_rows = feature_rows if feature_rows is not None else dataset_features(ds, hands, n_jobs=n_jobs)
    rows = []
    for w in windows:
        lo, hi = parse_window(w)
        samples = samples_from_features(feature_rows, ds.trials, (lo, hi))
        row = {"window": f"{hi}..{lo}", "n_samples": len(samples)}
        try:
            if not samples:
                raise EmptyWindow(f"no frames inside window {w}")
            res = evaluate_cv(samples, make_split(samples, "kfold", k, seed), spec, targets, n_jobs)
            row.update({t: res.accuracy[t] for t in (*targets, "overall")})
        except (EmptyWindow, ValueError):
            row["n_samples"] = len(samples) if samples else 0
            row.update({t: math.nan for t in (*targets, "overall")})
        rows.append(row)
    return rows
