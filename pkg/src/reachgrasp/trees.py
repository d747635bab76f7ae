"""CART decision trees and bagged forests for classification and regression.

Splits are axis-aligned thresholds chosen to minimize the weighted child
impurity: Gini for classification, summed squared error (variance
reduction) for regression.  Thresholds sit midway between consecutive
distinct feature values and samples with ``x <= threshold`` go left.

Ties between equally good splits go to the first candidate examined
(feature order, then ascending threshold), so fitted trees are fully
determined by the data, the parameters and ``random_state``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DegenerateLabels, EmptyDataset

LEAF = -1


class TreeStructure:
    """Flat array representation of a fitted tree (node 0 is the root; parents precede children).

    ``value[k]`` holds class proportions (classification) or the mean
    target vector (regression) of node ``k``; internal nodes keep theirs
    too, which is handy for inspection.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples):
        self.feature = np.asarray(feature, dtype=np.intp)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.intp)
        self.right = np.asarray(right, dtype=np.intp)
        self.value = np.asarray(value, dtype=float)
        self.n_samples = np.asarray(n_samples, dtype=np.intp)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=int)
        for k in range(self.node_count):
            if self.left[k] != LEAF:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.intp)
        active = np.flatnonzero(self.left[node] != LEAF)
        while active.size:
            k = node[active]
            go_left = X[active, self.feature[k]] <= self.threshold[k]
            node[active] = np.where(go_left, self.left[k], self.right[k])
            active = active[self.left[node[active]] != LEAF]
        return node

    def is_well_formed(self) -> bool:
        internal = self.left != LEAF
        if np.any((self.right == LEAF) != ~internal):
            return False
        children = np.concatenate([self.left[internal], self.right[internal]])
        if len(children) != len(set(children.tolist())) or np.any(children <= 0):
            return False
        return bool(np.all(self.n_samples[~internal] > 0))


def _best_split(x, stats, sq, n_min, classification):
    """Best threshold on one feature.

    ``stats`` are per-sample one-hot rows (classification) or targets
    (regression), already ordered by ``x``; ``sq`` is the per-sample sum of
    squared targets (regression only).  Returns ``(score, position)`` where
    ``score`` is the weighted child impurity and the split falls between
    sorted positions ``position`` and ``position + 1``; ``(inf, -1)`` if no
    admissible split exists.
    """
    n = len(x)
    valid = x[:-1] < x[1:]
    n_left = np.arange(1, n)
    valid &= (n_left >= n_min) & (n - n_left >= n_min)
    if not valid.any():
        return math.inf, -1
    cum = np.cumsum(stats, axis=0)[:-1]
    total = cum[-1] + stats[-1]
    right = total - cum
    nl = n_left[:, None].astype(float)
    nr = (n - n_left)[:, None].astype(float)
    if classification:
        # n * gini = n - sum(counts^2) / n
        score = (nl[:, 0] - np.sum(cum * cum, axis=1) / nl[:, 0]) + (nr[:, 0] - np.sum(right * right, axis=1) / nr[:, 0])
    else:
        csq = np.cumsum(sq)[:-1]
        rsq = sq.sum() - csq
        score = (csq - np.sum(cum * cum, axis=1) / nl[:, 0]) + (rsq - np.sum(right * right, axis=1) / nr[:, 0])
    score = np.where(valid, score, math.inf)
    pos = int(np.argmin(score))
    return float(score[pos]), pos


def _node_impurity(stats, sq, classification) -> float:
    n = len(stats)
    s = stats.sum(axis=0)
    if classification:
        return float(n - np.dot(s, s) / n)
    return float(sq.sum() - np.dot(s, s) / n)


def build_tree(X, stats, classification, max_depth=None, min_samples_leaf=1, max_features=None,
               rng=None) -> TreeStructure:
    """Grow a CART tree.

    Parameters
    ----------
    X : (n, d) array
    stats : (n, k) array
        One-hot class indicators for classification, targets for regression.
    max_features : int or None
        Number of non-constant features examined per node (``None`` = all,
        in natural order).  Fewer than all requires ``rng``.
    """
    n, d = X.shape
    sq = None if classification else np.sum(stats * stats, axis=1)
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        s = stats[idx].mean(axis=0)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(s)
        counts.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        m = len(idx)
        if (max_depth is not None and depth >= max_depth) or m < 2 * min_samples_leaf:
            continue
        node_sq = None if sq is None else sq[idx]
        if _node_impurity(stats[idx], node_sq, classification) <= 1e-12 * max(m, 1):
            continue
        order_f = range(d) if max_features is None or max_features >= d else rng.permutation(d)
        best = (math.inf, -1, -1, None)
        visited = 0
        for f in order_f:
            col = X[idx, f]
            if col.min() == col.max():
                continue
            visited += 1
            order = np.argsort(col, kind="stable")
            xs = col[order]
            score, pos = _best_split(xs, stats[idx[order]], None if sq is None else node_sq[order],
                                     min_samples_leaf, classification)
            if score < best[0]:
                best = (score, f, pos, (xs, order))
            if max_features is not None and visited >= max_features:
                break
        score, f, pos, sorted_ = best
        if f < 0:
            continue
        xs, order = sorted_
        thr = 0.5 * (xs[pos] + xs[pos + 1])
        if not xs[pos] <= thr < xs[pos + 1]:
            thr = xs[pos]
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        # siblings get consecutive indices; the left subtree is expanded first
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return TreeStructure(feature, threshold, left, right, value, counts)


def _resolve_max_features(max_features, d):
    if max_features is None:
        return None
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if isinstance(max_features, float):
        return max(1, int(max_features * d))
    return int(max_features)


def _encode_labels(y):
    y = np.asarray(y)
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        warnings.warn(f"only one class ({classes[0]!r}) present; fitting a constant classifier",
                      DegenerateLabels, stacklevel=3)
    return classes, codes


class CARTClassifier(ClassifierMixin, BaseEstimator):
    """Decision tree classifier with Gini impurity.

    Parameters
    ----------
    max_depth : int or None
        ``None`` grows until leaves are pure or cannot be split.
    min_samples_leaf : int
    max_features : None, int, float or "sqrt"
        Features examined per split; sampled with ``random_state`` when fewer
        than all.
    random_state : int
    """

    def __init__(self, max_depth=None, min_samples_leaf=1, max_features=None, random_state=0):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, codes = _encode_labels(y)
        self.n_features_in_ = X.shape[1]
        onehot = np.eye(len(self.classes_))[codes]
        self.tree_ = build_tree(X, onehot, True, self.max_depth, self.min_samples_leaf,
                                _resolve_max_features(self.max_features, X.shape[1]),
                                np.random.default_rng(self.random_state))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=float)
        return self.tree_.value[self.tree_.apply(X)]

    def predict_codes(self, X):
        # argmax keeps the first (lexicographically smallest) class on ties
        return np.argmax(self.predict_proba(X), axis=1)

    def predict(self, X):
        return self.classes_[self.predict_codes(X)]


class CARTRegressor(RegressorMixin, BaseEstimator):
    """Regression tree with variance-reduction splits; multi-output targets supported."""

    def __init__(self, max_depth=None, min_samples_leaf=1, max_features=None, random_state=0):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, multi_output=True, y_numeric=True)
        self._single = y.ndim == 1
        Y = y[:, None] if self._single else y
        self.n_features_in_ = X.shape[1]
        self.tree_ = build_tree(X, Y, False, self.max_depth, self.min_samples_leaf,
                                _resolve_max_features(self.max_features, X.shape[1]),
                                np.random.default_rng(self.random_state))
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=float)
        out = self.tree_.value[self.tree_.apply(X)]
        return out[:, 0] if self._single else out


def _tree_seeds(random_state, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(random_state).spawn(n)]


class _Forest(BaseEstimator):

    def __init__(self, n_estimators=100, max_features="sqrt", bootstrap=True, max_depth=None,
                 min_samples_leaf=1, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_trees(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        n = len(X)
        seeds = _tree_seeds(self.random_state, self.n_estimators)

        def one(seed):
            rng = np.random.default_rng(seed)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            return self._fit_one(X[idx], y[idx], seed)

        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                self.estimators_ = list(pool.map(one, seeds))
        else:
            self.estimators_ = [one(s) for s in seeds]
        self.n_features_in_ = X.shape[1]
        return self


class _CodedTree(CARTClassifier):
    """Tree fitted on integer codes of a fixed class set (used inside forests)."""

    def _fit_codes(self, X, codes, n_classes):
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        onehot = np.eye(n_classes)[codes]
        self.tree_ = build_tree(X, onehot, True, self.max_depth, self.min_samples_leaf,
                                _resolve_max_features(self.max_features, X.shape[1]),
                                np.random.default_rng(self.random_state))
        return self


class RandomForestClassifier(ClassifierMixin, _Forest):
    """Bagged CART classifiers with per-split feature subsampling.

    Each tree votes for its leaf's majority class; the forest predicts the
    most voted class, ties going to the lexicographically smallest label.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, codes = _encode_labels(y)
        return self._fit_trees(X, codes)

    def _fit_one(self, X, codes, seed):
        tree = _CodedTree(max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                          max_features=self.max_features, random_state=seed)
        return tree._fit_codes(X, codes, len(self.classes_))

    def votes(self, X) -> np.ndarray:
        """(n, n_classes) vote counts."""
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=float)
        counts = np.zeros((len(X), len(self.classes_)), dtype=int)
        rows = np.arange(len(X))
        for tree in self.estimators_:
            np.add.at(counts, (rows, tree.predict_codes(X)), 1)
        return counts

    def predict(self, X):
        return self.classes_[np.argmax(self.votes(X), axis=1)]


class RandomForestRegressor(RegressorMixin, _Forest):
    """Bagged regression trees; the prediction is the mean of the trees."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, multi_output=True, y_numeric=True)
        return self._fit_trees(X, y)

    def _fit_one(self, X, y, seed):
        return CARTRegressor(max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                             max_features=self.max_features, random_state=seed).fit(X, y)

    def predict(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=float)
        return np.mean([t.predict(X) for t in self.estimators_], axis=0)


class NearestNeighborClassifier(ClassifierMixin, BaseEstimator):
    """k-nearest-neighbour vote with the Euclidean metric.

    Distance ties go to the smaller training index; vote ties to the
    lexicographically smallest label.
    """

    def __init__(self, n_neighbors=1, chunk_size=512):
        self.n_neighbors = n_neighbors
        self.chunk_size = chunk_size

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if len(X) == 0:
            raise EmptyDataset("no training samples")
        self.classes_, self._codes = np.unique(np.asarray(y), return_inverse=True)
        self._X = X
        self.n_features_in_ = X.shape[1]
        return self

    def kneighbors(self, X) -> np.ndarray:
        check_is_fitted(self, "_X")
        X = check_array(X, dtype=float)
        k = min(self.n_neighbors, len(self._X))
        out = np.empty((len(X), k), dtype=np.intp)
        for lo in range(0, len(X), self.chunk_size):
            q = X[lo:lo + self.chunk_size]
            diff = q[:, None, :] - self._X[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            out[lo:lo + len(q)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return out

    def predict(self, X):
        nb = self.kneighbors(X)
        codes = self._codes[nb]
        counts = np.zeros((len(nb), len(self.classes_)), dtype=int)
        for j in range(codes.shape[1]):
            np.add.at(counts, (np.arange(len(nb)), codes[:, j]), 1)
        return self.classes_[np.argmax(counts, axis=1)]


# --------------------------------------------------------------------------
# persistence


def tree_to_dict(tree: TreeStructure) -> dict:
    return {"feature": tree.feature.tolist(), "threshold": tree.threshold.tolist(), "left": tree.left.tolist(),
            "right": tree.right.tolist(), "value": tree.value.tolist(), "n_samples": tree.n_samples.tolist()}


def tree_from_dict(d: dict) -> TreeStructure:
    return TreeStructure(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["n_samples"])


def regressor_to_dict(model) -> dict:
    """JSON-ready form of a fitted :class:`CARTRegressor` or :class:`RandomForestRegressor`."""
    if isinstance(model, CARTRegressor):
        return {"kind": "tree", "params": model.get_params(), "single_output": model._single,
                "n_features_in": model.n_features_in_, "tree": tree_to_dict(model.tree_)}
    if isinstance(model, RandomForestRegressor):
        params = model.get_params()
        params.pop("n_jobs")
        return {"kind": "forest", "params": params, "n_features_in": model.n_features_in_,
                "trees": [regressor_to_dict(t) for t in model.estimators_]}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def regressor_from_dict(d: dict):
    if d["kind"] == "tree":
        m = CARTRegressor(**d["params"])
        m.tree_ = tree_from_dict(d["tree"])
        m._single = d["single_output"]
    else:
        m = RandomForestRegressor(**d["params"])
        m.estimators_ = [regressor_from_dict(t) for t in d["trees"]]
    m.n_features_in_ = d["n_features_in"]
    return m
