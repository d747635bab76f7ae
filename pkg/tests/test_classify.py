import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachgrasp import classify
from reachgrasp.classify import (ClassifierSpec, build_classification_samples, evaluate_cv, make_split,
                                 parse_window, samples_from_arrays, samples_from_features, train_forest, train_knn,
                                 train_tree, window_sweep_accuracy)
from reachgrasp.data import Dataset, SynthConfig, TrialMeta, synth_trial
from reachgrasp.exceptions import DegenerateLabels, EmptyWindow, TooFewUsers


def _synthetic(rng, n_trials=30, per_trial=2, n_users=3):
    """Separable features: every target label shifts its own feature block."""
    objects, sizes, tasks = ["Cube", "Sphere"], ["Small", "Large"], ["Hold", "Push", "Pull"]
    X, labels, users, trials = [], {"object": [], "size": [], "task": []}, [], []
    for i in range(n_trials):
        o, s, t = objects[i % 2], sizes[(i // 2) % 2], tasks[i % 3]
        for _ in range(per_trial):
            x = rng.normal(scale=0.3, size=6)
            x[0] += 3 * objects.index(o)
            x[1] += 3 * sizes.index(s)
            x[2] += 3 * tasks.index(t)
            X.append(x)
            labels["object"].append(o)
            labels["size"].append(s)
            labels["task"].append(t)
            users.append(f"U{i % n_users}")
            trials.append(f"T{i}")
    return samples_from_arrays(np.array(X), labels, users, trials)


class TestWindows:
    def test_parse(self):
        assert parse_window("-1..-5") == (-5, -1)
        assert parse_window((-1, -5)) == (-5, -1)
        assert parse_window("-3..-3") == (-3, -3)
        for bad in ("-1", "0..-3", (1, 2)):
            with pytest.raises(ValueError):
                parse_window(bad)

    def test_one_sample_per_trial(self, small_family):
        samples = build_classification_samples(small_family, "-1..-1")
        assert len(samples) == len(small_family)
        assert {s.frame_offset for s in samples} == {-1}

    def test_five_per_trial(self, small_family):
        samples = build_classification_samples(small_family, "-1..-5")
        assert len(samples) == 5 * len(small_family)
        assert all(s.features.shape == (27,) for s in samples)

    def test_short_trial_truncates(self, meta):
        trial = synth_trial(SynthConfig(duration=2 / 60.0), meta)
        assert len(trial) == 3
        samples = build_classification_samples(Dataset([trial]), "-1..-5")
        assert sorted(s.frame_offset for s in samples) == [-3, -2, -1]

    def test_grasp_frame_is_offset_minus_one(self, clean_trial):
        F = np.arange(len(clean_trial))[:, None] * np.ones((1, 2))
        s = samples_from_features([F], [clean_trial], "-1..-2")
        assert [int(x.features[0]) for x in s] == [len(clean_trial) - 2, len(clean_trial) - 1]

    def test_empty_window(self, meta):
        trial = synth_trial(SynthConfig(duration=2 / 60.0), meta)
        with pytest.raises(EmptyWindow):
            build_classification_samples(Dataset([trial]), "-10..-20")

    def test_both_hands(self, both_hands_family):
        samples = build_classification_samples(both_hands_family, "-1..-2", hands="both")
        assert samples[0].features.shape == (54,)


class TestTraining:
    def test_separable_all_classifiers(self, rng):
        X = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + [5.0, 0.0]])
        labels = {"object": ["a"] * 30 + ["b"] * 30}
        samples = samples_from_arrays(X, labels, ["U"] * 60)
        y = np.array(labels["object"])
        for model in (train_tree(samples, "object"), train_forest(samples, "object", n_estimators=20),
                      train_knn(samples, "object")):
            assert np.mean(model.predict(X) == y) >= 0.99

    def test_single_class_constant(self, rng):
        samples = samples_from_arrays(rng.normal(size=(8, 3)), {"object": ["Cube"] * 8}, ["U"] * 8)
        with pytest.warns(DegenerateLabels):
            model = train_tree(samples, "object")
        assert set(model.predict(rng.normal(size=(5, 3)))) == {"Cube"}

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ClassifierSpec("svm")


class TestSplits:
    def test_louo_one_user_per_fold(self, rng):
        samples = _synthetic(rng, n_trials=36, n_users=6)
        plan = make_split(samples, "louo")
        assert plan.kind == "leave_one_user_out" and len(plan.folds) == 6
        for fold in plan.folds:
            assert len({samples[i].user_id for i in fold}) == 1

    def test_ten_trials_five_folds(self, rng):
        samples = _synthetic(rng, n_trials=10, per_trial=3)
        plan = make_split(samples, "kfold", k=5, seed=2)
        for fold in plan.folds:
            assert len({samples[i].trial_id for i in fold}) == 2

    def test_too_few_users(self, rng):
        samples = _synthetic(rng, n_trials=6, n_users=1)
        with pytest.raises(TooFewUsers):
            make_split(samples, "louo")

    def test_bad_k(self, rng):
        samples = _synthetic(rng, n_trials=4)
        with pytest.raises(ValueError):
            make_split(samples, "kfold", k=5)
        with pytest.raises(ValueError):
            make_split(samples, "bootstrap")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 40), st.integers(1, 4), st.integers(2, 6), st.integers(0, 1000), st.integers(1, 5))
    def test_partition_properties(self, n_trials, per_trial, k, seed, n_users):
        rng = np.random.default_rng(seed)
        samples = _synthetic(rng, n_trials=n_trials, per_trial=per_trial, n_users=n_users)
        n = len(samples)
        kinds = []
        if n_trials >= k:
            kinds.append("kfold")
        if n_users >= 2 and n_trials >= n_users:
            kinds.append("louo")
        for kind in kinds:
            plan = make_split(samples, kind, k=k, seed=seed)
            allidx = np.concatenate(plan.folds)
            assert sorted(allidx.tolist()) == list(range(n))  # disjoint and exhaustive
            if kind == "kfold":
                trials_per_fold = [len({samples[i].trial_id for i in f}) for f in plan.folds]
                assert max(trials_per_fold) - min(trials_per_fold) <= 1
                owner = {}
                for f, fold in enumerate(plan.folds):
                    for i in fold:
                        assert owner.setdefault(samples[i].trial_id, f) == f
            for f in range(len(plan.folds)):
                train, test = plan.train_test(f, n)
                assert not set(train) & set(test) and len(train) + len(test) == n


class TestEvaluate:
    def test_oracle_stub(self, rng, monkeypatch):
        samples = _synthetic(rng, n_trials=20)
        X = np.column_stack([classify.sample_matrix(samples), np.arange(len(samples))])
        labels = {t: classify.labels_of(samples, t) for t in classify.TARGETS}
        samples = samples_from_arrays(X, labels, [s.user_id for s in samples], [s.trial_id for s in samples])

        class Stub:
            def __init__(self):
                self.target = None

            def fit(self, X, y):
                for t, v in labels.items():
                    if np.array_equal(np.asarray(y), v[X[:, -1].astype(int)]):
                        self.target = t
                return self

            def predict(self, X):
                return labels[self.target][X[:, -1].astype(int)]

        monkeypatch.setattr(ClassifierSpec, "build", lambda self, seed=0, n_jobs=1: Stub())
        res = evaluate_cv(samples, make_split(samples, "kfold", 5), ClassifierSpec("tree"))
        assert all(v == 1.0 for v in res.accuracy.values())
        for cm in res.confusion.values():
            assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))

    def test_random_predictor(self, rng, monkeypatch):
        n = 3000
        labels = {"object": rng.choice(["a", "b", "c", "d"], n)}
        samples = samples_from_arrays(rng.normal(size=(n, 2)), labels, ["U"] * n)

        class Random:
            def __init__(self, seed):
                self.rng = np.random.default_rng(seed)

            def fit(self, X, y):
                self.classes = np.unique(y)
                return self

            def predict(self, X):
                return self.rng.choice(self.classes, len(X))

        monkeypatch.setattr(ClassifierSpec, "build", lambda self, seed=0, n_jobs=1: Random(seed))
        res = evaluate_cv(samples, make_split(samples, "kfold", 5), ClassifierSpec("tree"), targets=("object",))
        sigma = math.sqrt(0.25 * 0.75 / n)
        assert abs(res.accuracy["object"] - 0.25) <= 3 * sigma

    def test_confusion_rows_are_supports(self, rng):
        samples = _synthetic(rng, n_trials=24)
        res = evaluate_cv(samples, make_split(samples, "kfold", 4), ClassifierSpec("tree"))
        for t, cm in res.confusion.items():
            y = classify.labels_of(samples, t)
            for i, lab in enumerate(cm.labels):
                assert cm.counts[i].sum() == np.sum(y == lab)
        assert res.n_samples == len(samples) and not res.failed_folds
        assert res.accuracy["overall"] <= min(res.accuracy[t] for t in classify.TARGETS)

    def test_failed_fold_recorded(self, rng):
        # a fold holding every sample leaves nothing to train on
        samples = _synthetic(rng, n_trials=12)
        plan = make_split(samples, "kfold", 3)
        bad = classify.SplitPlan(plan.folds + (np.array([], dtype=int),), plan.kind)
        res = evaluate_cv(samples, bad, ClassifierSpec("knn"))
        assert res.n_samples == len(samples)
        broken = classify.SplitPlan((np.arange(len(samples)),) + plan.folds, plan.kind)
        res = evaluate_cv(samples, broken, ClassifierSpec("knn"))
        assert [k for k, _ in res.failed_folds] == [0]

    def test_deterministic_and_thread_independent(self, rng):
        samples = _synthetic(rng, n_trials=20)
        spec = ClassifierSpec("forest", {"n_estimators": 8})
        plan = make_split(samples, "kfold", 4, seed=3)
        a = evaluate_cv(samples, plan, spec)
        b = evaluate_cv(samples, plan, spec, n_jobs=3)
        assert a.accuracy == b.accuracy
        for t in classify.TARGETS:
            assert np.array_equal(a.confusion[t].counts, b.confusion[t].counts)

    def test_separable_high_accuracy(self, rng):
        samples = _synthetic(rng, n_trials=40)
        res = evaluate_cv(samples, make_split(samples, "kfold", 5), ClassifierSpec("forest", {"n_estimators": 20}))
        assert res.accuracy["overall"] >= 0.95


class TestSweep:
    def _noisy_rows(self, ds, rng):
        """Features whose noise grows with distance from the grasp frame."""
        codes = {"Cube": 0, "Sphere": 1, "Cylinder": 2, "Small": 0, "Medium": 1, "Large": 2,
                 "Hold": 0, "Push": 1, "Pull": 2}
        rows = []
        for t in ds.trials:
            g = t.grasp_index()
            dist = (g - np.arange(len(t)))[:, None]
            base = np.array([codes[t.meta.object], codes[t.meta.size], codes.get(t.meta.task, 3)], dtype=float)
            rows.append(base + rng.normal(size=(len(t), 3)) * (0.05 + 0.08 * dist))
        return rows

    def test_accuracy_drops_with_distance(self, small_family, rng):
        rows = self._noisy_rows(small_family, rng)
        spec = ClassifierSpec("knn")
        table = window_sweep_accuracy(small_family, ["-1..-5", "-21..-25"], spec, k=3, feature_rows=rows)
        near, far = table
        assert np.mean([near[t] for t in classify.TARGETS]) > np.mean([far[t] for t in classify.TARGETS])

    def test_counts_non_increasing(self, small_family, meta, rng):
        short = synth_trial(SynthConfig(duration=10 / 60.0), TrialMeta("U9", "Hold", "Cube", "Small", 0.1, "S1"))
        ds = Dataset(list(small_family.trials) + [short])
        rows = self._noisy_rows(ds, rng)
        table = window_sweep_accuracy(ds, ["-1..-5", "-6..-10", "-11..-15", "-200..-300"], ClassifierSpec("knn"),
                                      k=3, feature_rows=rows)
        counts = [r["n_samples"] for r in table]
        assert counts == sorted(counts, reverse=True)
        assert counts[-1] == 0 and math.isnan(table[-1]["overall"])
        assert counts[2] == 5 * len(small_family) + 1  # the short trial reaches frame 0
