import math

import numpy as np
import pytest

from reachgrasp.data import FamilyConfig, SynthConfig, TrialMeta, synth_family, synth_trial
from reachgrasp.exceptions import NotMoving, ShapeMismatch, TrialTooShort
from reachgrasp.neural import TrainConfig
from reachgrasp.reach import (HISTORY_SPAN, MJTReachPredictor, ReachLSTMRegressor, build_dataset_windows,
                              build_reach_windows, mjt_aux, predict_reach, predict_reach_mjt, train_reach_lstm,
                              train_reach_lstm_mjt, window_plan)

XF = np.array([0.3, 0.2, 0.1])


def _trial(duration, meta, **kw):
    return synth_trial(SynthConfig(duration=duration, xf=tuple(XF), **kw), meta)


class TestWindows:
    def test_two_second_sweep(self, meta):
        s = build_reach_windows(_trial(2.0, meta), stride=0.25, min_len=0.25)
        assert len(s) == 8
        np.testing.assert_allclose([x.target_time for x in s], np.arange(1.75, -0.01, -0.25), atol=1e-12)
        for x in s:
            assert x.target_time == pytest.approx(-x.window_end_offset, abs=1e-12)

    def test_last_window_ends_at_grasp(self, meta):
        last = build_reach_windows(_trial(2.0, meta), stride=0.25, min_len=0.25)[-1]
        assert last.target_time == 0.0
        np.testing.assert_array_equal(last.target_position, last.positions[-1])

    def test_long_trial_starts_two_seconds_back(self, meta):
        s = build_reach_windows(_trial(3.0, meta), stride=0.5, min_len=0.5)
        assert s[0].times[0] == pytest.approx(1.0)
        assert all(x.times[0] == s[0].times[0] for x in s)

    def test_counting_oracle(self):
        ds, _ = synth_family(FamilyConfig(n_users=2, trials_per_user=5, duration_range=(1.0, 3.0), seed=6))
        stride, min_len = 0.1, 0.2
        expect = 0
        for t in ds.trials:
            span = min(HISTORY_SPAN, t.meta.grasp_time - t.times[0])
            expect += int(math.floor((span - min_len) / stride + 1e-9)) + 1
        assert len(build_dataset_windows(ds.trials, stride, min_len)) == expect

    def test_no_leakage(self, noisy_trial):
        for x in build_reach_windows(noisy_trial, stride=1 / 60, min_len=0.1):
            limit = noisy_trial.meta.grasp_time + x.window_end_offset + 1e-9
            assert x.times.max() <= limit and x.history_times.max() <= limit
            assert np.all(x.inputs[:, 3] > 0)

    def test_too_short(self, meta):
        with pytest.raises(TrialTooShort):
            build_reach_windows(_trial(0.2, meta), min_len=0.5)
        with pytest.raises(ValueError):
            window_plan([0.0, 1.0], 1.0, 0.0, 0.1)


class TestMJT:
    def test_noiseless_late_windows(self, clean_trial):
        # onset is detected ~83 ms after the true start, which biases the
        # fit; the last sixth of the motion still lands within 2.5 cm
        for x in build_reach_windows(clean_trial, stride=0.1, min_len=1.0):
            p = predict_reach_mjt(x)
            assert np.linalg.norm(p.position - XF) <= 0.025
            assert abs(p.time_remaining - x.target_time) <= 0.15
            assert p.time_remaining >= 0 and p.model_tag == "MJT"

    def test_exact_with_true_onset(self, clean_trial):
        # a window holding only the motion from its true start, with no
        # history before it, hands the fit the exact onset context
        from reachgrasp.mjt import fit_mjt
        n = len(clean_trial) // 2
        fit = fit_mjt(clean_trial.times[:n], clean_trial.palm[:n], 0.0, clean_trial.palm[0],
                      clean_trial.palm[n - 1], clean_trial.times[n - 1])
        assert np.linalg.norm(fit.params.xf - XF) <= 1e-3

    def test_error_decreases_as_window_extends(self, meta):
        trial = _trial(1.6, meta)
        s = build_reach_windows(trial, stride=0.1, min_len=0.4)
        err = [np.linalg.norm(predict_reach_mjt(x).position - XF) for x in s if x.target_time >= 0.15]
        assert len(err) >= 8
        assert all(b <= a + 1e-6 for a, b in zip(err, err[1:]))

    def test_not_moving(self):
        still = np.column_stack([np.tile([0.1, 0.2, 0.3], (30, 1)), np.full(30, 1 / 60)])
        with pytest.raises(NotMoving):
            MJTReachPredictor().predict_one(still)
        assert np.isnan(MJTReachPredictor().predict([still])).all()

    def test_thread_independent(self, noisy_trial):
        s = build_reach_windows(noisy_trial, stride=0.1, min_len=0.3)
        a = MJTReachPredictor().predict(s)
        b = MJTReachPredictor(n_jobs=3).predict(s)
        np.testing.assert_array_equal(a, b)
        assert np.all(a[np.isfinite(a[:, 3]), 3] >= 0)

    def test_aux_fallback(self, clean_trial):
        s = build_reach_windows(clean_trial, stride=0.5, min_len=0.5)[:2]
        pred = np.array([[1.0, 2.0, 3.0, 0.4], [np.nan] * 4])
        aux = mjt_aux(s, pred)
        np.testing.assert_array_equal(aux[0], [1, 2, 3, 0.4, 1])
        np.testing.assert_array_equal(aux[1], [*s[1].positions[-1], 2.0, 0])


def _small(**kw):
    base = dict(hidden_size=8, dense_units=8, dropout=0.0, batch_size=4)
    base.update(kw)
    return ReachLSTMRegressor(**base)


class TestLSTM:
    def test_memorizes_constant(self):
        X = [np.column_stack([np.tile([0.1, 0.2, 0.3], (5, 1)), np.full(5, 1 / 60)]) for _ in range(8)]
        y = np.tile([0.3, -0.1, 0.2, 0.5], (8, 1))
        m = _small(epochs=300, learning_rate=0.01).fit(X, y)
        assert np.max(np.abs(m.predict(X) - y)) <= 1e-2

    def test_mjt_branch_carries_information(self, rng):
        # blank trajectories: only the MJT inputs can explain the targets
        n = 24
        y = np.column_stack([rng.uniform(-0.5, 0.5, (n, 3)), rng.uniform(0.1, 1.5, n)])
        X = [np.zeros((4, 4)) for _ in range(n)]
        m = _small(epochs=2000, learning_rate=0.003, batch_size=n, dense_units=32, use_mjt=True,
                   mjt_position_units=32, mjt_time_units=32)
        m.fit(X, y, mjt_predictions=y)
        assert min(m.history_) <= 5e-3
        assert np.max(np.abs(m.predict(X, y) - y)) <= 2e-2

    def test_determinism_and_persistence(self, tmp_path, noisy_trial):
        s = build_reach_windows(noisy_trial, stride=0.2, min_len=0.3)
        a = train_reach_lstm(s, TrainConfig(epochs=2, seed=4), hidden_size=8)
        b = train_reach_lstm(s, TrainConfig(epochs=2, seed=4), hidden_size=8)
        for k in a.net_.params:
            np.testing.assert_array_equal(a.net_.params[k], b.net_.params[k])
        np.testing.assert_array_equal(a.predict(s), a.predict(s))
        a.save(tmp_path / "r.json")
        np.testing.assert_array_equal(ReachLSTMRegressor.load(tmp_path / "r.json").predict(s), a.predict(s))

    def test_lstm_mjt_round_trip(self, tmp_path, noisy_trial):
        s = build_reach_windows(noisy_trial, stride=0.2, min_len=0.3)
        m = train_reach_lstm_mjt(s, TrainConfig(epochs=2), hidden_size=8)
        m.save(tmp_path / "m.json")
        back = ReachLSTMRegressor.load(tmp_path / "m.json")
        np.testing.assert_array_equal(back.predict(s), m.predict(s))
        p = predict_reach(m, s[0])
        assert p.model_tag == "LSTM_MJT" and p.time_remaining >= 0
        with pytest.raises(ShapeMismatch):
            m.predict(s, mjt_predictions=np.zeros((1, 4)))

    def test_time_clamped(self, rng):
        X = [np.column_stack([rng.normal(size=(5, 3)), np.full(5, 1 / 60)]) for _ in range(4)]
        y = np.column_stack([rng.normal(size=(4, 3)), np.zeros(4)])
        m = _small(epochs=1).fit(X, y)
        m.target_scaler_.mean_[3] = -5.0  # push every time prediction below zero
        assert np.all(m.predict(X)[:, 3] == 0.0)

    def test_loss_history_decreases(self):
        ds, _ = synth_family(FamilyConfig(n_users=2, trials_per_user=4, seed=0))
        s = build_dataset_windows(ds.trials, 0.25, 0.25)
        m = ReachLSTMRegressor(hidden_size=16, epochs=5, seed=0).fit(s)
        assert np.all(np.isfinite(m.history_)) and m.history_[-1] <= m.history_[0]
