import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachgrasp.data import HAND_POINTS, Frame, HandFrame
from reachgrasp.exceptions import DegenerateDirection
from reachgrasp.features import (FEATURE_NAMES, REST_ANGLE, GraspFeatureExtractor, extract_frame_features,
                                 feature_names, flexion_vectors, grasp_depth, hand_feature_matrix,
                                 palm_object_angle, palm_vector, tip_vectors, trial_features)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_features.json").read_text())


def _hand(**pts):
    base = {n: (0.0, 0.0, 0.0) for n in HAND_POINTS}
    base["index_local_z"] = (0.0, 0.0, 1.0)
    base.update(pts)
    return HandFrame(**{k: tuple(float(c) for c in v) for k, v in base.items()})


def _rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def _random_hand(rng):
    arr = rng.normal(scale=0.05, size=(9, 3))
    z = rng.normal(size=3)
    arr[8] = z / np.linalg.norm(z)
    return HandFrame.from_array(arr)


class TestPrimitives:
    def test_coincident_thumb_index(self):
        h = _hand(tip_thumb=(0.1, 0.1, 0.1), tip_index=(0.1, 0.1, 0.1))
        u_ti, *_, aperture = tip_vectors(h)
        np.testing.assert_array_equal(u_ti, 0.0)
        assert aperture == 0.0

    def test_three_four_five(self):
        h = _hand(tip_index=(0.03, 0.04, 0.0))
        u_ti, *_, aperture = tip_vectors(h)
        np.testing.assert_allclose(u_ti, [0.03, 0.04, 0.0])
        assert aperture == pytest.approx(0.05, abs=1e-15)

    def test_straight_finger_flexion(self):
        h = _hand(tip_index=(0.09, 0.0, 0.0), prox_index=(0.0, 0.0, 0.0))
        np.testing.assert_allclose(flexion_vectors(h)[1], [-0.09, 0.0, 0.0])

    def test_degenerate_curl(self):
        h = _hand(tip_thumb=(0.02, 0.03, 0.0), prox_thumb=(0.02, 0.03, 0.0))
        np.testing.assert_array_equal(flexion_vectors(h)[0], 0.0)

    def test_flexion_rotates_with_hand(self):
        rot90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        arr = np.array([[0, 0, 0], [0.02, 0.05, 0], [0.1, 0.02, 0.01], [0.1, 0, 0], [0.1, 0, 0], [0.1, 0, 0],
                        [0.03, 0.03, 0.0], [0.06, 0.02, 0.0], [0, 0, 1]], dtype=float)
        h, hr = HandFrame.from_array(arr), HandFrame.from_array(arr @ rot90.T)
        for a, b in zip(flexion_vectors(h), flexion_vectors(hr)):
            np.testing.assert_allclose(b, rot90 @ a, atol=1e-15)

    def test_palm_vector_example(self):
        h = _hand(tip_index=(0.05, 0.0, 0.0))
        np.testing.assert_allclose(palm_vector(h), [0.0, -0.05, 0.0], atol=1e-15)

    def test_palm_vector_parallel(self):
        h = _hand(tip_index=(0.0, 0.0, 0.07))
        np.testing.assert_array_equal(palm_vector(h), 0.0)

    def test_grasp_depth_zero(self):
        h = _hand(palm_center=(0.05, 0.05, 0.0), tip_thumb=(0.1, 0.0, 0.0), tip_index=(0.0, 0.1, 0.0))
        d, n = grasp_depth(h)
        np.testing.assert_allclose(d, 0.0, atol=1e-17)
        assert n == pytest.approx(0.0, abs=1e-16)

    def test_grasp_depth_example(self):
        h = _hand(tip_thumb=(0.1, 0.0, 0.0), tip_index=(0.0, 0.1, 0.0))
        d, n = grasp_depth(h)
        np.testing.assert_allclose(d, [0.05, 0.05, 0.0])
        assert n == pytest.approx(0.0707, abs=1e-4)

    @pytest.mark.parametrize("vel,obj,expected", [
        ((1, 0, 0), (2, 0, 0), 0.0),
        ((0, 1, 0), (2, 0, 0), math.pi / 2),
        ((1, 0, 0), (1, 1, 0), math.pi / 4),
        ((-3, 0, 0), (2, 0, 0), math.pi),
    ])
    def test_angle(self, vel, obj, expected):
        assert palm_object_angle(vel, (0, 0, 0), obj) == pytest.approx(expected, abs=1e-9)

    def test_angle_degenerate(self):
        with pytest.raises(DegenerateDirection):
            palm_object_angle((0, 0, 0), (0, 0, 0), (1, 0, 0))
        with pytest.raises(DegenerateDirection):
            palm_object_angle((1, 0, 0), (1, 0, 0), (1, 0, 0))


class TestFrameFeatures:
    def test_golden_vector(self):
        h = HandFrame(**{k: tuple(v) for k, v in GOLDEN["hand"].items()})
        frame = Frame(t=0.0, right=h, object_center=tuple(GOLDEN["object_center"]))
        got = extract_frame_features(frame, GOLDEN["palm_velocity"]).flattened
        e = GOLDEN["expected"]
        expected = np.concatenate([
            e["u_thumb_index"], e["u_thumb_middle"], e["u_thumb_ring"], e["u_thumb_pinky"],
            [math.sqrt(e["aperture_len_squared"])], e["u_thumb_1"], e["u_index_1"], e["u_palm"], e["d_grasp"],
            [math.sqrt(e["d_grasp_len_squared"]), math.pi * e["palm_object_angle_over_pi"]],
        ])
        assert got.shape == (27,)
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_arity_and_purity(self, rng):
        h = _random_hand(rng)
        frame = Frame(t=0.0, right=h, left=h, object_center=(1.0, 0.0, 0.0))
        a = extract_frame_features(frame, (0.1, 0.0, 0.0), (0.0, 0.1, 0.0)).flattened
        b = extract_frame_features(frame, (0.1, 0.0, 0.0), (0.0, 0.1, 0.0)).flattened
        assert a.shape == (54,)
        np.testing.assert_array_equal(a, b)
        assert extract_frame_features(frame, (0.1, 0.0, 0.0)).flattened.shape == (27,)

    def test_fallback_angle(self, rng):
        frame = Frame(t=0.0, right=_random_hand(rng), object_center=(1.0, 0.0, 0.0))
        f = extract_frame_features(frame, (0.0, 0.0, 0.0), fallback_angles=(0.3, 0.0))
        assert f.right.palm_object_angle == 0.3

    def test_names(self):
        assert len(FEATURE_NAMES) == 27
        assert len(feature_names("both")) == 54
        assert feature_names("both")[27].startswith("left_")
        with pytest.raises(ValueError):
            feature_names("left")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_geometric_properties(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=0.05, size=(4, 9, 3))
    z = rng.normal(size=(4, 3))
    pts[:, 8] = z / np.linalg.norm(z, axis=1, keepdims=True)
    vel = rng.normal(size=(4, 3))
    obj = rng.normal(size=(4, 3))
    base = hand_feature_matrix(pts, vel, obj)

    # translation: positions move, the axis and velocity do not
    off = rng.normal(size=3)
    moved = pts.copy()
    moved[:, :8] += off
    np.testing.assert_allclose(hand_feature_matrix(moved, vel, obj + off), base, atol=1e-12)

    # rotation: vectors rotate, scalars are preserved
    R = _rotation(rng)
    rot = hand_feature_matrix(pts @ R.T, vel @ R.T, obj @ R.T)
    for lo in (0, 3, 6, 9, 13, 16, 19, 22):
        np.testing.assert_allclose(rot[:, lo:lo + 3], base[:, lo:lo + 3] @ R.T, atol=1e-12)
    np.testing.assert_allclose(rot[:, [12, 25, 26]], base[:, [12, 25, 26]], atol=1e-9)

    assert np.all(base[:, 12] >= 0) and np.all(base[:, 25] >= 0)
    u_ti, u_palm, zi = base[:, 0:3], base[:, 19:22], pts[:, 8]
    scale = np.linalg.norm(u_palm, axis=1) * np.linalg.norm(u_ti, axis=1) + 1e-300
    assert np.all(np.abs(np.einsum("ij,ij->i", u_palm, u_ti)) <= 1e-9 * scale + 1e-18)
    assert np.all(np.abs(np.einsum("ij,ij->i", u_palm, zi)) <= 1e-9 * np.linalg.norm(u_palm, axis=1) + 1e-18)


class TestTrialFeatures:
    def test_shapes(self, clean_trial, both_hands_family):
        assert trial_features(clean_trial).shape == (len(clean_trial), 27)
        t = both_hands_family.trials[0]
        assert trial_features(t, "both").shape == (len(t), 54)

    def test_right_block_matches_frame_features(self, noisy_trial):
        X = trial_features(noisy_trial)
        from reachgrasp.features import _hand_velocity
        from reachgrasp.kinematics import SavgolSpec
        vel = _hand_velocity(noisy_trial, noisy_trial.palm, SavgolSpec(), 60.0)
        for i in (0, 20, len(noisy_trial) - 1):
            f = extract_frame_features(noisy_trial.frames[i], vel[i]).flattened
            np.testing.assert_allclose(X[i], f, atol=1e-12)

    def test_rest_angle_hold(self):
        from reachgrasp.features import _angles_with_hold
        vel = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0], [0, 2, 0], [0, 0, 0]], dtype=float)
        palm = np.zeros((6, 3))
        obj = np.tile([1.0, 1.0, 0.0], (6, 1))
        q = math.pi / 4
        np.testing.assert_allclose(_angles_with_hold(vel, palm, obj), [REST_ANGLE, REST_ANGLE, q, q, q, q])

    def test_translation_invariance(self, noisy_trial):
        a = trial_features(noisy_trial)
        b = trial_features(noisy_trial.translated((0.7, -0.4, 2.0)))
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_extractor(self, small_family):
        est = GraspFeatureExtractor().fit(small_family.trials)
        X = est.transform(small_family.trials)
        assert X.shape == (sum(len(t) for t in small_family), 27)
        assert list(est.get_feature_names_out())[:2] == ["right_u_thumb_index_x", "right_u_thumb_index_y"]
        assert est.get_params()["hands"] == "right"
        assert est.transform([]).shape == (0, 27)
