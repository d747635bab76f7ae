"""Grasp-taxonomy hand features (27 scalars per hand per frame).

Flattened order per hand::

    u_thumb_index(3) u_thumb_middle(3) u_thumb_ring(3) u_thumb_pinky(3)
    aperture_len(1) u_thumb_1(3) u_index_1(3) u_palm(3) d_grasp(3)
    d_grasp_len(1) palm_object_angle(1)

With both hands the right-hand block comes first (54 scalars).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import HandFrame, Trial
from .exceptions import DegenerateDirection
from .kinematics import DEFAULT_RATE, SavgolSpec, velocity_profile

MIN_SPEED = 1e-4  # m/s; below this the movement direction is undefined
REST_ANGLE = math.pi / 2

FEATURE_NAMES = (
    [f"u_thumb_{f}_{a}" for f in ("index", "middle", "ring", "pinky") for a in "xyz"]
    + ["aperture_len"]
    + [f"u_thumb_1_{a}" for a in "xyz"]
    + [f"u_index_1_{a}" for a in "xyz"]
    + [f"u_palm_{a}" for a in "xyz"]
    + [f"d_grasp_{a}" for a in "xyz"]
    + ["d_grasp_len", "palm_object_angle"]
)
N_FEATURES = len(FEATURE_NAMES)


def feature_names(hands: str = "right") -> list:
    if hands == "right":
        return [f"right_{n}" for n in FEATURE_NAMES]
    if hands == "both":
        return [f"right_{n}" for n in FEATURE_NAMES] + [f"left_{n}" for n in FEATURE_NAMES]
    raise ValueError(f"hands must be 'right' or 'both', got {hands!r}")


@dataclass(frozen=True)
class FeatureVector:
    u_thumb_index: np.ndarray
    u_thumb_middle: np.ndarray
    u_thumb_ring: np.ndarray
    u_thumb_pinky: np.ndarray
    aperture_len: float
    u_thumb_1: np.ndarray
    u_index_1: np.ndarray
    u_palm: np.ndarray
    d_grasp: np.ndarray
    d_grasp_len: float
    palm_object_angle: float

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.u_thumb_index, self.u_thumb_middle, self.u_thumb_ring, self.u_thumb_pinky,
            [self.aperture_len], self.u_thumb_1, self.u_index_1, self.u_palm, self.d_grasp,
            [self.d_grasp_len, self.palm_object_angle],
        ])


@dataclass(frozen=True)
class FrameFeatures:
    right: FeatureVector
    left: Optional[FeatureVector] = None

    @property
    def flattened(self) -> np.ndarray:
        if self.left is None:
            return self.right.flatten()
        return np.concatenate([self.right.flatten(), self.left.flatten()])


def tip_vectors(h: HandFrame):
    """Thumb-tip-to-fingertip vectors for index, middle, ring, pinky and the aperture length."""
    thumb = h.point("tip_thumb")
    vecs = tuple(h.point(f"tip_{f}") - thumb for f in ("index", "middle", "ring", "pinky"))
    return vecs + (float(np.linalg.norm(vecs[0])),)


def flexion_vectors(h: HandFrame):
    return h.point("prox_thumb") - h.point("tip_thumb"), h.point("prox_index") - h.point("tip_index")


def palm_vector(h: HandFrame) -> np.ndarray:
    # left unnormalized on purpose: magnitude carries aperture information
    return np.cross(h.point("tip_index") - h.point("tip_thumb"), h.point("index_local_z"))


def grasp_depth(h: HandFrame):
    mid = 0.5 * (h.point("tip_thumb") + h.point("tip_index"))
    d = mid - h.point("palm_center")
    return d, float(np.linalg.norm(d))


def palm_object_angle(palm_velocity, palm_center, object_center, min_speed: float = MIN_SPEED) -> float:
    """Angle (rad) between the palm's movement direction and the direction to the object."""
    v = np.asarray(palm_velocity, dtype=float)
    r = np.asarray(object_center, dtype=float) - np.asarray(palm_center, dtype=float)
    nv, nr = np.linalg.norm(v), np.linalg.norm(r)
    if nv < min_speed:
        raise DegenerateDirection(f"palm speed {nv:.3g} m/s below {min_speed} m/s")
    if nr == 0.0:
        raise DegenerateDirection("palm center coincides with object center")
    cos = float(np.dot(v, r) / (nv * nr))
    return math.acos(min(1.0, max(-1.0, cos)))


def hand_features(h: HandFrame, palm_velocity, object_center, fallback_angle: float = REST_ANGLE) -> FeatureVector:
    ti, tm, tr, tp, aperture = tip_vectors(h)
    t1, i1 = flexion_vectors(h)
    d, dlen = grasp_depth(h)
    try:
        angle = palm_object_angle(palm_velocity, h.palm_center, object_center)
    except DegenerateDirection:
        angle = fallback_angle
    return FeatureVector(ti, tm, tr, tp, aperture, t1, i1, palm_vector(h), d, dlen, angle)


def extract_frame_features(frame, right_velocity, left_velocity=None, fallback_angles=(REST_ANGLE, REST_ANGLE)) -> FrameFeatures:
    """Features of one frame given each hand's palm velocity.

    ``fallback_angles`` supplies the angle used when a hand's movement
    direction is degenerate (the caller's last valid value).
    """
    right = hand_features(frame.right, right_velocity, frame.object_center, fallback_angles[0])
    left = None
    if frame.left is not None and left_velocity is not None:
        left = hand_features(frame.left, left_velocity, frame.object_center, fallback_angles[1])
    return FrameFeatures(right, left)


# --------------------------------------------------------------------------
# vectorized per-trial extraction


def _hand_velocity(trial: Trial, points: np.ndarray, spec: SavgolSpec, rate: float) -> np.ndarray:
    """SG velocity of the palm, interpolated back onto the trial's own timestamps."""
    times = trial.times
    spec_len = spec.window_length
    n_grid = int(round((times[-1] - times[0]) * rate)) + 1
    if n_grid < spec_len:
        # too short for the filter: plain finite differences
        return np.gradient(points, times, axis=0)
    vel = velocity_profile(times, points, spec, rate)
    grid = vel.times
    return np.column_stack([np.interp(times, grid, vel.values[:, k]) for k in range(3)])


def _angles_with_hold(velocity, palm, obj, min_speed=MIN_SPEED) -> np.ndarray:
    r = obj - palm
    nv = np.linalg.norm(velocity, axis=1)
    nr = np.linalg.norm(r, axis=1)
    valid = (nv >= min_speed) & (nr > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ij,ij->i", velocity, r) / (nv * nr)
    raw = np.arccos(np.clip(cos, -1.0, 1.0))
    out = np.empty(len(palm))
    last = REST_ANGLE
    for i in range(len(palm)):
        if valid[i]:
            last = raw[i]
        out[i] = last
    return out


def hand_feature_matrix(points: np.ndarray, velocity: np.ndarray, obj: np.ndarray) -> np.ndarray:
    """(n_frames, 27) features from (n_frames, 9, 3) hand points."""
    palm, thumb, index = points[:, 0], points[:, 1], points[:, 2]
    u_tips = points[:, 2:6] - thumb[:, None, :]
    aperture = np.linalg.norm(u_tips[:, 0], axis=1)
    u_t1 = points[:, 6] - thumb
    u_i1 = points[:, 7] - index
    u_palm = np.cross(u_tips[:, 0], points[:, 8])
    d = 0.5 * (thumb + index) - palm
    dlen = np.linalg.norm(d, axis=1)
    angle = _angles_with_hold(velocity, palm, obj)
    return np.column_stack([
        u_tips.reshape(len(points), 12), aperture, u_t1, u_i1, u_palm, d, dlen, angle,
    ])


def trial_features(trial: Trial, hands: str = "right", spec: SavgolSpec | None = None,
                   rate: float = DEFAULT_RATE) -> np.ndarray:
    """Per-frame features of a whole trial: (n_frames, 27) or (n_frames, 54).

    The palm-to-object angle holds the last valid value while the hand is
    at rest, and is pi/2 before any valid value exists.
    """
    spec = spec or SavgolSpec()
    blocks = []
    for hand in (("right",) if hands == "right" else ("right", "left")):
        pts = trial.hand_array(hand)
        vel = _hand_velocity(trial, pts[:, 0], spec, rate)
        blocks.append(hand_feature_matrix(pts, vel, trial.object_centers))
    return np.hstack(blocks)


class GraspFeatureExtractor(TransformerMixin, BaseEstimator):
    """Transform trials into stacked per-frame feature rows.

    Parameters
    ----------
    hands : {"right", "both"}
        27 or 54 features per frame.
    sg_window, sg_order : int
        Savitzky-Golay settings for the palm velocity.
    rate : float
        Resampling rate (Hz) used before differentiation.
    """

    def __init__(self, hands="right", sg_window=7, sg_order=3, rate=DEFAULT_RATE):
        self.hands = hands
        self.sg_window = sg_window
        self.sg_order = sg_order
        self.rate = rate

    def fit(self, X, y=None):
        self.feature_names_out_ = np.array(feature_names(self.hands), dtype=object)
        self.n_features_out_ = len(self.feature_names_out_)
        return self

    def transform(self, X):
        spec = SavgolSpec(self.sg_window, self.sg_order)
        rows = [trial_features(t, self.hands, spec, self.rate) for t in X]
        if not rows:
            return np.empty((0, len(feature_names(self.hands))))
        return np.vstack(rows)

    def get_feature_names_out(self, input_features=None):
        return np.array(feature_names(self.hands), dtype=object)
