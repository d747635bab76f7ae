"""Reach-to-grasp prediction toolkit for hand-tracking data.

Modules
-------
data        trial model, JSON I/O, synthetic reach generator
kinematics  resampling, Savitzky-Golay filtering, speed and onset detection
features    per-frame grasp descriptors
mjt         minimum-jerk trajectory model and bounded fitting
neural      numpy LSTM toolkit (forward/backward, Adam, losses)
reach       grasp position and time-to-grasp predictors
posture     grasp posture predictors
trees       CART trees, random forests, nearest neighbours
classify    object/size/task classification with cross-validation
report      metrics, bucketed curves, CSV and SVG export
cli         ``reachgrasp`` command-line entry point
"""

__version__ = "0.1.0"

from .exceptions import ReachGraspError  # noqa: E402

__all__ = ["ReachGraspError", "__version__"]
