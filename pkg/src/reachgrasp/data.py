"""Trial data model, the on-disk trial format and the synthetic trial generator.

A trial is one recorded reach-to-grasp episode.  Trials are stored one per
JSON file (``*.trial.json``); a dataset is a directory of such files.

Positions are meters, times are seconds.  Vectors are plain 3-tuples of
floats so that every type here is immutable; the array views used by the
numerical code (``Trial.times``, ``Trial.palm`` ...) are computed lazily.
"""
from __future__ import annotations

import json
import math
import os
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, EmptyDataset, ParseError, ValidationError

Vec3 = tuple  # (x, y, z) of floats

HAND_POINTS = (
    "palm_center",
    "tip_thumb",
    "tip_index",
    "tip_middle",
    "tip_ring",
    "tip_pinky",
    "prox_thumb",
    "prox_index",
    "index_local_z",
)
FINGER_TIPS = ("tip_thumb", "tip_index", "tip_middle", "tip_ring", "tip_pinky")
META_FIELDS = ("user_id", "task", "object", "size", "grasp_time", "trial_id")
SIZES = ("Small", "Medium", "Large")
TRIAL_SUFFIX = ".trial.json"

_UNIT_TOL = 1e-6


def _vec(value, where, frame=None) -> Vec3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ParseError(f"expected a 3-element list at {where}" + (f" in frame {frame}" if frame is not None else ""))
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"non-numeric coordinate at {where}" + (f" in frame {frame}" if frame is not None else ""))
        out.append(float(v))
    return tuple(out)


@dataclass(frozen=True)
class HandFrame:
    palm_center: Vec3
    tip_thumb: Vec3
    tip_index: Vec3
    tip_middle: Vec3
    tip_ring: Vec3
    tip_pinky: Vec3
    prox_thumb: Vec3
    prox_index: Vec3
    index_local_z: Vec3

    def point(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def as_array(self) -> np.ndarray:
        """All nine points as a (9, 3) array in ``HAND_POINTS`` order."""
        return np.array([getattr(self, n) for n in HAND_POINTS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "HandFrame":
        arr = np.asarray(arr, dtype=float)
        return cls(*(tuple(float(v) for v in row) for row in arr))


@dataclass(frozen=True)
class Frame:
    t: float
    right: HandFrame
    object_center: Vec3
    left: Optional[HandFrame] = None


@dataclass(frozen=True)
class TrialMeta:
    user_id: str
    task: str
    object: str
    size: str
    grasp_time: float
    trial_id: str


@dataclass(frozen=True)
class Trial:
    meta: TrialMeta
    frames: tuple

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self):
        return len(self.frames)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames], dtype=float)

    @cached_property
    def palm(self) -> np.ndarray:
        return np.array([f.right.palm_center for f in self.frames], dtype=float)

    @cached_property
    def object_centers(self) -> np.ndarray:
        return np.array([f.object_center for f in self.frames], dtype=float)

    def hand_array(self, hand: str = "right") -> np.ndarray:
        """Hand points as an (n_frames, 9, 3) array; raises if the hand is missing."""
        frames = [getattr(f, hand) for f in self.frames]
        if any(h is None for h in frames):
            raise ValidationError(f"{hand} hand missing", field=hand)
        return np.stack([h.as_array() for h in frames])

    @property
    def has_left(self) -> bool:
        return all(f.left is not None for f in self.frames)

    def grasp_index(self) -> int:
        """Index of the last frame at or before the grasp time."""
        return int(np.searchsorted(self.times, self.meta.grasp_time + 1e-12, side="right") - 1)

    def translated(self, offset) -> "Trial":
        """Copy with every position (not direction) shifted by ``offset``."""
        off = np.asarray(offset, dtype=float)

        def shift_hand(h):
            if h is None:
                return None
            arr = h.as_array()
            arr[:-1] += off
            return HandFrame.from_array(arr)

        frames = [
            Frame(
                t=f.t,
                right=shift_hand(f.right),
                left=shift_hand(f.left),
                object_center=tuple(float(v) for v in np.asarray(f.object_center) + off),
            )
            for f in self.frames
        ]
        return Trial(self.meta, frames)


@dataclass(frozen=True)
class Dataset:
    trials: tuple
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        ids = [t.meta.trial_id for t in self.trials]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate trial_id {dup[0]!r}", field="trial_id")

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def user_ids(self) -> list:
        return sorted({t.meta.user_id for t in self.trials})


@dataclass(frozen=True)
class SynthConfig:
    """Generation parameters for one synthetic minimum-jerk trial.

    ``tip_noise_sigma`` defaults to ``noise_sigma`` when left as None.
    """

    x0: Vec3 = (0.0, 0.0, 0.0)
    xf: Vec3 = (0.3, 0.2, 0.1)
    duration: float = 1.2
    sample_rate: float = 60.0
    noise_sigma: float = 0.0
    user_bias: Vec3 = (0.0, 0.0, 0.0)
    jitter_sigma: float = 0.0
    seed: int = 0
    tip_noise_sigma: Optional[float] = None
    include_left: bool = False


# --------------------------------------------------------------------------
# validation


def _check_finite(vec, frame, name):
    if not all(math.isfinite(v) for v in vec):
        raise ValidationError("non-finite value", frame=frame, field=name)


def _validate_hand(hand: HandFrame, frame: int, prefix: str):
    for name in HAND_POINTS:
        _check_finite(getattr(hand, name), frame, f"{prefix}.{name}")
    norm = math.sqrt(sum(v * v for v in hand.index_local_z))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValidationError(f"index_local_z has norm {norm:.9g}, expected 1", frame=frame, field=f"{prefix}.index_local_z")


def validate_trial(trial: Trial) -> Trial:
    """Check every data-model invariant; return the trial unchanged."""
    meta = trial.meta
    for name in ("user_id", "task", "object", "size", "trial_id"):
        value = getattr(meta, name)
        if not isinstance(value, str) or not value:
            raise ValidationError("label must be a non-empty string", field=f"meta.{name}")
    if meta.size not in SIZES:
        raise ValidationError(f"size {meta.size!r} not in {SIZES}", field="meta.size")
    if not math.isfinite(meta.grasp_time):
        raise ValidationError("non-finite grasp_time", field="meta.grasp_time")
    frames = trial.frames
    if len(frames) < 2:
        raise ValidationError(f"need at least 2 frames, got {len(frames)}", field="frames")
    prev = None
    for i, fr in enumerate(frames):
        if not math.isfinite(fr.t):
            raise ValidationError("non-finite timestamp", frame=i, field="t")
        if fr.t < 0:
            raise ValidationError("negative timestamp", frame=i, field="t")
        if prev is not None and not fr.t > prev:
            raise ValidationError("timestamps must be strictly increasing", frame=i, field="t")
        prev = fr.t
        _check_finite(fr.object_center, i, "object_center")
        _validate_hand(fr.right, i, "right")
        if fr.left is not None:
            _validate_hand(fr.left, i, "left")
    if not (frames[0].t < meta.grasp_time <= frames[-1].t):
        raise ValidationError(
            f"grasp_time {meta.grasp_time:.9g} outside ({frames[0].t:.9g}, {frames[-1].t:.9g}]",
            field="meta.grasp_time",
        )
    return trial


# --------------------------------------------------------------------------
# JSON format


def _parse_hand(obj, frame, prefix) -> HandFrame:
    if not isinstance(obj, dict):
        raise ParseError(f"{prefix} must be an object in frame {frame}")
    missing = [n for n in HAND_POINTS if n not in obj]
    if missing:
        raise ParseError(f"{prefix} missing {missing[0]!r} in frame {frame}")
    return HandFrame(**{n: _vec(obj[n], f"{prefix}.{n}", frame) for n in HAND_POINTS})


def trial_from_dict(doc) -> Trial:
    """Build and validate a Trial from a decoded JSON document."""
    if not isinstance(doc, dict) or "meta" not in doc or "frames" not in doc:
        raise ParseError("trial document needs top-level 'meta' and 'frames'")
    m = doc["meta"]
    if not isinstance(m, dict):
        raise ParseError("'meta' must be an object")
    missing = [k for k in META_FIELDS if k not in m]
    if missing:
        raise ParseError(f"meta missing {missing[0]!r}")
    gt = m["grasp_time"]
    if isinstance(gt, bool) or not isinstance(gt, (int, float)):
        raise ParseError("meta.grasp_time must be a number")
    for k in ("user_id", "task", "object", "size", "trial_id"):
        if not isinstance(m[k], str):
            raise ParseError(f"meta.{k} must be a string")
    meta = TrialMeta(
        user_id=m["user_id"], task=m["task"], object=m["object"], size=m["size"],
        grasp_time=float(gt), trial_id=m["trial_id"],
    )
    raw_frames = doc["frames"]
    if not isinstance(raw_frames, list):
        raise ParseError("'frames' must be a list")
    frames = []
    for i, fr in enumerate(raw_frames):
        if not isinstance(fr, dict):
            raise ParseError(f"frame {i} must be an object")
        for k in ("t", "object_center", "right"):
            if k not in fr:
                raise ParseError(f"frame {i} missing {k!r}")
        t = fr["t"]
        if isinstance(t, bool) or not isinstance(t, (int, float)):
            raise ParseError(f"frame {i} field 't' must be a number")
        left = fr.get("left")
        frames.append(
            Frame(
                t=float(t),
                right=_parse_hand(fr["right"], i, "right"),
                left=None if left is None else _parse_hand(left, i, "left"),
                object_center=_vec(fr["object_center"], "object_center", i),
            )
        )
    return validate_trial(Trial(meta, frames))


def load_trial(path) -> Trial:
    """Read one ``*.trial.json`` file.

    Raises
    ------
    ParseError
        Malformed JSON or a schema violation.
    ValidationError
        Schema-valid content that breaks an invariant (timestamps, finiteness,
        grasp time range); the message names the frame index and field.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return trial_from_dict(doc)


def _reject_constant(name):
    # NaN / Infinity literals are not JSON
    raise ParseError(f"non-finite literal {name} is not allowed")


def fmt_number(x: float) -> str:
    """Canonical decimal form with at most 9 significant digits."""
    x = float(x)
    if x == 0.0:
        return "0"
    return format(x, ".9g")


def quantize(x: float) -> float:
    """The float a value becomes after a write/load cycle."""
    return float(fmt_number(x))


def _fmt_vec(v) -> str:
    return "[" + ", ".join(fmt_number(c) for c in v) + "]"


def _fmt_hand(h: Optional[HandFrame]) -> str:
    if h is None:
        return "null"
    return "{" + ", ".join(f'"{n}": {_fmt_vec(getattr(h, n))}' for n in HAND_POINTS) + "}"


def dumps_trial(trial: Trial) -> str:
    """Serialize to the canonical text form (one frame per line, LF endings)."""
    m = trial.meta
    meta = (
        "{"
        f'"user_id": {json.dumps(m.user_id)}, "task": {json.dumps(m.task)}, '
        f'"object": {json.dumps(m.object)}, "size": {json.dumps(m.size)}, '
        f'"grasp_time": {fmt_number(m.grasp_time)}, "trial_id": {json.dumps(m.trial_id)}'
        "}"
    )
    lines = []
    for fr in trial.frames:
        lines.append(
            "  {"
            f'"t": {fmt_number(fr.t)}, "object_center": {_fmt_vec(fr.object_center)}, '
            f'"right": {_fmt_hand(fr.right)}, "left": {_fmt_hand(fr.left)}'
            "}"
        )
    return '{"meta": ' + meta + ',\n "frames": [\n' + ",\n".join(lines) + "\n ]}\n"


def write_trial(trial: Trial, path) -> Path:
    """Write ``trial`` in canonical form; numbers are rounded to 9 significant digits."""
    path = Path(path)
    text = dumps_trial(trial)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def quantize_trial(trial: Trial) -> Trial:
    """The trial exactly as it will read back after ``write_trial``."""
    return trial_from_dict(json.loads(dumps_trial(trial)))


def load_dataset(directory, threads: int = 1) -> Dataset:
    """Load every ``*.trial.json`` in ``directory`` in sorted path order."""
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.name.endswith(TRIAL_SUFFIX))
    if not paths:
        raise EmptyDataset(f"no {TRIAL_SUFFIX} files in {directory}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(load_trial, paths))
    else:
        trials = [load_trial(p) for p in paths]
    return Dataset(trials, provenance=str(directory))


def write_dataset(ds: Dataset, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for trial in ds.trials:
        paths.append(write_trial(trial, directory / f"{trial.meta.trial_id}{TRIAL_SUFFIX}"))
    return paths


# --------------------------------------------------------------------------
# synthetic generator


def quintic_blend(tau):
    """Minimum-jerk blend 6 tau^5 - 15 tau^4 + 10 tau^3 (tau clamped to [0, 1])."""
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    return tau**3 * (10.0 + tau * (-15.0 + 6.0 * tau))


# Hand-local frame: x along the fingers, y toward the thumb, z out of the back
# of the hand.  Offsets are relative to the palm center, meters.
_OPEN_POSTURE = np.array(
    [
        [0.060, 0.070, 0.000],  # tip_thumb
        [0.170, 0.030, 0.000],  # tip_index
        [0.180, 0.000, 0.000],  # tip_middle
        [0.170, -0.022, 0.000],  # tip_ring
        [0.140, -0.045, 0.000],  # tip_pinky
        [0.030, 0.050, 0.000],  # prox_thumb
        [0.095, 0.030, 0.000],  # prox_index
    ]
)
_APERTURE = {"Small": 0.035, "Medium": 0.065, "Large": 0.10}


def _label_unit(label: str, salt: str) -> float:
    """Stable pseudo-random number in [0, 1) derived from a label."""
    return (zlib.crc32(f"{salt}:{label}".encode()) % 10007) / 10007.0


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def label_posture(meta: TrialMeta):
    """Target grasp posture and hand orientation implied by a trial's labels.

    Size sets the thumb-index aperture, the object sets finger curl and
    index-axis tilt, the task sets the hand's heading.  Returns
    ``(offsets (7, 3), rotation (3, 3), index_axis (3,))`` in world frame
    (offsets already rotated).
    """
    aperture = _APERTURE.get(meta.size, 0.065)
    curl = 0.015 + 0.045 * _label_unit(meta.object, "curl")
    spread = 0.6 + 0.8 * _label_unit(meta.object, "spread")
    heading = 2.0 * math.pi * _label_unit(meta.task, "heading")
    tilt = 0.6 * (_label_unit(meta.object, "tilt") - 0.5)

    target = _OPEN_POSTURE.copy()
    mid_x = 0.115 - 0.4 * curl
    # thumb and index close onto the object at the requested aperture
    target[0] = [mid_x, aperture / 2.0, -curl]
    target[1] = [mid_x, -aperture / 2.0, -curl]
    for row, lateral in zip((2, 3, 4), (-0.025, -0.045, -0.062)):
        target[row] = [mid_x - 0.01 * (row - 2), target[1, 1] + lateral * spread, -curl * (0.8 + 0.2 * (row - 2))]
    target[5] = [0.03, 0.05 - 0.3 * curl, -0.3 * curl]
    target[6] = [0.085, 0.025, -0.5 * curl]

    rot = _rot_z(heading)
    axis = rot @ (_rot_y(tilt) @ np.array([0.0, 0.0, 1.0]))
    return target, rot, axis


def synth_trial(config: SynthConfig, meta: TrialMeta) -> Trial:
    """Generate a trial whose palm follows an exact minimum-jerk path.

    The palm moves from ``x0`` to ``xf`` over ``duration`` seconds on the
    quintic profile, plus ``user_bias`` and i.i.d. Gaussian noise of
    ``noise_sigma`` per axis.  Fingertips sit at fixed offsets from the
    palm that close linearly in time from an open hand to the posture given
    by :func:`label_posture`.  The grasp time is ``duration`` (last frame).
    """
    if not config.duration > 0:
        raise ConfigError(f"duration must be > 0, got {config.duration}")
    if not config.sample_rate > 0:
        raise ConfigError(f"sample_rate must be > 0, got {config.sample_rate}")
    if config.noise_sigma < 0 or config.jitter_sigma < 0:
        raise ConfigError("noise_sigma and jitter_sigma must be >= 0")
    n = int(round(config.duration * config.sample_rate)) + 1
    n = max(n, 2)
    dt = config.duration / (n - 1)
    if config.jitter_sigma > dt / 6.0:
        raise ConfigError(f"jitter_sigma {config.jitter_sigma} too large for spacing {dt:.6g}")
    rng = np.random.default_rng(config.seed)

    idx = np.arange(n)
    times = config.duration * idx / (n - 1)
    if config.jitter_sigma > 0 and n > 2:
        jit = np.clip(rng.normal(0.0, config.jitter_sigma, n - 2), -0.45 * dt, 0.45 * dt)
        times[1:-1] += jit
    times[0], times[-1] = 0.0, config.duration

    x0 = np.asarray(config.x0, dtype=float)
    xf = np.asarray(config.xf, dtype=float)
    bias = np.asarray(config.user_bias, dtype=float)
    blend = quintic_blend(times / config.duration)
    palm_true = x0 + np.outer(blend, xf - x0) + bias
    palm = palm_true.copy()
    if config.noise_sigma > 0:
        palm = palm + rng.normal(0.0, config.noise_sigma, palm.shape)

    target, rot, axis = label_posture(meta)
    open_world = _OPEN_POSTURE @ rot.T
    target_world = target @ rot.T
    tip_sigma = config.noise_sigma if config.tip_noise_sigma is None else config.tip_noise_sigma
    close = (times / config.duration)[:, None, None]
    offsets = open_world[None] + close * (target_world - open_world)[None]
    points = palm_true[:, None, :] + offsets
    if tip_sigma > 0:
        points = points + rng.normal(0.0, tip_sigma, points.shape)

    approach = xf - x0
    norm = np.linalg.norm(approach)
    ahead = approach / norm if norm > 0 else rot[:, 0]
    obj = xf + bias + 0.04 * ahead

    left_base = x0 + bias + np.array([-0.05, -0.35, 0.0])
    frames = []
    for i in range(n):
        right = HandFrame.from_array(np.vstack([palm[i:i + 1], points[i], axis[None]]))
        left = None
        if config.include_left:
            mirror = _OPEN_POSTURE * np.array([1.0, -1.0, 1.0])
            lpts = left_base + mirror
            if config.noise_sigma > 0:
                lpts = lpts + rng.normal(0.0, config.noise_sigma, lpts.shape)
            lpalm = left_base + (rng.normal(0.0, config.noise_sigma, 3) if config.noise_sigma > 0 else 0.0)
            left = HandFrame.from_array(np.vstack([lpalm[None], lpts, np.array([[0.0, 0.0, 1.0]])]))
        frames.append(Frame(t=float(times[i]), right=right, left=left, object_center=tuple(float(v) for v in obj)))
    meta = replace(meta, grasp_time=float(config.duration))
    return validate_trial(Trial(meta, frames))


@dataclass(frozen=True)
class FamilyConfig:
    """Grid for a synthetic dataset of many users and trials.

    Start and end points, durations and per-user biases are drawn from the
    ranges below with a generator seeded by ``seed``.
    """

    n_users: int = 6
    trials_per_user: int = 10
    duration_range: tuple = (1.6, 2.4)
    distance_range: tuple = (0.2, 0.6)
    sample_rate: float = 60.0
    noise_sigma: float = 0.005
    jitter_sigma: float = 0.0
    user_bias_sigma: float = 0.05
    tasks: tuple = ("Hold", "Pull", "Push", "Raise", "Push-down")
    objects: tuple = ("Cube", "Sphere", "Cylinder")
    sizes: tuple = SIZES
    include_left: bool = False
    seed: int = 0


def synth_family(cfg: FamilyConfig):
    """Generate a synthetic dataset; returns ``(Dataset, manifest_rows)``.

    ``manifest_rows`` holds every generation parameter per trial.
    """
    if cfg.n_users < 1 or cfg.trials_per_user < 1:
        raise ConfigError("n_users and trials_per_user must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    trials, rows = [], []
    for u in range(cfg.n_users):
        user_id = f"U{u + 1:02d}"
        bias = rng.normal(0.0, cfg.user_bias_sigma, 3) if cfg.user_bias_sigma > 0 else np.zeros(3)
        for k in range(cfg.trials_per_user):
            x0 = rng.uniform([-0.2, -0.2, 0.8], [0.2, 0.2, 1.0])
            direction = rng.normal(size=3)
            direction[2] = abs(direction[2]) * 0.3
            direction /= np.linalg.norm(direction)
            dist = rng.uniform(*cfg.distance_range)
            xf = x0 + dist * direction
            duration = float(rng.uniform(*cfg.duration_range))
            task = cfg.tasks[int(rng.integers(len(cfg.tasks)))]
            obj = cfg.objects[int(rng.integers(len(cfg.objects)))]
            size = cfg.sizes[int(rng.integers(len(cfg.sizes)))]
            seed = int(rng.integers(2**31 - 1))
            sc = SynthConfig(
                x0=tuple(float(v) for v in x0), xf=tuple(float(v) for v in xf), duration=duration,
                sample_rate=cfg.sample_rate, noise_sigma=cfg.noise_sigma, user_bias=tuple(float(v) for v in bias),
                jitter_sigma=cfg.jitter_sigma, seed=seed, include_left=cfg.include_left,
            )
            meta = TrialMeta(user_id=user_id, task=task, object=obj, size=size, grasp_time=duration,
                             trial_id=f"{user_id}-T{k + 1:03d}")
            trials.append(synth_trial(sc, meta))
            rows.append({"trial_id": meta.trial_id, "user_id": user_id, "task": task, "object": obj, "size": size,
                         "x0": list(sc.x0), "xf": list(sc.xf), "duration": duration, "sample_rate": sc.sample_rate,
                         "noise_sigma": sc.noise_sigma, "user_bias": list(sc.user_bias),
                         "jitter_sigma": sc.jitter_sigma, "seed": seed})
    return Dataset(trials, provenance=f"synthetic family seed={cfg.seed}"), rows


# --------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class SummaryStats:
    n_trials: int
    frames_min: int
    frames_max: int
    frames_mean: float
    frame_hist_counts: tuple
    frame_hist_edges: tuple
    travel_min: float
    travel_max: float
    travel_mean: float
    trials_per_user: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "frames": {"min": self.frames_min, "max": self.frames_max, "mean": self.frames_mean,
                       "hist_counts": list(self.frame_hist_counts), "hist_edges": list(self.frame_hist_edges)},
            "palm_travel_m": {"min": self.travel_min, "max": self.travel_max, "mean": self.travel_mean},
            "trials_per_user": dict(self.trials_per_user),
        }


def path_length(points) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def dataset_summary(ds: Dataset, bins: int = 10) -> SummaryStats:
    """Frame-count and palm-travel statistics plus per-user trial counts."""
    if len(ds) == 0:
        raise EmptyDataset("dataset has no trials")
    counts = np.array([len(t) for t in ds.trials])
    travel = np.array([path_length(t.palm) for t in ds.trials])
    hist, edges = np.histogram(counts, bins=bins)
    users = Counter(t.meta.user_id for t in ds.trials)
    return SummaryStats(
        n_trials=len(ds),
        frames_min=int(counts.min()),
        frames_max=int(counts.max()),
        frames_mean=float(counts.mean()),
        frame_hist_counts=tuple(int(c) for c in hist),
        frame_hist_edges=tuple(float(e) for e in edges),
        travel_min=float(travel.min()),
        travel_max=float(travel.max()),
        travel_mean=float(travel.mean()),
        trials_per_user=dict(sorted(users.items())),
    )


def select_trials(ds: Dataset, trial_ids: Sequence[str]) -> Dataset:
    keep = set(trial_ids)
    return Dataset([t for t in ds.trials if t.meta.trial_id in keep], provenance=ds.provenance)


def trial_paths(directory) -> list:
    return sorted(os.path.join(directory, p) for p in os.listdir(directory) if p.endswith(TRIAL_SUFFIX))
