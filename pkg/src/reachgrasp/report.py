"""Evaluation metrics, time-bucketed curves with bootstrap intervals, CSV and SVG export."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import fmt_number, quantize
from .exceptions import NoRecords

BUCKET_WIDTH = 0.25  # s
SPAN = (-2.0, 0.0)
N_BOOT = 1000
CI_LEVEL = 0.95
METRICS = ("distance_m", "time_error_s", "abs_time_error_s", "mse", "euclid_m")
_SNAP = 1e-9


# --------------------------------------------------------------------------
# metrics


def distance_error(pred, truth) -> float:
    """Euclidean distance between predicted and true positions (m)."""
    return float(np.linalg.norm(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)))


def distance_errors(pred, truth) -> np.ndarray:
    """Row-wise :func:`distance_error` for (n, 3) arrays."""
    return np.linalg.norm(np.asarray(pred, dtype=float)[:, :3] - np.asarray(truth, dtype=float)[:, :3], axis=1)


def time_error(pred_remaining, true_remaining):
    """Signed error ``pred - truth`` in seconds; negative means the grasp is predicted early."""
    return np.asarray(pred_remaining, dtype=float) - np.asarray(true_remaining, dtype=float)


def abs_time_error(pred_remaining, true_remaining):
    return np.abs(time_error(pred_remaining, true_remaining))


def posture_errors(pred, truth):
    """``(mse, mean_euclid)`` between two postures of five 3-D vectors.

    ``mse`` averages the squared error over all 15 components;
    ``mean_euclid`` averages the per-finger Euclidean distance.
    Batched input of shape (n, 5, 3) or (n, 15) returns arrays.
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    batched = p.ndim == 3 or (p.ndim == 2 and p.shape[-1] == 15)
    p = p.reshape(-1, 5, 3)
    t = t.reshape(-1, 5, 3)
    diff = p - t
    mse = np.mean(diff.reshape(len(diff), -1) ** 2, axis=1)
    euclid = np.mean(np.linalg.norm(diff, axis=2), axis=1)
    if batched:
        return mse, euclid
    return float(mse[0]), float(euclid[0])


# --------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class Bucket:
    t_lo: float
    t_hi: float
    n: int
    mean: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class EvalCurve:
    """Mean of a metric per time-before-grasp bucket with a 95% interval."""

    metric: str
    buckets: tuple
    model: str = ""

    @property
    def centers(self) -> np.ndarray:
        return np.array([0.5 * (b.t_lo + b.t_hi) for b in self.buckets])

    @property
    def means(self) -> np.ndarray:
        return np.array([b.mean for b in self.buckets])

    def bucket(self, t_lo: float) -> Bucket | None:
        for b in self.buckets:
            if abs(b.t_lo - t_lo) < 1e-9:
                return b
        return None


def bucket_index(offsets, width=BUCKET_WIDTH, span=SPAN) -> np.ndarray:
    """Half-open bucket index of each offset; -1 outside ``[span[0], span[1])``.

    Offsets within 1e-9 s of a bucket edge are snapped onto it first, so
    accumulated floating-point error never moves a record across an edge.
    """
    t = np.asarray(offsets, dtype=float)
    lo, hi = span
    n_buckets = int(round((hi - lo) / width))
    pos = (t - lo) / width
    near = np.round(pos)
    pos = np.where(np.abs(pos - near) < _SNAP / width, near, pos)
    idx = np.floor(pos).astype(int)
    idx[(idx < 0) | (idx >= n_buckets) | ~np.isfinite(t)] = -1
    return idx


def bootstrap_ci(values, n_boot=N_BOOT, level=CI_LEVEL, rng=None):
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=float)
    if np.all(v == v[0]):
        return float(v[0]), float(v[0])
    rng = rng if rng is not None else np.random.default_rng(0)
    means = v[rng.integers(0, len(v), size=(n_boot, len(v)))].mean(axis=1)
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [alpha, 100.0 - alpha])
    return float(lo), float(hi)


def bucket_curve(records, bucket_width=BUCKET_WIDTH, span=SPAN, n_boot=N_BOOT, seed=0, metric="",
                 model="") -> EvalCurve:
    """Group ``(time_before_grasp, value)`` records into buckets.

    Non-finite values (for example failed fits) are skipped.  Each bucket
    draws its bootstrap resamples from a generator derived from
    ``(seed, bucket index)``.  Statistics are rounded to 9 significant
    digits so a CSV export round-trips exactly.
    """
    rec = np.asarray(records, dtype=float).reshape(-1, 2)
    if len(rec) == 0:
        raise NoRecords("no records to bucket")
    rec = rec[np.isfinite(rec[:, 1])]
    idx = bucket_index(rec[:, 0], bucket_width, span)
    buckets = []
    for k in np.unique(idx[idx >= 0]):
        vals = rec[idx == k, 1]
        mean = float(np.mean(vals))
        lo, hi = bootstrap_ci(vals, n_boot, rng=np.random.default_rng([seed, int(k)]))
        lo, hi = min(lo, mean), max(hi, mean)
        if np.all(vals == vals[0]):
            mean = lo = hi = float(vals[0])
        t_lo = span[0] + k * bucket_width
        buckets.append(Bucket(quantize(t_lo), quantize(t_lo + bucket_width), int(len(vals)),
                              quantize(mean), quantize(lo), quantize(hi)))
    if not buckets:
        raise NoRecords(f"no finite records inside {span}")
    return EvalCurve(metric, tuple(buckets), model)


# --------------------------------------------------------------------------
# confusion matrices


@dataclass
class ConfusionMatrix:
    """Counts with rows indexed by the true label and columns by the prediction."""

    labels: list
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = list(self.labels)
        if self.counts is None:
            self.counts = np.zeros((len(self.labels), len(self.labels)), dtype=int)
        self.counts = np.asarray(self.counts, dtype=int)

    @classmethod
    def from_labels(cls, true, pred, labels=None) -> "ConfusionMatrix":
        cm = cls(sorted(set(true) | set(pred)) if labels is None else labels)
        cm.add(true, pred)
        return cm

    def add(self, true, pred):
        pos = {lab: i for i, lab in enumerate(self.labels)}
        for t, p in zip(true, pred):
            self.counts[pos[t], pos[p]] += 1
        return self

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else math.nan


# --------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_number(float(v)) if math.isfinite(v) else "nan"
    return str(v)


CURVE_COLUMNS = ("metric", "model", "t_lo", "t_hi", "n", "mean", "ci_lo", "ci_hi")


def table_rows(table) -> list:
    """Header plus data rows for an :class:`EvalCurve`, :class:`ConfusionMatrix`,
    a list of curves, or a list of dicts (accuracy tables)."""
    if isinstance(table, EvalCurve):
        table = [table]
    if isinstance(table, ConfusionMatrix):
        rows = [["true\\predicted", *table.labels, "support"]]
        for lab, row in zip(table.labels, table.counts):
            rows.append([lab, *row.tolist(), int(row.sum())])
        return rows
    table = list(table)
    if table and isinstance(table[0], EvalCurve):
        rows = [list(CURVE_COLUMNS)]
        for c in table:
            for b in c.buckets:
                rows.append([c.metric, c.model, b.t_lo, b.t_hi, b.n, b.mean, b.ci_lo, b.ci_hi])
        return rows
    if not table:
        return [[]]
    header = list(table[0].keys())
    return [header] + [[d.get(k, "") for k in header] for d in table]


def dumps_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in table_rows(table):
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def export_csv(table, path) -> Path:
    """Write ``table`` as CSV (header row, 9 significant digits, LF endings)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_csv(table))
    os.replace(tmp, path)
    return path


def read_curves_csv(path) -> list:
    """Parse curves written by :func:`export_csv`; order of first appearance is kept."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    grouped = {}
    for r in rows:
        key = (r["metric"], r["model"])
        grouped.setdefault(key, []).append(Bucket(float(r["t_lo"]), float(r["t_hi"]), int(r["n"]),
                                                  float(r["mean"]), float(r["ci_lo"]), float(r["ci_hi"])))
    return [EvalCurve(m, tuple(b), model) for (m, model), b in grouped.items()]


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:-1]
    counts = [[int(v) for v in r[1:-1]] for r in rows[1:]]
    return ConfusionMatrix(labels, np.array(counts, dtype=int).reshape(len(labels), len(labels)))


# --------------------------------------------------------------------------
# SVG

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    k = 0
    while start + k * step <= hi + 1e-12 * step:
        ticks.append(start + k * step)
        k += 1
    return ticks, step


def _tick_label(v, step) -> str:
    decimals = max(0, -int(math.floor(math.log10(step))) + (1 if step / 10 ** math.floor(math.log10(step)) == 2.5 else 0))
    s = f"{v:.{decimals}f}"
    return "0" if float(s) == 0 else s


def render_curve_svg(curves, title="", xlabel="time before grasp (s)", ylabel="", width=640, height=400) -> str:
    """Standalone SVG line chart: one polyline and shaded CI band per curve, axes and legend."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve")
    ml, mr, mt, mb = 70, 160, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = [x for c in curves for b in c.buckets for x in (b.t_lo, b.t_hi)]
    ys = [y for c in curves for b in c.buckets for y in (b.ci_lo, b.ci_hi, b.mean)]
    xticks, xstep = _nice_ticks(min(xs), max(xs))
    y_lo = min(0.0, min(ys))
    yticks, ystep = _nice_ticks(y_lo, max(ys) if max(ys) > y_lo else y_lo + 1.0)
    x0, x1 = xticks[0], xticks[-1]
    y0, y1 = yticks[0], yticks[-1]

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{_f(ml + pw / 2)}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    # grid and ticks
    for t in xticks:
        out.append(f'<line x1="{_f(px(t))}" y1="{mt}" x2="{_f(px(t))}" y2="{mt + ph}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{_f(px(t))}" y="{mt + ph + 16}" text-anchor="middle">{_tick_label(t, xstep)}</text>')
    for t in yticks:
        out.append(f'<line x1="{ml}" y1="{_f(py(t))}" x2="{ml + pw}" y2="{_f(py(t))}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{ml - 6}" y="{_f(py(t) + 4)}" text-anchor="end">{_tick_label(t, ystep)}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>')
    out.append(f'<text x="{_f(ml + pw / 2)}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_f(mt + ph / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_f(mt + ph / 2)})">{escape(ylabel)}</text>')
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        cx = [px(0.5 * (b.t_lo + b.t_hi)) for b in c.buckets]
        band = [f"{_f(x)},{_f(py(b.ci_hi))}" for x, b in zip(cx, c.buckets)]
        band += [f"{_f(x)},{_f(py(b.ci_lo))}" for x, b in reversed(list(zip(cx, c.buckets)))]
        out.append(f'<g class="curve" data-model="{escape(c.model)}" data-metric="{escape(c.metric)}">')
        out.append(f'<polygon class="ci" points="{" ".join(band)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_f(x)},{_f(py(b.mean))}" for x, b in zip(cx, c.buckets))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, b in zip(cx, c.buckets):
            out.append(f'<circle class="marker" cx="{_f(x)}" cy="{_f(py(b.mean))}" r="3" fill="{color}"/>')
        out.append("</g>")
        ly = mt + 10 + 20 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 36}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 42}" y="{ly + 4}">{escape(c.model or c.metric)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path
