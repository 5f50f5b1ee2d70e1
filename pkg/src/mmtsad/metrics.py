"""Label-based and score-based anomaly detection metrics.

Undefined values (empty denominators, single-class truth) are returned as
``None`` and serialize to JSON ``null``; they are never coerced to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .recon import threshold_labels

Events = list[tuple[int, int]]


def _binary(labels, name: str) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1")
    return arr.astype(np.int64)


def to_events(labels) -> Events:
    """Maximal runs of ones as half-open ``(start, end)`` pairs."""
    y = _binary(labels, "labels")
    padded = np.concatenate(([0], y, [0]))
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e)) for s, e in zip(edges[::2], edges[1::2])]


def _f1(p: float | None, r: float | None) -> float | None:
    if p is None or r is None:
        return None
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


# -- point metrics --------------------------------------------------------------

def point_metrics(pred, truth) -> dict[str, float | None]:
    pred, truth = _binary(pred, "pred"), _binary(truth, "truth")
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    acc = float(np.mean(pred == truth)) if pred.size else None
    p = tp / (tp + fp) if tp + fp else None
    r = tp / (tp + fn) if tp + fn else None
    return {"Acc": acc, "P": p, "R": r, "F1": _f1(p, r)}


# -- range metrics --------------------------------------------------------------

def _delta(bias: str, i: np.ndarray, length: int) -> np.ndarray:
    """Positional weight of 1-based offsets ``i`` within a range of ``length``."""
    if bias == "flat":
        return np.ones_like(i, dtype=np.float64)
    if bias == "front":
        return (length - i + 1).astype(np.float64)
    if bias == "back":
        return i.astype(np.float64)
    if bias == "middle":
        return np.where(i <= length / 2, i, length - i + 1).astype(np.float64)
    raise ValueError(f"unknown positional bias {bias!r}")


def _omega(rng: tuple[int, int], overlap: tuple[int, int], bias: str) -> float:
    s, e = rng
    length = e - s
    offsets = np.arange(1, length + 1)
    w = _delta(bias, offsets, length)
    lo, hi = overlap
    return float(w[lo - s:hi - s].sum() / w.sum())


def _gamma(count: int, cardinality: str) -> float:
    if count <= 1:
        return 1.0
    if cardinality == "reciprocal":
        return 1.0 / count
    if cardinality == "one":
        return 1.0
    raise ValueError(f"unknown cardinality rule {cardinality!r}")


def _range_score(targets: Events, others: Events, alpha: float, bias: str, cardinality: str) -> float:
    total = 0.0
    for s, e in targets:
        overlaps = [(max(s, a), min(e, b)) for a, b in others if a < e and b > s]
        existence = 1.0 if overlaps else 0.0
        part = sum(_omega((s, e), ov, bias) for ov in overlaps)
        total += alpha * existence + (1 - alpha) * _gamma(len(overlaps), cardinality) * part
    return total / len(targets)


def range_metrics(pred, truth, alpha: float = 0.0, bias: str = "flat",
                  cardinality: str = "reciprocal") -> dict[str, float | None]:
    """Range precision/recall over event lists (or 0/1 label vectors)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p_ev = pred if isinstance(pred, list) else to_events(pred)
    t_ev = truth if isinstance(truth, list) else to_events(truth)
    rr = _range_score(t_ev, p_ev, alpha, bias, cardinality) if t_ev else None
    rp = _range_score(p_ev, t_ev, 0.0, bias, cardinality) if p_ev else None
    return {"R-P": rp, "R-R": rr, "R-F": _f1(rp, rr)}


# -- affiliation metrics ----------------------------------------------------------

def affiliation_zones(truth: Events, length: int) -> list[tuple[float, float]]:
    """Zone of each true event: bounded by midpoints of the gaps to its neighbours."""
    zones = []
    for j, (s, e) in enumerate(truth):
        lo = 0.0 if j == 0 else (truth[j - 1][1] + s) / 2.0
        hi = float(length) if j == len(truth) - 1 else (e + truth[j + 1][0]) / 2.0
        zones.append((lo, hi))
    return zones


def _clip_intervals(intervals, lo: float, hi: float) -> list[tuple[float, float]]:
    out = []
    for u, v in intervals:
        a, b = max(u, lo), min(v, hi)
        if b > a:
            out.append((a, b))
    return out


def _integrate_piecewise_linear(f, knots: Sequence[float], lo: float, hi: float) -> float:
    """Exact integral of a function that is linear between the given knots."""
    pts = sorted({lo, hi, *(k for k in knots if lo < k < hi)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += (b - a) * f(0.5 * (a + b))
    return total


def _precision_zone(preds, gt, zone) -> float:
    a, b = zone
    s, e = gt
    width = b - a

    def survival(x: float) -> float:
        if s <= x <= e:
            return 1.0
        d = s - x if x < s else x - e
        return (max(0.0, s - d - a) + max(0.0, b - e - d)) / width

    knots = [s, e, s + e - b, s + e - a]
    mass = sum(v - u for u, v in preds)
    integral = sum(_integrate_piecewise_linear(survival, knots, u, v) for u, v in preds)
    return integral / mass


def _recall_zone(preds, gt, zone) -> float:
    if not preds:
        return 0.0
    a, b = zone
    s, e = gt
    width = b - a
    ends = [c for iv in preds for c in iv]

    def distance(y: float) -> float:
        return min(0.0 if u <= y <= v else (u - y if y < u else y - v) for u, v in preds)

    def survival(y: float) -> float:
        d = distance(y)
        if d == 0.0:
            return 1.0
        return (max(0.0, y - d - a) + max(0.0, b - y - d)) / width

    knots = list(ends)
    knots += [(ends[i] + ends[i + 1]) / 2.0 for i in range(len(ends) - 1)]
    knots += [(c + a) / 2.0 for c in ends] + [(c + b) / 2.0 for c in ends]
    return _integrate_piecewise_linear(survival, knots, s, e) / (e - s)


def affiliation_metrics(pred, truth, length: int | None = None) -> dict[str, float | None]:
    """Affiliation precision/recall with exact integrals over each zone.

    Discrete events ``[s, e)`` become continuous intervals ``[s, e]`` on the
    timeline ``[0, length]``. Distances are compared with the survival
    function of a uniformly random point in the zone.
    """
    if isinstance(pred, list) or isinstance(truth, list):
        if length is None:
            raise ValueError("length is required when passing event lists")
        p_ev, t_ev = list(pred), list(truth)
    else:
        p_arr, t_arr = _binary(pred, "pred"), _binary(truth, "truth")
        if p_arr.size != t_arr.size:
            raise ValueError("length mismatch between predictions and labels")
        length = t_arr.size if length is None else length
        p_ev, t_ev = to_events(p_arr), to_events(t_arr)
    if not t_ev:
        return {"Aff-P": None, "Aff-R": None, "Aff-F": None}
    zones = affiliation_zones(t_ev, length)
    precisions, recalls = [], []
    for gt, zone in zip(t_ev, zones):
        local = _clip_intervals(p_ev, *zone)
        recalls.append(_recall_zone(local, gt, zone))
        if local:
            precisions.append(_precision_zone(local, gt, zone))
    aff_p = float(np.mean(precisions)) if precisions else None
    aff_r = float(np.mean(recalls))
    return {"Aff-P": aff_p, "Aff-R": aff_r, "Aff-F": _f1(aff_p, aff_r)}


# -- score-based metrics ------------------------------------------------------------

def _curve_points(scores: np.ndarray, weights: np.ndarray):
    """Cumulative positive/negative mass at each descending unique threshold."""
    order = np.argsort(-scores, kind="mergesort")
    s, w = scores[order], weights[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(w)[last]
    fp = np.cumsum(1.0 - w)[last]
    return tp, fp


def weighted_roc_auc(scores, weights) -> float | None:
    """Area under ROC with (possibly fractional) positive weights; ties score half."""
    scores, weights = np.asarray(scores, dtype=np.float64), np.asarray(weights, dtype=np.float64)
    tp, fp = _curve_points(scores, weights)
    pos, neg = tp[-1], fp[-1]
    if pos <= 0 or neg <= 0:
        return None
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def weighted_average_precision(scores, weights) -> float | None:
    """Step-wise area under precision/recall over descending unique thresholds."""
    scores, weights = np.asarray(scores, dtype=np.float64), np.asarray(weights, dtype=np.float64)
    tp, fp = _curve_points(scores, weights)
    pos = tp[-1]
    if pos <= 0:
        return None
    recall = np.r_[0.0, tp / pos]
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(recall) * precision))


def auc(scores, truth, curve: str = "ROC") -> float | None:
    y = _binary(truth, "truth").astype(np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if curve == "ROC":
        return weighted_roc_auc(scores, y)
    if curve == "PR":
        return weighted_average_precision(scores, y)
    raise ValueError(f"curve must be 'ROC' or 'PR', got {curve!r}")


def ramp_labels(truth, buffer: float) -> np.ndarray:
    """Continuous labels: 1 inside events, ``1 - d / (buffer + 1)`` within ``buffer`` steps outside."""
    y = _binary(truth, "truth")
    out = y.astype(np.float64)
    if buffer <= 0:
        return out
    idx = np.arange(y.size)
    for s, e in to_events(y):
        d = np.where(idx < s, s - idx, idx - (e - 1))
        near = (d > 0) & (d <= buffer)
        out[near] = np.maximum(out[near], 1.0 - d[near] / (buffer + 1.0))
    return out


def default_buffer(truth) -> float:
    lengths = [e - s for s, e in to_events(truth)]
    return float(max(2.0, np.median(lengths))) if lengths else 2.0


def default_grid(truth, size: int = 16) -> np.ndarray:
    lengths = [e - s for s, e in to_events(truth)]
    top = max(4.0, 2.0 * float(np.median(lengths))) if lengths else 4.0
    return np.linspace(0.0, top, size)


def vus(scores, truth, grid=None, buffer: float | None = None) -> dict[str, float | None]:
    """Range AUCs at one buffer and their volumes over a buffer grid."""
    scores = np.asarray(scores, dtype=np.float64)
    y = _binary(truth, "truth")
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    grid = default_grid(y) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("buffer grid is empty")
    if np.any(grid < 0):
        raise ValueError("buffer widths must be non-negative")
    grid = np.sort(grid)
    buffer = default_buffer(y) if buffer is None else buffer
    lab0 = ramp_labels(y, buffer)
    out = {"R-A-P": weighted_average_precision(scores, lab0), "R-A-R": weighted_roc_auc(scores, lab0)}
    rocs, prs = [], []
    for ell in grid:
        lab = ramp_labels(y, ell)
        rocs.append(weighted_roc_auc(scores, lab))
        prs.append(weighted_average_precision(scores, lab))
    out["V-ROC"] = _volume(grid, rocs)
    out["V-PR"] = _volume(grid, prs)
    return out


def _volume(grid: np.ndarray, values: list) -> float | None:
    if any(v is None for v in values):
        return None
    if grid.size == 1 or grid[-1] == grid[0]:
        return float(np.mean(values))
    v = np.asarray(values)
    return float(np.sum(np.diff(grid) * (v[1:] + v[:-1]) / 2.0) / (grid[-1] - grid[0]))


# -- report -------------------------------------------------------------------------

METRIC_NAMES = ("Acc", "P", "R", "F1", "R-P", "R-R", "R-F", "Aff-P", "Aff-R", "Aff-F",
                "A-P", "A-R", "R-A-P", "R-A-R", "V-PR", "V-ROC")


@dataclass
class MetricReport:
    acc: float | None = None
    p: float | None = None
    r: float | None = None
    f1: float | None = None
    r_p: float | None = None
    r_r: float | None = None
    r_f: float | None = None
    aff_p: float | None = None
    aff_r: float | None = None
    aff_f: float | None = None
    a_p: float | None = None
    a_r: float | None = None
    r_a_p: float | None = None
    r_a_r: float | None = None
    v_pr: float | None = None
    v_roc: float | None = None

    def to_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, f.name) for name, f in zip(METRIC_NAMES, fields(self))}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(*(d.get(name) for name in METRIC_NAMES))

    def __getitem__(self, name: str) -> float | None:
        return self.to_dict()[name]


def evaluate(scores, truth, threshold_ratio: float | None = None, grid=None, buffer: float | None = None,
             range_alpha: float = 0.0, range_bias: str = "flat", grid_size: int = 16) -> MetricReport:
    """All sixteen metrics for one scored series.

    Label-based metrics threshold the top ``threshold_ratio`` of scores; by
    default the ratio equals the true anomaly ratio.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = _binary(truth, "truth")
    if scores.shape != y.shape:
        raise ValueError(f"{scores.size} scores vs {y.size} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    ratio = threshold_ratio if threshold_ratio is not None else y.mean()
    if 0.0 < ratio < 1.0:
        pred = threshold_labels(scores, ratio)
    else:
        pred = np.zeros_like(y) if ratio <= 0 else np.ones_like(y)
    values = {}
    values.update(point_metrics(pred, y))
    values.update(range_metrics(pred, y, range_alpha, range_bias))
    values.update(affiliation_metrics(pred, y))
    values["A-P"] = auc(scores, y, "PR")
    values["A-R"] = auc(scores, y, "ROC")
    if grid is None:
        grid = default_grid(y, grid_size)
    values.update(vus(scores, y, grid, buffer))
    for k, v in values.items():
        if v is not None and not (-1e-12 <= v <= 1 + 1e-12 and math.isfinite(v)):
            raise AssertionError(f"metric {k} out of range: {v}")
    return MetricReport.from_dict(values)
