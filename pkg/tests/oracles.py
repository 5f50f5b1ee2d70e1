"""Slow reference implementations used to pin down the fast metric paths.

Each oracle works from the definition, index by index or by numerical
integration, and shares no code with ``mmtsad.metrics``.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate


def runs(labels):
    out, start = [], None
    for i, v in enumerate(list(labels) + [0]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            out.append((start, i))
            start = None
    return out


def point(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    acc = (tp + tn) / len(pred)
    prec = tp / (tp + fp) if tp + fp else None
    rec = tp / (tp + fn) if tp + fn else None
    f1 = None if prec is None or rec is None else (0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return {"Acc": acc, "P": prec, "R": rec, "F1": f1}


def _bias_weight(bias, pos, length):
    if bias == "flat":
        return 1.0
    if bias == "front":
        return length - pos + 1
    if bias == "back":
        return pos
    return pos if pos <= length / 2 else length - pos + 1


def _side(targets, others, alpha, bias):
    total = 0.0
    for s, e in targets:
        length = e - s
        member = [any(a <= i < b for a, b in others) for i in range(s, e)]
        touching = sum(1 for a, b in others if any(a <= i < b for i in range(s, e)))
        num = sum(_bias_weight(bias, k + 1, length) for k in range(length) if member[k])
        den = sum(_bias_weight(bias, k + 1, length) for k in range(length))
        gamma = 1.0 if touching <= 1 else 1.0 / touching
        total += alpha * (1.0 if touching else 0.0) + (1 - alpha) * gamma * num / den
    return total / len(targets)


def range_pr(pred, truth, alpha=0.0, bias="flat"):
    p_ev, t_ev = runs(pred), runs(truth)
    rr = _side(t_ev, p_ev, alpha, bias) if t_ev else None
    rp = _side(p_ev, t_ev, 0.0, bias) if p_ev else None
    return rp, rr


# -- affiliation by direct numerical integration ------------------------------------

def _measure(intervals):
    """Total length of a union of intervals."""
    ivs = sorted((a, b) for a, b in intervals if b > a)
    total, cur_a, cur_b = 0.0, None, None
    for a, b in ivs:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def _clip(iv, lo, hi):
    return (max(iv[0], lo), min(iv[1], hi))


def _quad(f, lo, hi, points):
    pts = sorted({lo, hi, *(p for p in points if lo < p < hi)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
        total += val
    return total


def affiliation(pred, truth):
    """Affiliation precision/recall via ``scipy.integrate.quad`` on each zone.

    Survival probabilities are computed as ``1 - |{x in zone: dist < d}| / |zone|``
    with the near set built explicitly as an interval union.
    """
    n = len(truth)
    gts = [(float(s), float(e)) for s, e in runs(truth)]
    preds = [(float(s), float(e)) for s, e in runs(pred)]
    if not gts:
        return None, None
    bounds = [0.0] + [(gts[j][1] + gts[j + 1][0]) / 2 for j in range(len(gts) - 1)] + [float(n)]
    precs, recs = [], []
    for j, (s, e) in enumerate(gts):
        lo, hi = bounds[j], bounds[j + 1]
        width = hi - lo
        local = [iv for iv in (_clip(p, lo, hi) for p in preds) if iv[1] > iv[0]]

        def dist_to_gt(x):
            return max(s - x, 0.0, x - e)

        def surv_p(d):
            if d <= 0:
                return 1.0
            return 1.0 - _measure([_clip((s - d, e + d), lo, hi)]) / width

        def dist_to_pred(y):
            return min(max(a - y, 0.0, y - b) for a, b in local)

        def surv_r(y, d):
            if d <= 0:
                return 1.0
            return 1.0 - _measure([_clip((y - d, y + d), lo, hi)]) / width

        # only genuine discontinuities are passed; quad resolves the kinks itself
        if local:
            mass = sum(b - a for a, b in local)
            num = sum(_quad(lambda x: surv_p(dist_to_gt(x)), a, b, [s, e]) for a, b in local)
            precs.append(num / mass)
            ends = [c for iv in local for c in iv]
            recs.append(_quad(lambda y: surv_r(y, dist_to_pred(y)), s, e, ends) / (e - s))
        else:
            recs.append(0.0)
    return (float(np.mean(precs)) if precs else None), float(np.mean(recs))


# -- score-based ---------------------------------------------------------------------

def roc_pairs(scores, weights):
    """Weighted Mann-Whitney statistic by explicit double loop."""
    pos = sum(weights)
    neg = sum(1 - w for w in weights)
    if pos <= 0 or neg <= 0:
        return None
    acc = 0.0
    for si, wi in zip(scores, weights):
        for sj, wj in zip(scores, weights):
            if si > sj:
                acc += wi * (1 - wj)
            elif si == sj:
                acc += 0.5 * wi * (1 - wj)
    return acc / (pos * neg)


def ap_sweep(scores, weights):
    """Step-wise average precision by explicit threshold sweep."""
    pos = sum(weights)
    if pos <= 0:
        return None
    area, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        tp = sum(w for s, w in zip(scores, weights) if s >= thr)
        flagged = sum(1 for s in scores if s >= thr)
        recall = tp / pos
        area += (recall - prev_recall) * (tp / flagged)
        prev_recall = recall
    return area


def ramp(truth, ell):
    n = len(truth)
    ev = runs(truth)
    out = []
    for i in range(n):
        if truth[i]:
            out.append(1.0)
            continue
        best = 0.0
        for s, e in ev:
            d = s - i if i < s else i - (e - 1)
            if 0 < d <= ell:
                best = max(best, 1.0 - d / (ell + 1.0))
        out.append(best)
    return out


def vus(scores, truth, grid):
    grid = sorted(grid)
    rocs = [roc_pairs(scores, ramp(truth, g)) for g in grid]
    prs = [ap_sweep(scores, ramp(truth, g)) for g in grid]
    if len(grid) == 1:
        return rocs[0], prs[0]
    span = grid[-1] - grid[0]
    v_roc = sum((grid[k + 1] - grid[k]) * (rocs[k] + rocs[k + 1]) / 2 for k in range(len(grid) - 1)) / span
    v_pr = sum((grid[k + 1] - grid[k]) * (prs[k] + prs[k + 1]) / 2 for k in range(len(grid) - 1)) / span
    return v_roc, v_pr
