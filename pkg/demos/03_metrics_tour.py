"""
Why one detector can look good or bad depending on the metric
=============================================================

Point F1 punishes a detection that is off by one step. Range and
affiliation metrics give partial credit, and VUS averages over buffer
widths so the choice of a single buffer stops mattering.
"""

import numpy as np

from mmtsad.metrics import affiliation_metrics, auc, point_metrics, range_metrics, vus

truth = np.zeros(100, dtype=int)
truth[40:50] = 1

# %%
# Three predictions: exact, shifted by two steps and a single point.
exact = truth.copy()
shifted = np.roll(truth, 2)
single = np.zeros(100, dtype=int)
single[45] = 1

for name, pred in (("exact", exact), ("shifted", shifted), ("single point", single)):
    p = point_metrics(pred, truth)
    r = range_metrics(pred, truth)
    a = affiliation_metrics(pred, truth)
    print(f"{name:>12}: F1 {p['F1']:.3f}  R-F {r['R-F']:.3f}  Aff-F {a['Aff-F']:.3f}")

# %%
# Score-based metrics. The buffered volume also weighs the steps around the
# event: early alarms before it earn partial credit, while the quiet steps
# after it now count partly as missed positives.
rng = np.random.default_rng(1)
scores = rng.normal(0, 0.2, size=100)
scores[37:50] += 1.0
print("A-R  ", round(auc(scores, truth), 3))
v = vus(scores, truth)
print("V-ROC", round(v["V-ROC"], 3), " V-PR", round(v["V-PR"], 3))

# %%
# A constant score carries no ranking information, so every ROC-type area is 0.5.
print("constant V-ROC:", vus(np.zeros(100), truth)["V-ROC"])
