"""
How the text condenser trades information for a prior
=====================================================

The condenser keeps each text token with probability psi. Its penalty pulls
psi toward a prior rate mu, and that penalty upper-bounds the information the
kept mask carries about the text. Here we check both facts numerically.
"""

import numpy as np

from mmtsad.condenser import lemma1_validate, loss_cc, loss_sm, sample_mask
from mmtsad.tensor import Tensor

rng = np.random.default_rng(0)

# %%
# Sampling: training draws Bernoulli masks, inference thresholds at 0.5.
psi = np.array([0.1, 0.5, 0.9])
draws = np.stack([sample_mask(Tensor(psi), rng, "train").data for _ in range(20_000)])
print("empirical keep rate:", draws.mean(axis=0).round(3))
print("inference mask:     ", sample_mask(Tensor(psi), mode="infer").data)

# %%
# The penalty is a sum of Bernoulli KL terms plus a smoothness term on
# neighbouring probabilities.
for p in (0.5, 0.7, 0.9):
    print(f"psi={p}: KL to mu=0.5 is {loss_cc(Tensor([p]), 0.5).item():.4f}")
print("smoothness of [0, 1, 0]:", loss_sm(Tensor([0.0, 1.0, 0.0])).item())

# %%
# The bound: for a random channel from text states to masks, the exact
# mutual information never exceeds the expected KL to the prior.
for trial in range(5):
    p_text = rng.dirichlet(np.ones(4))
    keep = rng.uniform(size=(4, 3))
    res = lemma1_validate(p_text, keep, 0.3)
    print(f"I = {res.mutual_information:.4f} <= bound {res.bound:.4f}: {res.passed}")
