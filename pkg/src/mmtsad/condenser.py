"""Bernoulli content condenser, its regularizers, and an exact MI bound check."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

PSI_MIN = 1e-6
PSI_MAX = 1.0 - 1e-6


class Condenser(Module):
    """Two-layer MLP ``d -> d/2 -> 1`` with a sigmoid head, one probability per row."""

    def __init__(self, d_in: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or max(1, d_in // 2)
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def forward(self, z: Tensor) -> Tensor:
        return retention_probs(z, self)


def retention_probs(z_text: Tensor, params: Condenser) -> Tensor:
    logits = params.fc2(T.relu(params.fc1(T.as_tensor(z_text))))
    psi = T.sigmoid(logits)
    psi = psi.reshape(psi.shape[:-1])
    return T.clip(psi, PSI_MIN, PSI_MAX)


def sample_mask(psi: Tensor, rng: np.random.Generator | None = None, mode: str = "train") -> Tensor:
    """Binary mask with straight-through gradients.

    ``train`` draws ``F_i = 1[u_i < psi_i]``; ``infer`` thresholds at 0.5;
    ``soft`` returns ``psi`` itself (relaxed mask).
    """
    if mode == "soft":
        return psi
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode sampling needs a random generator")
        hard = rng.random(psi.shape) < psi.data
    elif mode == "infer":
        hard = psi.data >= 0.5
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return T.straight_through(psi, hard.astype(np.float64))


def condense(z_text: Tensor, mask: Tensor) -> Tensor:
    """Gate each row of ``z_text`` by its mask entry."""
    if z_text.shape[:-1] != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match rows of {z_text.shape}")
    return z_text * mask.reshape(*mask.shape, 1)


def loss_cc(psi: Tensor, mu: float = 0.5) -> Tensor:
    """Sum over rows of KL(Bernoulli(psi_i) || Bernoulli(mu)); batch axes averaged."""
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie in (0, 1)")
    psi = T.as_tensor(psi)
    kl = psi * T.log(psi * (1.0 / mu)) + (1.0 - psi) * T.log((1.0 - psi) * (1.0 / (1.0 - mu)))
    per = kl.sum(axis=-1)
    return per.mean() if per.ndim else per


def loss_sm(psi: Tensor) -> Tensor:
    """Mean absolute step between neighbouring retention probabilities."""
    psi = T.as_tensor(psi)
    n = psi.shape[-1]
    if n < 2:
        return T.Tensor(0.0) if not psi.requires_grad else (psi * 0.0).sum()
    diff = T.absolute(psi[..., 1:] - psi[..., :-1])
    per = diff.sum(axis=-1) * (1.0 / n)
    return per.mean() if per.ndim else per


def loss_cl(psi: Tensor, mu: float = 0.5) -> Tensor:
    return loss_cc(psi, mu) + loss_sm(psi)


# -- exact mutual-information validator ----------------------------------------

class ValidationError(ValueError):
    pass


@dataclass
class Lemma1Result:
    mutual_information: float
    bound: float
    passed: bool


def _masks(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    nz = p > 0
    if np.any(q[nz] <= 0):
        return float("inf")
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def lemma1_validate(p_text, conditional, prior, full: bool = False,
                    slack: float = 1e-12) -> Lemma1Result:
    """Exact ``I(Z_text; F)`` against ``E_{Z_text}[KL(P(F | Z_text) || G)]``.

    ``p_text`` is the distribution over a finite alphabet of text states.
    ``conditional`` holds ``(A, N)`` per-row retention probabilities
    (independent Bernoulli mask rows), or with ``full=True`` an
    ``(A, 2**N)`` table of mask distributions in ``itertools.product`` order.
    ``prior`` is a scalar ``mu`` (product of Bernoulli(mu)), an ``(N,)``
    vector of rates, or a full ``(2**N,)`` distribution.
    """
    p_text = np.asarray(p_text, dtype=np.float64)
    cond = np.asarray(conditional, dtype=np.float64)
    if p_text.ndim != 1 or np.any(p_text < 0) or abs(p_text.sum() - 1.0) > 1e-9:
        raise ValidationError("text distribution must be non-negative and sum to 1")
    if cond.ndim != 2 or cond.shape[0] != p_text.size:
        raise ValidationError("conditional must have one row per text state")
    if full:
        n = int(round(np.log2(cond.shape[1])))
        if 2 ** n != cond.shape[1]:
            raise ValidationError("full mask distributions need 2**N columns")
        if np.any(cond < 0) or not np.allclose(cond.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValidationError("each mask distribution must be non-negative and sum to 1")
        p_mask = cond
        masks = _masks(n)
    else:
        n = cond.shape[1]
        if np.any(cond < 0) or np.any(cond > 1):
            raise ValidationError("retention probabilities must lie in [0, 1]")
        masks = _masks(n)
        p_mask = np.prod(np.where(masks[None, :, :] == 1, cond[:, None, :], 1 - cond[:, None, :]), axis=2)
    prior_arr = np.asarray(prior, dtype=np.float64)
    if prior_arr.ndim == 1 and prior_arr.size == 2 ** n and prior_arr.size != n:
        g = prior_arr
        if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-9:
            raise ValidationError("prior distribution must be non-negative and sum to 1")
    else:
        rates = np.broadcast_to(prior_arr, (n,))
        if np.any(rates <= 0) or np.any(rates >= 1):
            raise ValidationError("prior rates must lie in (0, 1)")
        g = np.prod(np.where(masks == 1, rates[None, :], 1 - rates[None, :]), axis=1)
    marginal = p_text @ p_mask
    mi = sum(p_text[a] * _kl(p_mask[a], marginal) for a in range(p_text.size) if p_text[a] > 0)
    bound = sum(p_text[a] * _kl(p_mask[a], g) for a in range(p_text.size) if p_text[a] > 0)
    return Lemma1Result(float(mi), float(bound), bool(mi <= bound + slack))
