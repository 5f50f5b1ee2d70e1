"""Time/text cosine similarity matrix and the symmetric contrastive loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import ConfigError
from .tensor import Tensor


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = T.sqrt((x * x).sum(axis=-1, keepdims=True) + eps * eps)
    return x / norm


def similarity_matrix(h_time: Tensor, z_text: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarities ``K[j, g] = cos(h_time[j], z_text[g])``, batched over leading axes."""
    h_time, z_text = T.as_tensor(h_time), T.as_tensor(z_text)
    if h_time.shape != z_text.shape:
        raise ValueError(f"time {h_time.shape} and text {z_text.shape} representations differ in shape")
    return T.matmul(l2_normalize(h_time, eps), l2_normalize(z_text, eps).swapaxes(-1, -2))


def loss_ma(sim: Tensor, tau: float = 0.07, symmetric_denominator: bool = True) -> Tensor:
    """Symmetric InfoNCE over ``K / tau`` with the diagonal as positives.

    The time-to-text term normalizes each row over text indices; the
    text-to-time term normalizes over time indices (columns) when
    ``symmetric_denominator`` is set, otherwise over text indices as well.
    Leading batch axes are averaged.
    """
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    sim = T.as_tensor(sim)
    n = sim.shape[-1]
    logits = sim * (1.0 / tau)
    eye = np.eye(n)
    rows = (T.log_softmax(logits, axis=-1) * eye).sum(axis=(-2, -1))
    cols = (T.log_softmax(logits, axis=-2 if symmetric_denominator else -1) * eye).sum(axis=(-2, -1))
    per = (rows + cols) * (-1.0 / (2 * n))
    return per.mean() if per.ndim else per
