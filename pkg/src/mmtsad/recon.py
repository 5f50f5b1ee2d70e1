"""Cross-modal reconstruction head, reconstruction loss, scoring and thresholding."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import FeedForward, Linear, Module, MultiHeadAttention
from .tensor import NonFiniteError, Tensor


def fold_matrix(w: int, p: int, l: int) -> np.ndarray | None:
    """``(w, N*p)`` averaging matrix mapping patch rows back onto the window.

    ``None`` when patches tile the window exactly (``l == p``).
    """
    n = (w - p) // l + 1
    if l == p and n * p == w:
        return None
    M = np.zeros((w, n * p))
    for i in range(n):
        for j in range(p):
            M[i * l + j, i * p + j] = 1.0
    counts = M.sum(axis=1, keepdims=True)
    return M / np.maximum(counts, 1.0)


class Reconstructor(Module):
    """Self-attention over condensed text, cross-attention from masked time, projection."""

    def __init__(self, d_model: int, heads: int, ff: int, patch_dim: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng)
        self.ff = FeedForward(d_model, ff, rng)
        self.proj = Linear(d_model, patch_dim, rng)

    def forward(self, h_masked: Tensor, z_con: Tensor | None, w: int, p: int, D: int,
                fold: np.ndarray | None = None) -> Tensor:
        return reconstruct(h_masked, z_con, self, w, p, D, fold)


def reconstruct(h_masked: Tensor, z_con: Tensor | None, params: Reconstructor, w: int, p: int, D: int,
                fold: np.ndarray | None = None) -> Tensor:
    """Reconstruct the normalized ``(..., w, D)`` window.

    With ``z_con=None`` the text pathway is skipped and the head decodes the
    masked time representation alone.
    """
    try:
        if z_con is not None:
            if z_con.shape != h_masked.shape:
                raise ValueError(f"condensed text {z_con.shape} does not match time rows {h_masked.shape}")
            z_prime = params.self_attn(z_con, z_con, z_con)
            u = params.ff(h_masked + params.cross_attn(h_masked, z_prime, z_prime))
        else:
            u = params.ff(h_masked)
        patches = params.proj(u)
    except NonFiniteError as exc:
        raise NonFiniteError(f"reconstruction head: {exc}") from exc
    lead = patches.shape[:-2]
    n = patches.shape[-2]
    rows = patches.reshape(*lead, n * p, D)
    if fold is not None:
        rows = T.matmul(Tensor(fold), rows)
    if rows.shape[-2] != w:
        raise ValueError(f"reconstruction has {rows.shape[-2]} steps, expected {w}")
    return rows


def loss_rec(x: Tensor, x_hat: Tensor, raw_sum: bool = False) -> Tensor:
    """Squared Frobenius error, divided by ``w*D`` unless ``raw_sum``; batch axes averaged."""
    x, x_hat = T.as_tensor(x), T.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    sq = (diff * diff).sum(axis=(-2, -1))
    if not raw_sum:
        sq = sq * (1.0 / (x.shape[-2] * x.shape[-1]))
    return sq.mean() if sq.ndim else sq


def interleaved_masks(n_patches: int, ratio: float) -> list[np.ndarray]:
    """Deterministic patch masks for masked inference.

    ``K = round(1 / ratio)`` passes; pass ``k`` masks patches ``k, k+K, ...``
    so every patch is hidden exactly once. ``ratio == 0`` gives one pass
    with nothing masked.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if ratio == 0.0:
        return [np.zeros(n_patches, dtype=bool)]
    k = max(1, min(n_patches, int(round(1.0 / ratio))))
    out = []
    for j in range(k):
        flags = np.zeros(n_patches, dtype=bool)
        flags[j::k] = True
        out.append(flags)
    return out


def step_weights(flags: np.ndarray, w: int, p: int, l: int) -> np.ndarray:
    """Fraction of the patches covering each time step that are flagged, ``(..., w)``."""
    flags = np.asarray(flags, dtype=np.float64)
    n = flags.shape[-1]
    cover = np.zeros((n, w))
    for i in range(n):
        cover[i, i * l:i * l + p] = 1.0
    return (flags @ cover) / cover.sum(axis=0)


class CoverageError(ValueError):
    pass


def accumulate_scores(starts: np.ndarray, window_errors: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Average per-window ``(W, w)`` errors onto a length-``length`` timeline.

    Windows are accumulated in the given order so the reduction is deterministic.
    """
    total = np.zeros(length)
    counts = np.zeros(length, dtype=np.int64)
    w = window_errors.shape[1]
    for s, err in zip(starts, window_errors):
        total[s:s + w] += err
        counts[s:s + w] += 1
    if np.any(counts == 0):
        missing = np.nonzero(counts == 0)[0]
        raise CoverageError(f"{missing.size} timestamps not covered by any window (first: {missing[0]})")
    return total / counts, counts


def threshold_labels(scores, ratio: float) -> np.ndarray:
    """Flag the top ``ceil(ratio * T)`` scores; ties go to the earlier timestamp."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    scores = np.asarray(scores, dtype=np.float64)
    k = int(math.ceil(ratio * scores.size - 1e-9))
    order = np.argsort(-scores, kind="stable")
    out = np.zeros(scores.size, dtype=np.int64)
    out[order[:k]] = 1
    return out
