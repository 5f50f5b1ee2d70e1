"""Instance normalization, patching, patch masking and the time encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import ConfigError
from .nn import Linear, Module, Parameter, TransformerLayer
from .tensor import NonFiniteError, Tensor


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-5


def instance_norm(window: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, NormStats]:
    """Z-score each channel of a ``(..., w, D)`` window with population statistics.

    The standard deviation is floored at ``eps`` rather than offset by it, so
    the map is exactly invariant to positive affine rescaling of the input.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-2] < 2:
        raise ValueError("instance normalization needs at least two time steps")
    mu = window.mean(axis=-2, keepdims=True)
    sd = np.maximum(window.std(axis=-2, keepdims=True), eps)
    return (window - mu) / sd, NormStats(mu, sd, eps)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * stats.std + stats.mean


@dataclass
class PatchSet:
    patches: np.ndarray          # (..., N, p*D)
    patch_size: int
    channels: int
    mask_flags: np.ndarray | None = None   # (..., N) bool

    @property
    def num_patches(self) -> int:
        return self.patches.shape[-2]


def patchify(window: np.ndarray, p: int, l: int) -> PatchSet:
    """Cut a ``(..., w, D)`` window into ``N = (w - p) / l + 1`` flattened patches."""
    window = np.asarray(window, dtype=np.float64)
    w, D = window.shape[-2], window.shape[-1]
    if p > w or p < 1:
        raise ConfigError(f"patch size {p} must be in [1, {w}]")
    if l < 1 or (w - p) % l != 0:
        raise ConfigError(f"(w - p) = {w - p} is not divisible by patch stride {l}")
    n = (w - p) // l + 1
    idx = np.arange(n)[:, None] * l + np.arange(p)[None, :]
    patches = window[..., idx, :]               # (..., N, p, D)
    return PatchSet(patches.reshape(*window.shape[:-2], n, p * D), p, D)


def unpatchify(patches: np.ndarray, p: int, D: int) -> np.ndarray:
    """Inverse of :func:`patchify` for non-overlapping patches (``l == p``)."""
    lead = patches.shape[:-2]
    n = patches.shape[-2]
    return patches.reshape(*lead, n * p, D)


def mask_patches(ps: PatchSet, ratio: float, rng: np.random.Generator) -> PatchSet:
    """Flag ``floor(ratio * N)`` patches per window, chosen without replacement."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("mask ratio must lie in [0, 1]")
    n = ps.num_patches
    k = int(np.floor(ratio * n + 1e-12))
    lead = ps.patches.shape[:-2]
    flags = np.zeros((*lead, n), dtype=bool)
    for idx in np.ndindex(*lead):
        chosen = rng.choice(n, size=k, replace=False) if k else []
        flags[idx + (np.asarray(chosen, dtype=int),)] = True
    return PatchSet(ps.patches, ps.patch_size, ps.channels, flags)


class TimeEncoder(Module):
    """Patch embedding, learned mask token and positions, then pre-norm layers.

    A single instance serves both the plain and the masked branch, so the two
    call sites always read the same parameter storage.
    """

    def __init__(self, patch_dim: int, num_patches: int, d_model: int, layers: int, heads: int,
                 ff: int, rng: np.random.Generator):
        self.embed = Linear(patch_dim, d_model, rng)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, size=d_model))
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(num_patches, d_model)))
        self.layers = [TransformerLayer(d_model, heads, ff, rng) for _ in range(layers)]
        self.patch_dim = patch_dim

    def forward(self, ps: PatchSet) -> Tensor:
        if ps.patches.shape[-1] != self.patch_dim:
            raise ValueError(f"patch length {ps.patches.shape[-1]} != embedding input {self.patch_dim}")
        h = self.embed(Tensor(ps.patches))
        if ps.mask_flags is not None and ps.mask_flags.any():
            h = T.where(ps.mask_flags[..., None], self.mask_token, h)
        h = h + self.pos
        for i, layer in enumerate(self.layers):
            try:
                h = layer(h)
            except NonFiniteError as exc:
                raise NonFiniteError(f"time encoder layer {i}: {exc}") from exc
        return h
