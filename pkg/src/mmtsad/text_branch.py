"""Endogenous patch descriptions, hashing tokenizer, text encoder and fusion."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, TransformerLayer, xavier_uniform
from .tensor import Tensor

TREND_DEAD_ZONE = 0.01


@dataclass(frozen=True)
class PromptOptions:
    drop_minmaxmedian: bool = False
    drop_trend: bool = False
    drop_lag: bool = False
    template_variant: bool = False


def _fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def patch_statistics(patches: np.ndarray, p: int, D: int) -> dict[str, np.ndarray]:
    """Channel-averaged descriptors of ``(..., N, p*D)`` patches."""
    x = patches.reshape(*patches.shape[:-1], p, D)
    stats = {
        "mean": x.mean(axis=-2).mean(axis=-1),
        "min": x.min(axis=-2).mean(axis=-1),
        "max": x.max(axis=-2).mean(axis=-1),
        "median": np.median(x, axis=-2).mean(axis=-1),
    }
    tc = np.arange(p) - (p - 1) / 2.0
    denom = (tc * tc).sum()
    xc = x - x.mean(axis=-2, keepdims=True)
    slope = (np.einsum("t,...td->...d", tc, xc) / denom) if denom > 0 else np.zeros(x.shape[:-2] + (D,))
    stats["slope"] = slope.mean(axis=-1)
    var = (xc * xc).sum(axis=-2)                       # (..., D)
    if p < 3:
        stats["toplag"] = np.zeros(x.shape[:-2], dtype=int)
    else:
        acs = []
        for k in range(1, p):
            num = (xc[..., k:, :] * xc[..., :-k, :]).sum(axis=-2)
            acs.append(np.where(var > 0, num / np.where(var > 0, var, 1.0), 0.0).mean(axis=-1))
        ac = np.stack(acs, axis=-1)
        lag = ac.argmax(axis=-1) + 1
        stats["toplag"] = np.where((var > 0).any(axis=-1), lag, 0)
    return stats


def gen_endotext(patches: np.ndarray, p: int, D: int = 1,
                 options: PromptOptions = PromptOptions()) -> list[str]:
    """Render one description per patch from its (normalized) values.

    ``patches`` is ``(N, p*D)``; a batch ``(B, N, p*D)`` yields a flat list of
    ``B*N`` strings in row-major order.
    """
    patches = np.asarray(patches, dtype=np.float64)
    st = patch_statistics(patches, p, D)
    flat = {k: np.asarray(v).reshape(-1) for k, v in st.items()}
    out = []
    for i in range(flat["mean"].size):
        slope = flat["slope"][i]
        trend = "flat" if abs(slope) < TREND_DEAD_ZONE else ("rising" if slope > 0 else "falling")
        m, a, b, md = (_fmt(flat[k][i]) for k in ("mean", "min", "max", "median"))
        lag = int(flat["toplag"][i])
        if options.template_variant:
            parts = [f"segment summary: average {m}"]
            if not options.drop_minmaxmedian:
                parts.append(f"lowest {a}, highest {b}, middle value {md}")
            if not options.drop_trend:
                parts.append(f"direction {trend}")
            if not options.drop_lag:
                parts.append(f"strongest lag {lag}")
            out.append(", ".join(parts))
        else:
            parts = [f"patch stats: mean {m}"]
            if not options.drop_minmaxmedian:
                parts.append(f"min {a} max {b} median {md}")
            if not options.drop_trend:
                parts.append(f"trend {trend}")
            if not options.drop_lag:
                parts.append(f"toplag {lag}")
            out.append(" ".join(parts))
    return out


_TOKEN_RE = re.compile(r"-?\d+(?:\.\d+)?|[a-z_]+|[^\sa-z\d]", re.ASCII)
_BASE_WORDS = [
    "patch", "stats", ":", "mean", "min", "max", "median", "trend", "rising", "falling", "flat",
    "toplag", "segment", "summary", "average", "lowest", "highest", "middle", "value", "direction",
    "strongest", "lag", ",",
]


class Tokenizer:
    """Word tokenizer with bucketed numbers and a hashed out-of-vocabulary range."""

    PAD = 0
    UNK = 1

    def __init__(self, vocab_size: int = 4096, bucket_width: float = 0.25, bucket_limit: int = 40,
                 max_tokens: int = 32):
        self.bucket_width = bucket_width
        self.bucket_limit = bucket_limit
        self.max_tokens = max_tokens
        words = ["<pad>", "<unk>"]
        words += [f"<num{b}>" for b in range(-bucket_limit, bucket_limit + 1)]
        words += _BASE_WORDS
        if vocab_size <= len(words):
            raise ValueError(f"vocab_size must exceed the {len(words)} reserved tokens")
        self.vocab = {w: i for i, w in enumerate(words)}
        self.vocab_size = vocab_size
        self._cache: dict[str, list[int]] = {}

    def _number_token(self, tok: str) -> str:
        b = min(max(round(float(tok) / self.bucket_width), -self.bucket_limit), self.bucket_limit)
        return f"<num{b}>"

    def token_id(self, tok: str) -> int:
        if tok in self.vocab:
            return self.vocab[tok]
        h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
        base = len(self.vocab)
        return base + h % (self.vocab_size - base)

    def tokenize(self, text: str) -> list[str]:
        toks = []
        for tok in _TOKEN_RE.findall(text.lower()):
            if tok[0] in "0123456789" or (tok[0] == "-" and len(tok) > 1):
                tok = self._number_token(tok)
            toks.append(tok)
        return toks[: self.max_tokens]

    def encode(self, text: str) -> list[int]:
        if not text.strip():
            raise ValueError("cannot encode an empty string")
        ids = self._cache.get(text)
        if ids is None:
            ids = [self.token_id(t) for t in self.tokenize(text)] or [self.UNK]
            self._cache[text] = ids
        return ids

    def encode_batch(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Padded ``(count, L)`` id matrix and its validity mask."""
        seqs = [self.encode(t) for t in texts]
        width = max((len(s) for s in seqs), default=1)
        ids = np.zeros((len(seqs), width), dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = True
        return ids, mask

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump({"vocab_size": self.vocab_size, "bucket_width": self.bucket_width,
                       "bucket_limit": self.bucket_limit, "vocab": self.vocab}, fh, indent=1)


class TextEncoder(Module):
    """Token embeddings, one transformer layer within each text, masked mean pool.

    Texts never attend to each other. Precomputed document embeddings skip
    the tokenizer and go through a linear projection instead.
    """

    def __init__(self, vocab_size: int, d_model: int, heads: int, ff: int, max_tokens: int,
                 rng: np.random.Generator, embedding_dim: int | None = None):
        self.table = Parameter(xavier_uniform(rng, vocab_size, d_model))
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(max_tokens, d_model)))
        self.layer = TransformerLayer(d_model, heads, ff, rng)
        self.project = Linear(embedding_dim or d_model, d_model, rng)

    def forward(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.shape[0] == 0:
            raise ValueError("no texts to encode")
        uniq, inverse = np.unique(ids, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        umask = uniq != Tokenizer.PAD
        umask[:, 0] = True
        L = uniq.shape[1]
        h = T.getitem(self.table, uniq) + self.pos[:L]
        h = self.layer(h, key_mask=umask)
        w = umask.astype(np.float64)
        w = w / w.sum(axis=1, keepdims=True)
        pooled = (h * w[..., None]).sum(axis=1)
        return T.getitem(pooled, inverse)

    def encode_embeddings(self, emb: np.ndarray) -> Tensor:
        return self.project(Tensor(np.asarray(emb, dtype=np.float64)))


def encode_text(texts: Sequence[str], encoder: TextEncoder, tokenizer: Tokenizer) -> Tensor:
    """Encode strings to a ``(count, d_model)`` matrix."""
    for t in texts:
        if not t or not t.strip():
            raise ValueError("cannot encode an empty string")
    ids, _ = tokenizer.encode_batch(texts)
    return encoder(ids)


def pool_exo(doc_vectors: Tensor | None, no_context: Tensor) -> Tensor:
    """Key/value rows for one window: its doc vectors, or the no-context token."""
    if doc_vectors is None or doc_vectors.shape[0] == 0:
        return no_context.reshape(1, -1)
    return doc_vectors


class CrossViewFusion(Module):
    """Endogenous queries attend over exogenous keys/values, post-norm residuals."""

    def __init__(self, d_model: int, heads: int, ff: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff, rng)
        self.norm2 = LayerNorm(d_model)
        self.no_context = Parameter(rng.normal(0.0, 0.02, size=d_model))

    def forward(self, h_endo: Tensor, h_exo: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        z_hat = self.norm1(h_endo + self.attn(h_endo, h_exo, h_exo, key_mask=key_mask))
        return self.norm2(z_hat + self.ff(z_hat))
