"""Full multimodal detector: wiring of the branches plus window preparation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .alignment import loss_ma, similarity_matrix
from .condenser import Condenser, condense, loss_cc, loss_sm, retention_probs, sample_mask
from .config import RunConfig
from .data import SeriesDataset, TextDoc, make_windows, select_docs
from .nn import Module, Parameter
from .recon import Reconstructor, fold_matrix, loss_rec, reconstruct
from .tensor import Tensor
from .text_branch import CrossViewFusion, PromptOptions, TextEncoder, Tokenizer, gen_endotext
from .time_branch import PatchSet, TimeEncoder, instance_norm, mask_patches, patchify


@dataclass
class WindowBatch:
    """Pre-computed, parameter-free view of a set of windows."""

    starts: np.ndarray          # (W,)
    x_norm: np.ndarray          # (W, w, D)
    patches: np.ndarray         # (W, N, p*D)
    endo_ids: np.ndarray        # (W, N, L) token ids of the per-patch descriptions
    doc_index: np.ndarray       # (W, k_max) corpus doc indices, -1 for empty slots
    norm_mean: np.ndarray       # (W, 1, D)
    norm_std: np.ndarray        # (W, 1, D)

    def __len__(self) -> int:
        return self.starts.size

    def take(self, idx) -> "WindowBatch":
        idx = np.asarray(idx)
        return WindowBatch(self.starts[idx], self.x_norm[idx], self.patches[idx], self.endo_ids[idx],
                           self.doc_index[idx], self.norm_mean[idx], self.norm_std[idx])


@dataclass
class DocTable:
    """Corpus documents in encoder-ready form."""

    ids: np.ndarray                 # (n_docs, L) padded token ids (unused rows for embedded docs)
    embeddings: np.ndarray | None   # (n_docs, e) when every doc carries one
    count: int


def prepare_docs(docs: list[TextDoc], tokenizer: Tokenizer) -> DocTable:
    if not docs:
        return DocTable(np.zeros((0, 1), dtype=np.int64), None, 0)
    if all(d.embedding is not None for d in docs):
        emb = np.stack([np.asarray(d.embedding, dtype=np.float64) for d in docs])
        return DocTable(np.zeros((len(docs), 1), dtype=np.int64), emb, len(docs))
    if any(d.embedding is not None for d in docs):
        raise ValueError("either every document carries an embedding or none does")
    ids, _ = tokenizer.encode_batch([d.text for d in docs])
    return DocTable(ids, None, len(docs))


def prepare_windows(ds: SeriesDataset, docs: list[TextDoc], config: RunConfig, tokenizer: Tokenizer,
                    stride: int) -> WindowBatch:
    spec = config.window_spec
    m = config.model
    windows = make_windows(ds, spec, stride=stride)
    raw = np.stack([w.values for w in windows])
    x_norm, stats = instance_norm(raw)
    ps = patchify(x_norm, spec.patch_size, spec.patch_stride)
    W, N = raw.shape[0], ps.num_patches
    options = PromptOptions(m.drop_minmaxmedian, m.drop_trend, m.drop_lag, m.template_variant)
    texts = gen_endotext(ps.patches, spec.patch_size, ds.channels, options)
    ids, _ = tokenizer.encode_batch(texts)
    doc_index = np.full((W, config.data.k_max), -1, dtype=np.int64)
    for i, w in enumerate(windows):
        sel = select_docs(docs, w.t_start, w.t_end, config.data.k_max)
        doc_index[i, : len(sel)] = sel
    return WindowBatch(np.array([w.start for w in windows]), x_norm, ps.patches,
                       ids.reshape(W, N, -1), doc_index, stats.mean, stats.std)


@dataclass
class ForwardOutput:
    x_hat: Tensor
    h_time: Tensor
    z_text: Tensor
    sim: Tensor
    psi: Tensor | None
    mask: Tensor | None
    losses: dict[str, Tensor]

    @property
    def total(self) -> Tensor:
        return self.losses["L_MA"] + self.losses["L_CL"] + self.losses["L_Rec"]


class MindModel(Module):
    """Time encoder, text encoder, fusion, condenser and reconstruction head.

    Ablation switches in the config only change wiring; the parameter set is
    the same for every variant, so checkpoints stay interchangeable.
    """

    def __init__(self, config: RunConfig, channels: int, rng: np.random.Generator):
        d, m, data = config.model.d_model, config.model, config.data
        spec = config.window_spec
        ff = m.ff_mult * d
        self.config = config
        self.channels = channels
        self.n_patches = spec.num_patches
        patch_dim = spec.patch_size * channels
        self.time_encoder = TimeEncoder(patch_dim, self.n_patches, d, m.layers, m.heads, ff, rng)
        self.text_encoder = TextEncoder(m.vocab_size, d, m.heads, ff, m.max_tokens, rng, data.embedding_dim)
        self.fusion = CrossViewFusion(d, m.heads, ff, rng)
        self.endo_queries = Parameter(rng.normal(0.0, 0.02, size=(self.n_patches, d)))
        cond_in = 2 * d if config.condenser.variant else d
        self.condenser = Condenser(cond_in, rng)
        self.recon = Reconstructor(d, m.heads, ff, patch_dim, rng)
        self._fold = fold_matrix(spec.window_length, spec.patch_size, spec.patch_stride)

    # -- text side ---------------------------------------------------------

    def _endo(self, batch: WindowBatch) -> Tensor:
        B, N, L = batch.endo_ids.shape
        if not self.config.model.use_endo:
            return self.endo_queries + Tensor(np.zeros((B, N, self.config.model.d_model)))
        return self.text_encoder(batch.endo_ids.reshape(B * N, L)).reshape(B, N, -1)

    def _exo(self, batch: WindowBatch, docs: DocTable) -> tuple[Tensor, np.ndarray]:
        """Key/value rows ``(B, K, d)`` and their validity mask."""
        B = len(batch)
        d = self.config.model.d_model
        no_ctx = self.fusion.no_context.reshape(1, 1, d)
        idx = batch.doc_index
        if not self.config.model.use_exo or docs.count == 0 or np.all(idx < 0):
            return no_ctx + Tensor(np.zeros((B, 1, d))), np.ones((B, 1), dtype=bool)
        used = np.unique(idx[idx >= 0])
        if docs.embeddings is not None:
            vecs = self.text_encoder.encode_embeddings(docs.embeddings[used])
        else:
            vecs = self.text_encoder(docs.ids[used])
        local = np.searchsorted(used, np.where(idx >= 0, idx, used[0]))
        valid = idx >= 0
        rows = T.getitem(vecs, local)                                       # (B, K, d)
        empty = ~valid.any(axis=1)
        if self.config.model.exo_mode == "pooled":
            wts = valid.astype(np.float64)
            wts = wts / np.maximum(wts.sum(axis=1, keepdims=True), 1.0)
            pooled = (rows * wts[..., None]).sum(axis=1, keepdims=True)      # (B, 1, d)
            kv = T.where(empty[:, None, None], no_ctx, pooled)
            return kv, np.ones((B, 1), dtype=bool)
        # empty windows route their first slot to the no-context token
        slot0 = np.zeros_like(valid)
        slot0[:, 0] = empty
        kv = T.where(slot0[..., None], no_ctx, rows)
        return kv, valid | slot0

    # -- forward -----------------------------------------------------------

    def forward(self, batch: WindowBatch, docs: DocTable, mask_rng: np.random.Generator | None,
                cond_rng: np.random.Generator | None, train: bool = True,
                mask_flags: np.ndarray | None = None) -> ForwardOutput:
        """One pass over ``batch``.

        Training draws random patch masks from ``mask_rng``; explicit
        ``mask_flags`` (``(B, N)`` booleans) override the draw, which is how
        deterministic masked inference is run.
        """
        cfg, m, c = self.config, self.config.model, self.config.condenser
        spec = cfg.window_spec
        ps = PatchSet(batch.patches, spec.patch_size, self.channels)
        h_time = self.time_encoder(ps)
        ratio = m.mask_ratio if train else 0.0
        if mask_flags is not None:
            flags = np.broadcast_to(np.asarray(mask_flags, dtype=bool), ps.patches.shape[:-1])
            h_masked = self.time_encoder(PatchSet(ps.patches, ps.patch_size, ps.channels, flags))
        elif ratio > 0:
            if mask_rng is None:
                raise ValueError("patch masking needs a random generator")
            h_masked = self.time_encoder(mask_patches(ps, ratio, mask_rng))
        else:
            h_masked = h_time

        h_endo = self._endo(batch)
        kv, kv_mask = self._exo(batch, docs)
        mode = "train" if train else ("infer" if c.infer_mask == "hard" else "soft")

        def gate(z: Tensor, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
            inp = T.concat([z, h], axis=-1) if c.variant else z
            psi = retention_probs(inp, self.condenser)
            f = sample_mask(psi, cond_rng, mode)
            return psi, f, condense(z, f)

        psi = f = None
        if c.enabled and m.reversed_order:
            psi, f, h_endo = gate(h_endo, h_time)
        z_text = self.fusion(h_endo, kv, key_mask=kv_mask)
        sim = similarity_matrix(h_time, z_text)
        if c.enabled and not m.reversed_order:
            psi, f, z_con = gate(z_text, h_time)
        else:
            z_con = z_text

        w, p = spec.window_length, spec.patch_size
        x_hat = reconstruct(h_masked, z_con if m.cross_modal else None, self.recon,
                            w, p, self.channels, self._fold)
        zero = Tensor(0.0)
        losses = {
            "L_MA": loss_ma(sim, m.tau, m.symmetric_denominator) if cfg.train.use_alignment else zero,
            "L_CL": zero,
            "L_Rec": loss_rec(Tensor(batch.x_norm), x_hat, raw_sum=cfg.train.rec_sum),
        }
        if psi is not None:
            l_cl = loss_cc(psi, c.mu)
            if c.use_smoothness:
                l_cl = l_cl + loss_sm(psi)
            losses["L_CL"] = l_cl
        return ForwardOutput(x_hat, h_time, z_text, sim, psi, f, losses)
