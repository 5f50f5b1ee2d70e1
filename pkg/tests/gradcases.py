"""Seeded finite-difference cases for every differentiable op and loss term."""

from __future__ import annotations

import numpy as np

from mmtsad import tensor as T
from mmtsad.alignment import loss_ma, similarity_matrix
from mmtsad.condenser import loss_cc, loss_cl, loss_sm
from mmtsad.config import RunConfig
from mmtsad.data import SeriesDataset, TextDoc
from mmtsad.model import MindModel, prepare_docs, prepare_windows
from mmtsad.recon import loss_rec
from mmtsad.text_branch import Tokenizer


def away(rng, shape, margin=0.1, scale=1.0):
    """Normal draws pushed at least ``margin`` away from zero (keeps kinks out of reach)."""
    x = rng.normal(0.0, scale, size=shape)
    return np.where(x >= 0, x + margin, x - margin)


def _scalar(t):
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    w = np.random.default_rng(12345).normal(size=t.shape)
    return (t * w).sum()


def _where_case(r):
    cond = r.random((3, 4)) < 0.5
    return (lambda a, b: _scalar(T.where(cond, a, b))), [r.normal(size=(3, 4)), r.normal(size=(4,))]


def straight_through_case(r):
    """Tape function through a sampled mask, and its relaxed twin (mask replaced by ``p``).

    Finite differences of the relaxed twin are the reference for the
    straight-through gradient.
    """
    hard = (r.random(4) < 0.5).astype(float)
    c = r.normal(size=4)
    p0 = r.uniform(0.1, 0.9, size=4)
    return (lambda p: _scalar(T.straight_through(p, hard) * c)), (lambda p: _scalar(p * c)), [p0]


OPS = {
    "add": lambda r: (lambda a, b: _scalar(a + b), [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "sub": lambda r: (lambda a, b: _scalar(a - b), [r.normal(size=(2, 3)), r.normal(size=(2, 1))]),
    "mul": lambda r: (lambda a, b: _scalar(a * b), [r.normal(size=(3, 2)), r.normal(size=(1, 2))]),
    "div": lambda r: (lambda a, b: _scalar(a / b), [r.normal(size=(3,)), r.uniform(0.5, 2.0, size=(3,))]),
    "power": lambda r: (lambda a: _scalar(T.power(a, 2.5)), [r.uniform(0.3, 2.0, size=(4,))]),
    "exp": lambda r: (lambda a: _scalar(T.exp(a)), [r.normal(size=(2, 3))]),
    "log": lambda r: (lambda a: _scalar(T.log(a)), [r.uniform(0.2, 3.0, size=(5,))]),
    "sqrt": lambda r: (lambda a: _scalar(T.sqrt(a)), [r.uniform(0.2, 3.0, size=(5,))]),
    "absolute": lambda r: (lambda a: _scalar(T.absolute(a)), [away(r, (6,))]),
    "tanh": lambda r: (lambda a: _scalar(T.tanh(a)), [r.normal(size=(2, 3))]),
    "sigmoid": lambda r: (lambda a: _scalar(T.sigmoid(a)), [r.normal(size=(2, 3))]),
    "relu": lambda r: (lambda a: _scalar(T.relu(a)), [away(r, (6,))]),
    "gelu": lambda r: (lambda a: _scalar(T.gelu(a)), [r.normal(size=(2, 4))]),
    "clip": lambda r: (lambda a: _scalar(T.clip(a, -0.5, 0.5)),
                       [np.array([-1.0, -0.3, 0.1, 0.4, 0.9]) + r.uniform(-0.05, 0.05, size=5)]),
    "where": lambda r: _where_case(r),
    "sum": lambda r: (lambda a: _scalar(a.sum(axis=1)), [r.normal(size=(3, 4))]),
    "mean": lambda r: (lambda a: _scalar(a.mean(axis=0, keepdims=True)), [r.normal(size=(3, 4))]),
    "reshape": lambda r: (lambda a: _scalar(a.reshape(4, 3)), [r.normal(size=(2, 6))]),
    "transpose": lambda r: (lambda a: _scalar(a.transpose(2, 0, 1)), [r.normal(size=(2, 3, 4))]),
    "getitem": lambda r: (lambda a: _scalar(T.getitem(a, np.array([0, 2, 2, 1]))), [r.normal(size=(3, 2))]),
    "slice": lambda r: (lambda a: _scalar(a[:, 1:3]), [r.normal(size=(3, 4))]),
    "concat": lambda r: (lambda a, b: _scalar(T.concat([a, b], axis=1)),
                         [r.normal(size=(2, 3)), r.normal(size=(2, 2))]),
    "stack": lambda r: (lambda a, b: _scalar(T.stack([a, b], axis=0)), [r.normal(size=(3,)), r.normal(size=(3,))]),
    "matmul": lambda r: (lambda a, b: _scalar(T.matmul(a, b)), [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
    "softmax": lambda r: (lambda a: _scalar(T.softmax(a, axis=-1)), [r.normal(size=(3, 4))]),
    "log_softmax": lambda r: (lambda a: _scalar(T.log_softmax(a, axis=0)), [r.normal(size=(3, 4))]),
    "layer_norm": lambda r: (lambda x, g, b: _scalar(T.layer_norm(x, g, b)),
                             [r.normal(size=(3, 5)), r.normal(size=5), r.normal(size=5)]),
    "attention": lambda r: (
        lambda q, k, v, wo: _scalar(T.attention(q, k, v, heads=2, key_mask=np.array([True, True, False, True]),
                                                out_weight=wo)),
        [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 4)), r.normal(size=(2, 4, 4)), r.normal(size=(4, 4))]),
}


def _psi_with_gaps(r, n=6):
    """Probabilities whose neighbour differences stay clear of zero (``|.|`` kink)."""
    steps = away(r, (n - 1,), margin=0.05, scale=0.1)
    psi = np.concatenate([[0.0], np.cumsum(steps)])
    psi = psi - psi.min()
    return 0.1 + 0.8 * psi / max(psi.max(), 1e-9)


def _cc_case(r):
    mu = float(r.uniform(0.2, 0.8))
    return (lambda p: loss_cc(p, mu=mu)), [r.uniform(0.05, 0.95, size=(2, 5))]


LOSSES = {
    "L_MA": lambda r: (lambda h, z: loss_ma(similarity_matrix(h, z), tau=0.5),
                       [r.normal(size=(2, 4, 6)), r.normal(size=(2, 4, 6))]),
    "L_MA_rowwise": lambda r: (lambda h, z: loss_ma(similarity_matrix(h, z), tau=0.5, symmetric_denominator=False),
                               [r.normal(size=(4, 6)), r.normal(size=(4, 6))]),
    "L_CC": lambda r: _cc_case(r),
    "L_SM": lambda r: (lambda p: loss_sm(p), [_psi_with_gaps(r)]),
    "L_CL": lambda r: (lambda p: loss_cl(p, mu=0.3), [_psi_with_gaps(r)]),
    "L_Rec": lambda r: (lambda x, y: loss_rec(x, y), [r.normal(size=(2, 6, 2)), r.normal(size=(2, 6, 2))]),
}


# -- joint objective on a tiny model --------------------------------------------------

def tiny_config(**model) -> RunConfig:
    m = {"d_model": 8, "layers": 1, "heads": 2, "ff_mult": 2, "vocab_size": 256, "max_tokens": 12, **model}
    return RunConfig().replace(
        data={"window_length": 12, "train_stride": 6, "patch_size": 3, "patch_stride": 3, "k_max": 2},
        model=m, condenser={"infer_mask": "soft"})


def tiny_corpus(rng: np.random.Generator, length: int = 30):
    t = np.arange(length, dtype=np.float64)
    values = np.sin(t / 3.0)[:, None] + 0.1 * rng.normal(size=(length, 1))
    ds = SeriesDataset(values, t, None, ["x"])
    docs = [TextDoc(2.0, 9.0, "alert: spike in readings"), TextDoc(5.0, 20.0, "weather mild")]
    return ds, docs


def _owner(model, dotted: str):
    obj = model
    parts = dotted.split(".")
    for p in parts[:-1]:
        obj = obj[int(p)] if isinstance(obj, list) else getattr(obj, p)
    return obj, parts[-1]


def joint_case(r: np.random.Generator, n_params: int = 3):
    """Joint loss as a function of a few randomly chosen parameter tensors.

    The condenser runs in relaxed mode and patch masks are fixed, so the
    objective is a deterministic smooth function of the parameters.
    """
    cfg = tiny_config()
    ds, docs = tiny_corpus(r)
    model = MindModel(cfg, 1, np.random.default_rng(int(r.integers(1 << 31))))
    tok = Tokenizer(cfg.model.vocab_size, max_tokens=cfg.model.max_tokens)
    batch = prepare_windows(ds, docs, cfg, tok, stride=6)
    table = prepare_docs(docs, tok)
    flags = r.random((len(batch), model.n_patches)) < 0.5
    names = list(model.parameters())
    chosen = [names[i] for i in r.choice(len(names), size=n_params, replace=False)]
    # always include a text-side parameter so the cross-modal path is exercised
    if not any(n.startswith(("text_encoder", "fusion", "condenser")) for n in chosen):
        chosen[0] = "fusion.attn.v.weight"
    params = model.parameters()
    originals = [params[n] for n in chosen]

    def fn(*leaves):
        for name, leaf in zip(chosen, leaves):
            obj, attr = _owner(model, name)
            setattr(obj, attr, leaf)
        try:
            return model(batch, table, None, None, train=False, mask_flags=flags).total
        finally:
            for name, orig in zip(chosen, originals):
                obj, attr = _owner(model, name)
                setattr(obj, attr, orig)

    return fn, [params[n].data.copy() for n in chosen], chosen
