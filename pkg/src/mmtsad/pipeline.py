"""Training loop, resumable state and per-timestamp scoring."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .config import RunConfig
from .data import SeriesDataset, TextDoc
from .model import DocTable, MindModel, WindowBatch, prepare_docs, prepare_windows
from .optim import Adam, AdamState
from .recon import accumulate_scores, interleaved_masks, step_weights
from .tensor import NonFiniteError, no_grad
from .text_branch import Tokenizer

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("L_MA", "L_CL", "L_Rec", "L_total")
STREAMS = ("init", "shuffle", "mask", "condenser")


class DivergenceError(RuntimeError):
    def __init__(self, term: str, epoch: int, step: int, detail: str = ""):
        self.term = term
        msg = f"non-finite {term} at epoch {epoch} step {step}"
        super().__init__(msg + (f": {detail}" if detail else ""))


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators spawned from one seed, one per consumer."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def make_tokenizer(config: RunConfig) -> Tokenizer:
    return Tokenizer(config.model.vocab_size, max_tokens=config.model.max_tokens)


def build_model(config: RunConfig, channels: int, rng: np.random.Generator) -> MindModel:
    return MindModel(config, channels, rng)


@dataclass
class TrainResult:
    model: MindModel
    tokenizer: Tokenizer
    docs: DocTable
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(config: RunConfig, series: SeriesDataset, docs: list[TextDoc], out_dir: str | Path | None = None,
          resume: str | Path | None = None, max_steps: int | None = None,
          step_log: list | None = None) -> TrainResult:
    """Fit the joint objective with Adam and unit loss weights.

    ``series`` is the training split. With ``out_dir`` a per-epoch CSV log,
    the best-total checkpoint (``best.json``) and a resumable ``last.json``
    are written. ``resume`` continues from such a ``last.json``.
    ``max_steps`` caps optimizer steps (used for short diagnostics) and
    ``step_log`` receives the per-step loss values when given.
    """
    t = config.train
    streams = make_streams(t.seed)
    tokenizer = make_tokenizer(config)
    model = build_model(config, series.channels, streams["init"])
    doc_table = prepare_docs(docs, tokenizer)
    windows = prepare_windows(series, docs, config, tokenizer, stride=config.data.train_stride)
    opt = Adam(model.parameters(), lr=t.lr, betas=(t.beta1, t.beta2), eps=t.eps)
    history: list[dict] = []
    best_total, best_epoch, start_epoch = math.inf, -1, 0

    if resume is not None:
        state = load_checkpoint(resume)
        restore_params(model, state["params"])
        opt.state = AdamState.from_dict(state["adam"])
        for name, st in state["rng"].items():
            streams[name].bit_generator.state = st
        history = state["meta"].get("history", [])
        best_total = state["meta"].get("best_total", math.inf)
        best_epoch = state["meta"].get("best_epoch", -1)
        start_epoch = len(history)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    steps = 0
    for epoch in range(start_epoch, t.epochs):
        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        batches = _epoch_batches(len(windows), t.batch_size, streams["shuffle"])
        for b, idx in enumerate(batches):
            if max_steps is not None and steps >= max_steps:
                break
            opt.zero_grad()
            try:
                fwd = model(windows.take(idx), doc_table, streams["mask"], streams["condenser"], train=True)
            except NonFiniteError as exc:
                raise DivergenceError("forward activations", epoch, b, str(exc)) from exc
            values = {k: float(v.data) for k, v in fwd.losses.items()}
            for term, val in values.items():
                if not math.isfinite(val):
                    raise DivergenceError(term, epoch, b)
            total = fwd.total
            try:
                total.backward()
            except NonFiniteError as exc:
                raise DivergenceError("L_total gradient", epoch, b, str(exc)) from exc
            opt.step()
            values["L_total"] = float(total.data)
            if step_log is not None:
                step_log.append(values)
            for k in LOSS_COLUMNS:
                sums[k] += values[k] * len(idx)
            steps += 1
        row = {"epoch": epoch + 1, **{k: sums[k] / len(windows) for k in LOSS_COLUMNS}}
        history.append(row)
        log.info("epoch %d  L_MA %.4f  L_CL %.4f  L_Rec %.4f  total %.4f", row["epoch"],
                 row["L_MA"], row["L_CL"], row["L_Rec"], row["L_total"])
        improved = row["L_total"] < best_total
        if improved:
            best_total, best_epoch = row["L_total"], epoch + 1
        if out is not None:
            meta = {"config": config.to_dict(), "channels": series.channels, "epoch": epoch + 1,
                    "history": history, "best_total": best_total, "best_epoch": best_epoch}
            if improved:
                save_checkpoint(out / "best.json", model, meta)
            save_checkpoint(out / "last.json", model, meta, adam=opt.state.to_dict(),
                            rng={k: g.bit_generator.state for k, g in streams.items()})
            write_log(history, out / "train_log.csv")
        if max_steps is not None and steps >= max_steps:
            break
    return TrainResult(model, tokenizer, doc_table, history, best_epoch)


def write_log(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch",) + LOSS_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(row[k]) for k in LOSS_COLUMNS])


def load_model(path: str | Path, config: RunConfig | None = None) -> tuple[MindModel, RunConfig]:
    """Rebuild a model from a checkpoint, optionally against an explicit config."""
    state = load_checkpoint(path)
    meta = state["meta"]
    cfg = config or RunConfig.from_dict(meta["config"])
    model = build_model(cfg, int(meta["channels"]), np.random.default_rng(0))
    restore_params(model, state["params"])
    return model, cfg


@dataclass
class ScoreSeries:
    scores: np.ndarray
    counts: np.ndarray


@dataclass
class WindowDiagnostics:
    """Per-window quantities gathered during scoring."""

    starts: np.ndarray
    psi: np.ndarray | None          # (W, N)
    mask: np.ndarray | None         # (W, N)
    sim: np.ndarray                 # (W, N, N)


def score_windows(model: MindModel, windows: WindowBatch, docs: DocTable, batch_size: int = 64,
                  series_var: np.ndarray | None = None) -> tuple[np.ndarray, WindowDiagnostics]:
    """Per-window, per-step squared error ``(W, w)``, channel-averaged.

    With a positive inference mask ratio each step's error comes from the
    pass in which its patch was hidden (interleaved deterministic masks);
    otherwise a single unmasked pass is used. Errors are in normalized
    units, or with ``score_scale == "series"`` rescaled per channel by
    window variance over ``series_var``.
    """
    cfg = model.config
    if cfg.model.score_scale == "series" and series_var is None:
        raise ValueError("series-scaled scoring needs the per-channel series variance")
    spec = cfg.window_spec
    w, p, l = spec.window_length, spec.patch_size, spec.patch_stride
    passes = interleaved_masks(model.n_patches, cfg.model.infer_mask_ratio)
    weights = [step_weights(f, w, p, l) for f in passes]
    errs, psis, masks, sims = [], [], [], []
    with no_grad():
        for i in range(0, len(windows), batch_size):
            part = windows.take(np.arange(i, min(i + batch_size, len(windows))))
            err = np.zeros(part.x_norm.shape[:2])
            for flags, wt in zip(passes, weights):
                fwd = model(part, docs, None, None, train=False, mask_flags=flags if flags.any() else None)
                se = (part.x_norm - fwd.x_hat.data) ** 2
                if cfg.model.score_scale == "series":
                    se = se * (part.norm_std ** 2 / series_var)
                err += wt * se.mean(axis=-1) if len(passes) > 1 else se.mean(axis=-1)
            errs.append(err)
            sims.append(fwd.sim.data)
            if fwd.psi is not None:
                psis.append(fwd.psi.data)
                masks.append(fwd.mask.data)
    diag = WindowDiagnostics(windows.starts, np.concatenate(psis) if psis else None,
                             np.concatenate(masks) if masks else None, np.concatenate(sims))
    return np.concatenate(errs), diag


def score_series(model: MindModel, series: SeriesDataset, docs: list[TextDoc], stride: int = 1,
                 batch_size: int = 64, tokenizer: Tokenizer | None = None) -> ScoreSeries:
    """Anomaly score per timestamp: squared reconstruction error averaged over covering windows."""
    cfg = model.config
    tokenizer = tokenizer or make_tokenizer(cfg)
    windows = prepare_windows(series, docs, cfg, tokenizer, stride=stride)
    errors, _ = score_windows(model, windows, prepare_docs(docs, tokenizer), batch_size,
                              series_variance(series))
    scores, counts = accumulate_scores(windows.starts, errors, series.length)
    return ScoreSeries(scores, counts)


def series_variance(series: SeriesDataset, eps: float = 1e-5) -> np.ndarray:
    """Per-channel population variance of the scored series, floored like instance norm."""
    return np.maximum(series.values.std(axis=0), eps) ** 2
