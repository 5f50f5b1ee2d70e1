"""Command-line entry points: synth, train, detect, eval, ablate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ABLATIONS, RunConfig, apply_ablation
from .data import ConfigError, ParseError, SeriesDataset, load_series, load_text
from .metrics import METRIC_NAMES, MetricReport, evaluate
from .pipeline import DivergenceError, load_model, score_series, train
from .recon import CoverageError, threshold_labels
from .synth import KINDS, synth_multimodal

log = logging.getLogger("mmtsad")


class UsageError(ValueError):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(train={"seed": args.seed})
    return cfg


def _data_paths(args, cfg: RunConfig) -> tuple[str, str | None]:
    series = args.series or cfg.data.series
    if not series:
        raise UsageError("no series file: pass --series or set data.series in the config")
    return series, args.text or cfg.data.text


def _load_corpus(series_path: str, text_path: str | None, cfg: RunConfig):
    ds = load_series(series_path)
    docs = load_text(text_path, cfg.data.embedding_dim) if text_path else []
    return ds, docs


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args) -> None:
    kinds = tuple(args.kinds.split(",")) if args.kinds else KINDS
    corpus = synth_multimodal(seed=args.seed if args.seed is not None else 0, n_points=args.n_points,
                              anomaly_kinds=kinds, anomaly_ratio=args.anomaly_ratio,
                              text_profile=args.text_profile, distractor_rate=args.distractor_rate,
                              n_channels=args.channels)
    out = _out_dir(args)
    corpus.write(out)
    print(f"wrote {out / 'series.csv'} ({corpus.dataset.length} rows), "
          f"{len(corpus.docs)} docs, {len(corpus.events)} events")


def cmd_train(args) -> None:
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg = cfg.replace(train={"epochs": args.epochs})
    if args.ablate:
        cfg = apply_ablation(cfg, args.ablate)
    series_path, text_path = _data_paths(args, cfg)
    cfg = cfg.replace(data={"series": series_path, "text": text_path})
    ds, docs = _load_corpus(series_path, text_path, cfg)
    train_ds, _ = ds.split(cfg.data.train_fraction)
    out = _out_dir(args)
    cfg.save(out / "config.json")
    result = train(cfg, train_ds, docs, out_dir=out, resume=args.resume)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"final L_total {last['L_total']:.6f}; checkpoint {out / 'best.json'}")


def _write_scores(path: Path, ds: SeriesDataset, scores: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        has_labels = ds.labels is not None
        writer.writerow(["timestamp", "score"] + (["label"] if has_labels else []))
        for i in range(ds.length):
            row = [repr(float(ds.timestamps[i])), repr(float(scores[i]))]
            if has_labels:
                row.append(int(ds.labels[i]))
            writer.writerow(row)


def cmd_detect(args) -> None:
    base = RunConfig.load(args.config) if args.config else None
    model, cfg = load_model(args.checkpoint, base)
    if args.infer_mask_ratio is not None:
        model.config = cfg = cfg.replace(model={"infer_mask_ratio": args.infer_mask_ratio})
    series_path, text_path = _data_paths(args, cfg)
    ds, docs = _load_corpus(series_path, text_path, cfg)
    if args.split == "test":
        _, ds = ds.split(cfg.data.train_fraction)
    result = score_series(model, ds, docs, stride=args.stride)
    out = _out_dir(args)
    _write_scores(out / "scores.csv", ds, result.scores)
    msg = f"scored {ds.length} timestamps -> {out / 'scores.csv'}"
    if args.threshold_ratio is not None:
        flags = threshold_labels(result.scores, args.threshold_ratio)
        with open(out / "labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["timestamp", "label"])
            for t, f in zip(ds.timestamps, flags):
                writer.writerow([repr(float(t)), int(f)])
        msg += f"; {int(flags.sum())} flagged -> {out / 'labels.csv'}"
    print(msg)


def read_scores(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Timestamps, scores and (if present) labels from a score CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["timestamp", "score"]:
            raise ParseError(f"{path}: expected header 'timestamp,score[,label]'", 1)
        ts, sc, lab = [], [], []
        for row_no, row in enumerate(reader, start=2):
            try:
                ts.append(float(row[0]))
                sc.append(float(row[1]))
                if len(header) > 2:
                    lab.append(int(row[2]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: malformed row", row_no) from None
    labels = np.array(lab, dtype=np.int64) if len(header) > 2 else None
    return np.array(ts), np.array(sc), labels


def _labels_for(args, timestamps: np.ndarray, labels: np.ndarray | None) -> np.ndarray:
    if args.labels is None:
        if labels is None:
            raise UsageError("scores file has no label column; pass --labels")
        return labels
    ds = load_series(args.labels)
    if ds.labels is None:
        raise UsageError(f"{args.labels} has no label column")
    lookup = {float(t): int(l) for t, l in zip(ds.timestamps, ds.labels)}
    try:
        return np.array([lookup[float(t)] for t in timestamps], dtype=np.int64)
    except KeyError as exc:
        raise UsageError(f"timestamp {exc.args[0]} has no label in {args.labels}") from None


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    ts, scores, labels = read_scores(args.scores)
    truth = _labels_for(args, ts, labels)
    ratio = args.threshold_ratio if args.threshold_ratio is not None else cfg.eval.threshold_ratio
    report = evaluate(scores, truth, ratio, range_alpha=cfg.eval.range_alpha,
                      range_bias=cfg.eval.range_bias, grid_size=cfg.eval.vus_grid_size)
    out = _out_dir(args)
    with open(out / "metrics.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    print(json.dumps(report.to_dict()))


def run_ablation(cfg: RunConfig, ds: SeriesDataset, docs, variants=None, out: Path | None = None,
                 ) -> dict[str, MetricReport]:
    """Train and score each variant with the same seed and data."""
    train_ds, test_ds = ds.split(cfg.data.train_fraction)
    if test_ds.labels is None:
        raise UsageError("ablation needs a labelled series")
    reports = {}
    for name in variants or ABLATIONS:
        vcfg = apply_ablation(cfg, name)
        log.info("ablation variant %s", name)
        res = train(vcfg, train_ds, docs, out_dir=(out / name) if out else None)
        scores = score_series(res.model, test_ds, docs).scores
        reports[name] = evaluate(scores, test_ds.labels, cfg.eval.threshold_ratio,
                                 range_alpha=cfg.eval.range_alpha, range_bias=cfg.eval.range_bias,
                                 grid_size=cfg.eval.vus_grid_size)
    return reports


def cmd_ablate(args) -> None:
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg = cfg.replace(train={"epochs": args.epochs})
    out = _out_dir(args)
    if args.series or cfg.data.series:
        series_path, text_path = _data_paths(args, cfg)
        ds, docs = _load_corpus(series_path, text_path, cfg)
    else:
        corpus = synth_multimodal(seed=cfg.train.seed, n_points=4000, anomaly_kinds=("spike", "level_shift"))
        ds, docs = corpus.dataset, corpus.docs
    variants = args.variants.split(",") if args.variants else None
    for v in variants or []:
        if v not in ABLATIONS:
            raise ConfigError(f"unknown ablation {v!r}; choose from {', '.join(ABLATIONS)}")
    reports = run_ablation(cfg, ds, docs, variants, out)
    table = {name: rep.to_dict() for name, rep in reports.items()}
    with open(out / "ablation.json", "w") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", *METRIC_NAMES])
        for name, row in table.items():
            writer.writerow([name] + ["" if row[k] is None else f"{row[k]:.6f}" for k in METRIC_NAMES])
    width = max(len(n) for n in table)
    print(f"{'variant':<{width}}  " + "  ".join(f"{k:>6}" for k in ("A-R", "V-ROC", "V-PR", "Aff-F")))
    for name, row in table.items():
        cells = ["  n/a " if row[k] is None else f"{row[k]:6.3f}" for k in ("A-R", "V-ROC", "V-PR", "Aff-F")]
        print(f"{name:<{width}}  " + "  ".join(cells))


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="seed (overrides train.seed)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mmtsad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic series/text corpus")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--anomaly-ratio", type=float, default=0.05)
    p.add_argument("--kinds", help=f"comma list from {','.join(KINDS)}")
    p.add_argument("--text-profile", choices=("informative", "none"), default="informative")
    p.add_argument("--distractor-rate", type=float, default=0.0)
    p.add_argument("--channels", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on the leading split of a series")
    p.add_argument("--series")
    p.add_argument("--text")
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablate", choices=list(ABLATIONS))
    p.add_argument("--resume", help="last.json from an earlier run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="score a series with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series")
    p.add_argument("--text")
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--threshold-ratio", type=float)
    p.add_argument("--infer-mask-ratio", type=float)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="metrics for a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", help="series CSV with a label column (default: label column of --scores)")
    p.add_argument("--threshold-ratio", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    p.add_argument("--series")
    p.add_argument("--text")
    p.add_argument("--epochs", type=int)
    p.add_argument("--variants", help="comma list (default: all)")
    p.set_defaults(func=cmd_ablate)
    return parser


_EXPECTED = (ConfigError, ParseError, CheckpointError, DivergenceError, CoverageError, UsageError,
             OSError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _EXPECTED as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
