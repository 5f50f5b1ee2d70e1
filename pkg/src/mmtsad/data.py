"""Series and text ingestion, windowing, and window-to-document matching."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np


class ParseError(ValueError):
    """Malformed input file; ``row`` is the 1-based data row (or line) number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class ConfigError(ValueError):
    pass


@dataclass
class SeriesDataset:
    values: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray | None = None
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        T, D = self.values.shape
        if T < 1 or D < 1:
            raise ValueError("dataset needs at least one row and one channel")
        if self.timestamps.shape != (T,):
            raise ValueError("timestamps must have one entry per row")
        if T > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (T,) or not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be a length-T 0/1 sequence")
        if not self.columns:
            self.columns = [f"v{i}" for i in range(D)]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesDataset":
        labels = None if self.labels is None else self.labels[start:stop]
        return SeriesDataset(self.values[start:stop], self.timestamps[start:stop], labels, list(self.columns))

    def split(self, train_fraction: float) -> tuple["SeriesDataset", "SeriesDataset"]:
        cut = int(round(self.length * train_fraction))
        return self.slice(0, cut), self.slice(cut, self.length)


@dataclass
class TextDoc:
    start: float
    end: float
    text: str = ""
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"document start {self.start} is after its end {self.end}")
        if self.embedding is None and not self.text.strip():
            raise ValueError("document needs text or an embedding")
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=np.float64)

    def overlap(self, t0: float, t1: float) -> float:
        """Length of the intersection with ``[t0, t1]``, or -1 when disjoint."""
        lo, hi = max(self.start, t0), min(self.end, t1)
        return hi - lo if hi >= lo else -1.0

    def to_json(self) -> dict:
        d: dict = {"start": self.start, "end": self.end}
        if self.text:
            d["text"] = self.text
        if self.embedding is not None:
            d["embedding"] = self.embedding.tolist()
        return d


@dataclass
class WindowSpec:
    window_length: int = 96
    stride: int = 96
    patch_size: int = 6
    patch_stride: int = 6
    mask_ratio: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        w, s, p, l = self.window_length, self.stride, self.patch_size, self.patch_stride
        if w < 2 or s < 1:
            raise ConfigError("window_length must be >= 2 and stride >= 1")
        if p < 1 or p > w:
            raise ConfigError(f"patch_size {p} must be in [1, window_length={w}]")
        if l < 1:
            raise ConfigError("patch_stride must be >= 1")
        if (w - p) % l != 0:
            raise ConfigError(f"(window_length - patch_size) = {w - p} is not divisible by patch_stride {l}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1]")

    @property
    def num_patches(self) -> int:
        return (self.window_length - self.patch_size) // self.patch_stride + 1


@dataclass
class RawWindow:
    start: int
    values: np.ndarray
    t_start: float
    t_end: float
    labels: np.ndarray | None = None


def _parse_time(cell: str, row: int) -> float:
    try:
        return float(cell)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(cell.strip())
    except ValueError:
        raise ParseError(f"unparseable timestamp {cell!r}", row) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_series(path: str | Path) -> SeriesDataset:
    """Read a CSV with a ``timestamp`` column, value columns and optional ``label``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file") from None
        if not header or header[0] != "timestamp":
            raise ParseError("first column must be 'timestamp'", 0)
        label_col = header.index("label") if "label" in header else None
        value_cols = [i for i in range(1, len(header)) if i != label_col]
        if not value_cols:
            raise ParseError("no value columns", 0)
        ts, vals, labels = [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(rec)}", r)
            ts.append(_parse_time(rec[0], r))
            row_vals = []
            for i in value_cols:
                try:
                    v = float(rec[i])
                except ValueError:
                    raise ParseError(f"non-numeric value {rec[i]!r} in column '{header[i]}'", r) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in column '{header[i]}'", r)
                row_vals.append(v)
            vals.append(row_vals)
            if label_col is not None:
                cell = rec[label_col].strip()
                if cell not in ("0", "1", "0.0", "1.0"):
                    raise ParseError(f"label {cell!r} is not 0 or 1", r)
                labels.append(int(float(cell)))
    if not ts:
        raise ParseError("no data rows")
    ts_arr = np.array(ts)
    order = np.argsort(ts_arr, kind="stable")
    if np.any(np.diff(ts_arr) < 0):
        warnings.warn(f"{path}: timestamps were not sorted; rows reordered", stacklevel=2)
    ts_arr = ts_arr[order]
    dup = np.nonzero(np.diff(ts_arr) == 0)[0]
    if dup.size:
        raise ParseError(f"duplicate timestamp {ts_arr[dup[0]]}", int(order[dup[0] + 1]) + 1)
    values = np.array(vals)[order]
    lab = np.array(labels)[order] if label_col is not None else None
    return SeriesDataset(values, ts_arr, lab, [header[i] for i in value_cols])


def write_series(ds: SeriesDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["timestamp", *ds.columns] + (["label"] if ds.labels is not None else [])
        w.writerow(head)
        for t in range(ds.length):
            row = [repr(float(ds.timestamps[t]))] + [repr(float(v)) for v in ds.values[t]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[t])))
            w.writerow(row)


def load_text(path: str | Path, d_model: int | None = None) -> list[TextDoc]:
    """Read JSONL documents; embeddings, when present, must have length ``d_model``."""
    docs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict) or "start" not in obj or "end" not in obj:
                raise ParseError("each line needs 'start' and 'end'", line_no)
            start = _parse_time(str(obj["start"]), line_no)
            end = _parse_time(str(obj["end"]), line_no)
            if start > end:
                raise ParseError(f"start {start} is after end {end}", line_no)
            emb = obj.get("embedding")
            if emb is not None:
                emb = np.asarray(emb, dtype=np.float64)
                if emb.ndim != 1 or (d_model is not None and emb.shape[0] != d_model):
                    raise ParseError(f"embedding length {emb.size} != d_model {d_model}", line_no)
            text = obj.get("text") or ""
            if emb is None and not str(text).strip():
                raise ParseError("document has neither text nor embedding", line_no)
            docs.append(TextDoc(start, end, str(text), emb))
    docs.sort(key=lambda d: (d.start, d.end))
    return docs


def write_text(docs: Sequence[TextDoc], path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_json()) + "\n")


def make_windows(ds: SeriesDataset, spec: WindowSpec, stride: int | None = None) -> list[RawWindow]:
    w = spec.window_length
    s = spec.stride if stride is None else stride
    if w > ds.length:
        raise ConfigError(f"window length {w} exceeds series length {ds.length}")
    out = []
    for start in range(0, ds.length - w + 1, s):
        labels = None if ds.labels is None else ds.labels[start:start + w]
        out.append(RawWindow(start, ds.values[start:start + w], float(ds.timestamps[start]),
                             float(ds.timestamps[start + w - 1]), labels))
    return out


def select_docs(docs: Sequence[TextDoc], t0: float, t1: float, k_max: int = 8) -> list[int]:
    """Indices of docs intersecting ``[t0, t1]``, most-overlapping first.

    Ties on overlap length go to the earlier start; at most ``k_max`` are kept.
    """
    hits = []
    for i, d in enumerate(docs):
        ov = d.overlap(t0, t1)
        if ov >= 0:
            hits.append((-ov, d.start, i))
    hits.sort()
    return [i for _, _, i in hits[:k_max]]
