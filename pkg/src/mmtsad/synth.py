"""Synthetic multimodal corpora: sinusoids with injected anomalies plus text."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import SeriesDataset, TextDoc, write_series, write_text

KINDS = ("spike", "level_shift", "frequency_shift")
_LENGTHS = {"spike": (1, 3), "level_shift": (10, 30), "frequency_shift": (20, 40)}

_INFORMATIVE = {
    "spike": [
        "sensor report: sudden spike detected in the readings",
        "alert: abrupt spike in measured values",
        "field note: short sharp spike observed on the line",
    ],
    "level_shift": [
        "sensor report: sustained level shift in the readings",
        "alert: baseline offset jumped and held at a new level",
        "field note: level shift observed after recalibration fault",
    ],
    "frequency_shift": [
        "sensor report: oscillation frequency changed abruptly",
        "alert: cycle rate altered, frequency shift in progress",
        "field note: unusual fast oscillation, frequency shift observed",
    ],
}

_DISTRACTORS = [
    "quarterly budget meeting scheduled for the finance team",
    "office maintenance notice: elevator inspection this week",
    "weather outlook mild with scattered clouds",
    "newsletter: employee volunteering day announced",
    "cafeteria menu updated with seasonal dishes",
    "reminder to renew parking permits",
    "holiday schedule published for next month",
    "software license renewal processed by procurement",
]


@dataclass
class Event:
    kind: str
    start: int
    length: int
    doc_index: int | None = None


@dataclass
class SynthCorpus:
    dataset: SeriesDataset
    docs: list[TextDoc]
    events: list[Event]

    def __iter__(self):
        return iter((self.dataset, self.docs, self.events))

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_series(self.dataset, out / "series.csv")
        write_text(self.docs, out / "text.jsonl")
        with open(out / "events.json", "w") as fh:
            json.dump([asdict(e) for e in self.events], fh, indent=1)
            fh.write("\n")


def synth_multimodal(seed: int = 0, n_points: int = 2000, anomaly_kinds=KINDS,
                     anomaly_ratio: float = 0.05, text_profile: str = "informative",
                     distractor_rate: float = 0.0, n_channels: int = 1,
                     t0: float = 1.7e9, dt: float = 3600.0, min_gap: int = 20) -> SynthCorpus:
    """Generate a labeled series, its text documents and the event ledger.

    Anomaly magnitudes are in units of the clean signal's standard deviation
    per channel. ``distractor_rate`` is the number of unrelated documents per
    injected event. ``text_profile`` is ``"informative"`` (one doc naming each
    event's kind) or ``"none"``.
    """
    if n_points < 200:
        raise ValueError("n_points must be at least 200")
    if text_profile not in ("informative", "none"):
        raise ValueError(f"unknown text profile {text_profile!r}")
    for k in anomaly_kinds:
        if k not in KINDS:
            raise ValueError(f"unknown anomaly kind {k!r}")
    rng = np.random.default_rng(seed)
    t = np.arange(n_points, dtype=np.float64)
    periods = np.stack([rng.uniform(40, 60, n_channels), rng.uniform(12, 20, n_channels)], axis=1)
    phases = rng.uniform(0, 2 * np.pi, size=(n_channels, 2))
    amps = np.array([1.0, 0.5])
    clean = np.zeros((n_points, n_channels))
    for c in range(n_channels):
        for j in range(2):
            clean[:, c] += amps[j] * np.sin(2 * np.pi * t / periods[c, j] + phases[c, j])
    sigma = clean.std(axis=0)
    values = clean + rng.normal(0.0, 0.1, size=clean.shape)
    labels = np.zeros(n_points, dtype=np.int64)

    events: list[Event] = []
    target = int(math.ceil(anomaly_ratio * n_points - 1e-9)) if anomaly_kinds else 0
    taken = np.zeros(n_points, dtype=bool)
    attempts = 0
    shortest = min((_LENGTHS[k][0] for k in anomaly_kinds), default=1)
    while labels.sum() < target and attempts < 10000:
        attempts += 1
        remaining = target - int(labels.sum())
        if remaining < shortest:
            break
        kind = anomaly_kinds[rng.integers(len(anomaly_kinds))]
        lo, hi = _LENGTHS[kind]
        length = int(rng.integers(lo, hi + 1))
        if remaining < lo:
            continue
        length = min(length, remaining)
        start = int(rng.integers(min_gap, n_points - length - min_gap))
        if taken[max(0, start - min_gap):start + length + min_gap].any():
            continue
        taken[start:start + length] = True
        labels[start:start + length] = 1
        seg = slice(start, start + length)
        if kind == "spike":
            values[seg] += 5.0 * sigma
        elif kind == "level_shift":
            values[seg] += 3.0 * sigma
        else:
            tt = t[seg]
            fast = np.zeros((length, n_channels))
            for c in range(n_channels):
                fast[:, c] = amps.sum() * np.sin(2 * np.pi * tt / 4.0 + phases[c, 0])
            values[seg] = fast + rng.normal(0.0, 0.1, size=fast.shape)
        events.append(Event(kind, start, length))
    events.sort(key=lambda e: e.start)

    stamps = t0 + dt * t
    docs: list[TextDoc] = []
    if text_profile == "informative":
        for e in events:
            pad_l, pad_r = rng.integers(0, 4, size=2)
            s = max(0, e.start - int(pad_l))
            f = min(n_points - 1, e.start + e.length - 1 + int(pad_r))
            phrase = _INFORMATIVE[e.kind][rng.integers(len(_INFORMATIVE[e.kind]))]
            docs.append(TextDoc(float(stamps[s]), float(stamps[f]), phrase))
        n_distract = int(round(distractor_rate * len(events)))
        for _ in range(n_distract):
            span = int(rng.integers(5, 31))
            s = int(rng.integers(0, n_points - span))
            docs.append(TextDoc(float(stamps[s]), float(stamps[s + span - 1]),
                                _DISTRACTORS[rng.integers(len(_DISTRACTORS))]))
    order = sorted(range(len(docs)), key=lambda i: (docs[i].start, docs[i].end, i))
    docs = [docs[i] for i in order]
    if text_profile == "informative":
        pos = {old: new for new, old in enumerate(order)}
        for i, e in enumerate(events):
            e.doc_index = pos[i]
    ds = SeriesDataset(values, stamps, labels, [f"v{c}" for c in range(n_channels)])
    return SynthCorpus(ds, docs, events)
