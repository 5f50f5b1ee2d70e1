"""Multimodal time-series anomaly detection on a small numpy autodiff core."""

from .config import ABLATIONS, RunConfig, apply_ablation
from .data import SeriesDataset, TextDoc, load_series, load_text
from .metrics import evaluate
from .pipeline import score_series, train
from .synth import synth_multimodal

__version__ = "0.1.0"

__all__ = ["ABLATIONS", "RunConfig", "SeriesDataset", "TextDoc", "apply_ablation", "evaluate", "load_series",
           "load_text", "score_series", "synth_multimodal", "train"]
