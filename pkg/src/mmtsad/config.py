"""Run configuration: one JSON file with data/model/condenser/train/eval sections."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import ConfigError, WindowSpec


@dataclass
class DataConfig:
    series: str | None = None
    text: str | None = None
    window_length: int = 96
    train_stride: int = 6
    score_stride: int = 1
    patch_size: int = 6
    patch_stride: int = 6
    train_fraction: float = 0.7
    k_max: int = 8
    embedding_dim: int | None = None


@dataclass
class ModelConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    vocab_size: int = 4096
    max_tokens: int = 32
    mask_ratio: float = 0.5
    infer_mask_ratio: float = 0.5
    score_scale: str = "series"
    tau: float = 0.07
    symmetric_denominator: bool = True
    exo_mode: str = "tokens"
    use_exo: bool = True
    use_endo: bool = True
    cross_modal: bool = True
    reversed_order: bool = False
    drop_minmaxmedian: bool = False
    drop_trend: bool = False
    drop_lag: bool = False
    template_variant: bool = False


@dataclass
class CondenserConfig:
    enabled: bool = True
    mu: float = 0.5
    infer_mask: str = "hard"
    use_smoothness: bool = True
    variant: bool = False


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    use_alignment: bool = True
    rec_sum: bool = False


@dataclass
class EvalConfig:
    threshold_ratio: float | None = None
    vus_grid_size: int = 16
    range_alpha: float = 0.0
    range_bias: str = "flat"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    condenser: CondenserConfig = field(default_factory=CondenserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.validate()

    @property
    def window_spec(self) -> WindowSpec:
        d = self.data
        return WindowSpec(d.window_length, d.train_stride, d.patch_size, d.patch_stride, self.model.mask_ratio)

    def validate(self) -> None:
        self.window_spec.validate()
        m, c, t = self.model, self.condenser, self.train
        if m.d_model % m.heads:
            raise ConfigError(f"d_model {m.d_model} is not divisible by heads {m.heads}")
        if m.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= m.infer_mask_ratio <= 1.0:
            raise ConfigError("infer_mask_ratio must lie in [0, 1]")
        if m.score_scale not in ("series", "window"):
            raise ConfigError(f"score_scale must be 'series' or 'window', got {m.score_scale!r}")
        if m.exo_mode not in ("tokens", "pooled"):
            raise ConfigError(f"exo_mode must be 'tokens' or 'pooled', got {m.exo_mode!r}")
        if not 0.0 < c.mu < 1.0:
            raise ConfigError("condenser.mu must lie in (0, 1)")
        if c.infer_mask not in ("hard", "soft"):
            raise ConfigError("condenser.infer_mask must be 'hard' or 'soft'")
        if t.epochs < 1 or t.batch_size < 1 or t.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if not 0.0 < self.data.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.data.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        r = self.eval.threshold_ratio
        if r is not None and not 0.0 < r < 1.0:
            raise ConfigError("threshold_ratio must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, sub_cls in _SECTION_TYPES.items():
            body = raw.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section '{name}' must be an object")
            known = {f.name for f in dataclasses.fields(sub_cls)}
            bad = set(body) - known
            if bad:
                raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(bad))}")
            kwargs[name] = sub_cls(**body)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(raw)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(train={"epochs": 3})``."""
        raw = self.to_dict()
        for name, changes in sections.items():
            raw[name].update(changes)
        return RunConfig.from_dict(raw)


_SECTION_TYPES = {
    "data": DataConfig,
    "model": ModelConfig,
    "condenser": CondenserConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

ABLATIONS = {
    "full": {},
    "no-exo": {"model": {"use_exo": False}},
    "no-endo": {"model": {"use_endo": False}},
    "no-align": {"train": {"use_alignment": False}},
    "no-condenser": {"condenser": {"enabled": False}},
    "no-recon": {"model": {"cross_modal": False}},
    "reversed-order": {"model": {"reversed_order": True}},
    "no-L_SM": {"condenser": {"use_smoothness": False}},
    "condenser-variant": {"condenser": {"variant": True}},
}


def apply_ablation(config: RunConfig, name: str) -> RunConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    return config.replace(**ABLATIONS[name])
