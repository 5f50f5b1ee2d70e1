"""Versioned JSON checkpoints: parameters, optimizer moments, RNG states, config."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Module

FORMAT = "mmtsad-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "values": a.reshape(-1).tolist()}


def _unarray(obj: dict) -> np.ndarray:
    return np.asarray(obj["values"], dtype=np.float64).reshape(obj["shape"])


def save_checkpoint(path: str | Path, model: Module, meta: dict, adam: dict | None = None,
                    rng: dict | None = None) -> None:
    """Write a checkpoint.

    ``adam`` is a serialized optimizer state and ``rng`` maps stream names to
    bit-generator states. JSON floats use shortest round-trip repr, so values
    reload exactly.
    """
    params = {name: _array(p.data) for name, p in model.named_parameters()}
    body = {"format": FORMAT, "version": VERSION, "meta": meta, "params": params}
    if adam is not None:
        body["adam"] = adam
    if rng is not None:
        body["rng"] = rng
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(body, fh)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            body = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if body.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if body.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {body.get('version')}")
    body["params"] = {k: _unarray(v) for k, v in body["params"].items()}
    return body


def restore_params(model: Module, params: dict[str, np.ndarray]) -> None:
    """Copy stored arrays into ``model``; every mismatch is reported at once."""
    own = model.parameters()
    problems = []
    for name, p in own.items():
        if name not in params:
            problems.append(f"{name}: missing")
        elif params[name].shape != p.data.shape:
            problems.append(f"{name}: checkpoint {params[name].shape} vs model {p.data.shape}")
    problems += [f"{name}: unexpected" for name in params if name not in own]
    if problems:
        raise CheckpointError("parameter mismatch: " + "; ".join(problems))
    for name, p in own.items():
        p.data[...] = params[name]
