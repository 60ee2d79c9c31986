"""Per-object field checkpoints and the training log."""

from __future__ import annotations

import csv
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from ..tensor_io import read_checkpoint, write_checkpoint
from .network import FieldNetwork

FORMAT = "objmap-field/1"


def save_field(path: str | PathLike, field: FieldNetwork, with_optimizer: bool = True) -> None:
    header = {
        "format": FORMAT,
        "object_id": int(field.object_id),
        "n_freqs": int(field.n_freqs),
        "hidden": int(field.hidden),
        "n_layers": int(field.n_layers),
        "D_e": int(field.feat_dim),
        "center": [float(x) for x in field.center],
        "half_extent": [float(x) for x in field.half_extent],
        "trained_steps": int(field.trained_steps),
        "adam_t": int(field.opt_state["t"]) if with_optimizer and field.opt_state else 0,
    }
    tensors = dict(field.params)
    if with_optimizer and field.opt_state:
        for moment in ("m", "v"):
            tensors.update({f"adam_{moment}/{k}": a for k, a in field.opt_state[moment].items()})
    write_checkpoint(path, header, tensors)


def load_field(path: str | PathLike) -> FieldNetwork:
    meta, tensors = read_checkpoint(path)
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: not a field checkpoint")
    params = {k: v for k, v in tensors.items() if "/" not in k}
    field = FieldNetwork(params, np.asarray(meta["center"]), np.asarray(meta["half_extent"]),
                         meta["n_freqs"], meta["hidden"], meta["n_layers"], meta["D_e"],
                         meta["object_id"], meta["trained_steps"])
    if meta["adam_t"]:
        field.opt_state = {"t": meta["adam_t"],
                           "m": {k: tensors[f"adam_m/{k}"] for k in params},
                           "v": {k: tensors[f"adam_v/{k}"] for k in params}}
    return field


def checkpoint_name(object_id: int) -> str:
    return f"object_{object_id}.obck"


def save_fields(directory: str | PathLike, fields: Sequence[FieldNetwork]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in fields:
        p = directory / checkpoint_name(f.object_id)
        save_field(p, f)
        paths.append(p)
    return paths


def load_fields(directory: str | PathLike) -> list[FieldNetwork]:
    paths = sorted(Path(directory).glob("object_*.obck"), key=lambda p: int(p.stem.split("_")[1]))
    return [load_field(p) for p in paths]


def write_training_log(path: str | PathLike, history: np.ndarray, object_ids: Sequence[int]) -> None:
    """One row per (step, object): total and the four unweighted terms."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "object_id", "total", "occ", "depth", "color", "feat"])
        for step in range(history.shape[0]):
            for k, oid in enumerate(object_ids):
                w.writerow([step, oid] + [f"{x:.9g}" for x in history[step, k]])
