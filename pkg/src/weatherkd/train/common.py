"""Shared training utilities: JSONL logs, batching, schedules."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..errors import ValidationError
from ..utils import stable_json


class TrainLogger:
    """Line-delimited JSON training log; one record per step."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self._fh = None

    def log(self, **fields) -> None:
        self.records.append(fields)
        if self._fh is not None:
            self._fh.write(stable_json(fields) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def halved_lr(base_lr: float, epoch: int, halve_every: int) -> float:
    """Step decay: halve the rate every `halve_every` epochs."""
    return base_lr * 0.5 ** (epoch // halve_every)


def set_lr(optim: torch.optim.Optimizer, lr: float) -> None:
    for group in optim.param_groups:
        group["lr"] = lr


def deciles_decreasing(values) -> bool:
    """True when the mean of the first tenth exceeds the mean of the last tenth."""
    values = np.asarray(list(values), dtype=np.float64)
    if len(values) < 10:
        raise ValidationError(f"need >= 10 values for a decile check, got {len(values)}")
    n = max(len(values) // 10, 1)
    return float(values[:n].mean()) > float(values[-n:].mean())


def epoch_batches(n_items: int, batch_size: int, generator: torch.Generator) -> list:
    """Shuffled index batches covering all items once (last batch may be short)."""
    order = torch.randperm(n_items, generator=generator).tolist()
    return [order[i : i + batch_size] for i in range(0, n_items, batch_size)]


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def manifest_images(manifest, role: str, split: str | None = None) -> tuple:
    """Load a manifest's images of one role into a float32 torch batch.

    Returns (batch NCHW in [0,1], records)."""
    records = manifest.select(role=role, split=split)
    if not records:
        raise ValidationError(f"manifest has no {role!r} records in split {split!r}")
    imgs = np.stack([manifest.load_image(r) for r in records])
    batch = torch.from_numpy(imgs.astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    return batch, records
