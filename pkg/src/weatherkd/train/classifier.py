"""Degradation-kind classifier training (the conditioning probe)."""

from __future__ import annotations

import torch
from torch import nn

from ..checkpoint import Checkpoint
from ..config import RunConfig
from ..degrade import DomainProfile
from ..models.classifier import KindClassifier
from ..utils import derive_seed, torch_generator
from .common import epoch_batches
from .diffusion import degraded_training_set

CLASSIFIER_EPOCHS = 60
CLASSIFIER_WIDTH = 32
CLASSIFIER_PER_CLEAN = 6


def train_kind_classifier(clean_manifests, profile: DomainProfile,
                          config: RunConfig, seed: int) -> tuple:
    """Train a fresh classifier on labeled synthetic degradations.

    seed varies the init and data draw so repeated probes are independent.
    Returns (classifier, holdout_accuracy)."""
    kinds = tuple(config.corpus.kinds)
    images, labels = degraded_training_set(
        clean_manifests, profile, kinds, derive_seed(seed, "classifier", "data"),
        per_clean=CLASSIFIER_PER_CLEAN)
    labels = torch.tensor(labels, dtype=torch.long)
    n_hold = max(len(images) // 5, 1)
    train_x, train_y = images[:-n_hold], labels[:-n_hold]
    hold_x, hold_y = images[-n_hold:], labels[-n_hold:]

    torch.manual_seed(derive_seed(seed, "classifier", "init"))
    clf = KindClassifier(kinds, width=CLASSIFIER_WIDTH)
    gen = torch_generator(derive_seed(seed, "classifier", "batches"))
    optim = torch.optim.Adam(clf.parameters(), lr=2e-3)
    for epoch in range(CLASSIFIER_EPOCHS):
        for group in optim.param_groups:
            group["lr"] = 2e-3 * 0.5 ** (epoch // 20)
        for idx in epoch_batches(len(train_x), 32, gen):
            loss = nn.functional.cross_entropy(clf(train_x[idx]), train_y[idx])
            optim.zero_grad()
            loss.backward()
            optim.step()

    clf.eval()
    with torch.no_grad():
        acc = float((clf(hold_x).argmax(1) == hold_y).float().mean())
    return clf, acc


def classifier_checkpoint(clf: KindClassifier, config: RunConfig, acc: float) -> Checkpoint:
    ckpt = Checkpoint(
        kind="classifier",
        fingerprint=config.fingerprint,
        metrics={"holdout_accuracy": acc},
        meta={"kinds": list(clf.kinds)},
    )
    ckpt.put_state_dict("clf", clf)
    return ckpt
