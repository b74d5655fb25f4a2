"""Teacher pretraining on paired degraded/clean data with an L1 objective."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..checkpoint import Checkpoint
from ..config import RunConfig
from ..errors import ManifestError
from ..metrics import psnr
from ..models.restoration import RestorationNet, restore
from ..utils import derive_seed, torch_generator
from .common import TrainLogger, epoch_batches, halved_lr, set_lr


def _paired_batches(manifest, split: str) -> tuple:
    pairs = manifest.pairs(split=split)
    if not pairs:
        raise ManifestError(f"paired manifest has no {split!r} pairs")
    clean = np.stack([manifest.load_image(c) for c, _ in pairs]).astype(np.float32)
    degraded = np.stack([manifest.load_image(d) for _, d in pairs]).astype(np.float32)
    to_t = lambda a: torch.from_numpy(a).permute(0, 3, 1, 2).contiguous()
    return to_t(clean), to_t(degraded)


def pretrain_teacher(paired_manifest, config: RunConfig, log_path=None) -> Checkpoint:
    if not paired_manifest.is_paired:
        raise ManifestError("teacher pretraining requires a paired manifest")
    cfg = config.teacher
    clean, degraded = _paired_batches(paired_manifest, "train")

    torch.manual_seed(derive_seed(config.seed, "teacher", "init"))
    net = RestorationNet(cfg.base_width, cfg.depth, cfg.scales, role="teacher")
    gen = torch_generator(derive_seed(config.seed, "teacher", "batches"))
    optim = torch.optim.Adam(net.parameters(), lr=cfg.lr)

    logger = TrainLogger(log_path)
    step = 0
    for epoch in range(cfg.epochs):
        lr = halved_lr(cfg.lr, epoch, cfg.lr_halving_every)
        set_lr(optim, lr)
        for idx in epoch_batches(len(clean), cfg.batch_size, gen):
            out = net(degraded[idx])
            loss = nn.functional.l1_loss(out, clean[idx])
            optim.zero_grad()
            loss.backward()
            optim.step()
            logger.log(step=step, epoch=epoch, loss=float(loss.item()), lr=lr)
            step += 1
    logger.close()

    net.eval()
    test_clean, test_degraded = _paired_batches(paired_manifest, "test")
    with torch.no_grad():
        restored = restore(net, test_degraded)
    as_img = lambda t: t.permute(1, 2, 0).numpy()
    test_psnr = float(np.mean([
        psnr(as_img(r), as_img(c)) for r, c in zip(restored, test_clean)]))
    degraded_psnr = float(np.mean([
        psnr(as_img(d), as_img(c)) for d, c in zip(test_degraded, test_clean)]))

    ckpt = Checkpoint(
        kind="teacher",
        fingerprint=config.fingerprint,
        step=step,
        metrics={
            "test_psnr_db": test_psnr,
            "degraded_psnr_db": degraded_psnr,
            "final_loss": float(loss.item()),
        },
        meta={
            "base_width": cfg.base_width,
            "depth": cfg.depth,
            "scales": cfg.scales,
            "role": "teacher",
            "image_size": config.image_size,
        },
    )
    ckpt.put_state_dict("net", net)
    return ckpt


def load_restoration_net(ckpt: Checkpoint) -> RestorationNet:
    meta = ckpt.meta
    net = RestorationNet(meta["base_width"], meta["depth"], meta["scales"],
                         role=meta.get("role", "teacher"))
    ckpt.load_module("net", net)
    net.eval()
    return net
