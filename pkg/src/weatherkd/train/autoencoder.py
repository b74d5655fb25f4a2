"""Autoencoder pretraining: pixel reconstruction plus a small latent penalty."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..checkpoint import Checkpoint
from ..config import RunConfig
from ..metrics import psnr
from ..models.autoencoder import TinyAutoencoder
from ..utils import derive_seed, torch_generator
from .common import TrainLogger, epoch_batches, manifest_images


def train_autoencoder(manifests, config: RunConfig, log_path=None) -> Checkpoint:
    """Fit the latent autoencoder on every train-split image (clean and
    degraded) of the given manifests; gate metric is reconstruction PSNR on
    held-out clean images."""
    cfg = config.autoencoder
    torch.manual_seed(derive_seed(config.seed, "ae", "init"))
    model = TinyAutoencoder(cfg.base_width, cfg.latent_channels)
    gen = torch_generator(derive_seed(config.seed, "ae", "batches"))

    train_parts, held_out = [], []
    for m in manifests:
        for role in ("clean", "degraded"):
            if m.select(role=role, split="train"):
                train_parts.append(manifest_images(m, role, "train")[0])
        if m.select(role="clean", split="test"):
            held_out.append(manifest_images(m, "clean", "test")[0])
    data = torch.cat(train_parts)
    held = torch.cat(held_out)

    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    logger = TrainLogger(log_path)
    step = 0
    for epoch in range(cfg.epochs):
        for idx in epoch_batches(len(data), cfg.batch_size, gen):
            batch = data[idx]
            z = model.encode(batch)
            recon = model.decode(z)
            loss = nn.functional.mse_loss(recon, batch) + cfg.latent_reg * z.pow(2).mean()
            optim.zero_grad()
            loss.backward()
            optim.step()
            logger.log(step=step, epoch=epoch, loss=float(loss.item()), lr=cfg.lr)
            step += 1
    logger.close()

    model.eval()
    with torch.no_grad():
        latents = torch.cat([
            model.encode(data[i : i + cfg.batch_size])
            for i in range(0, len(data), cfg.batch_size)
        ])
        model.latent_scale.fill_(1.0 / latents.std().clamp_min(1e-6))
        recon_psnrs = []
        for i in range(0, len(held), cfg.batch_size):
            batch = held[i : i + cfg.batch_size]
            recon = model(batch)
            recon_psnrs.extend(
                psnr(r.permute(1, 2, 0).numpy(), b.permute(1, 2, 0).numpy())
                for r, b in zip(recon, batch))

    ckpt = Checkpoint(
        kind="autoencoder",
        fingerprint=config.fingerprint,
        step=step,
        metrics={
            "recon_psnr_db": float(np.mean(recon_psnrs)),
            "final_loss": float(loss.item()),
        },
        meta={
            "base_width": cfg.base_width,
            "latent_channels": cfg.latent_channels,
            "image_size": config.image_size,
        },
    )
    ckpt.put_state_dict("ae", model)
    return ckpt


def load_autoencoder(ckpt: Checkpoint) -> TinyAutoencoder:
    model = TinyAutoencoder(ckpt.meta["base_width"], ckpt.meta["latent_channels"])
    ckpt.load_module("ae", model)
    model.eval()
    return model
