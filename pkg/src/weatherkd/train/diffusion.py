"""Denoiser pretraining: noise prediction over degraded-image latents,
conditioned on learned per-kind class tokens with unconditional dropout."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..checkpoint import Checkpoint
from ..config import RunConfig
from ..degrade import DomainProfile, apply_degradation, sample_spec
from ..diffusion.schedule import NoiseSchedule
from ..errors import PipelineError
from ..models.autoencoder import TinyAutoencoder
from ..models.unet import ClassTokenBank, CondUNet
from ..utils import derive_seed, torch_generator
from .autoencoder import load_autoencoder
from .common import TrainLogger, epoch_batches, freeze, manifest_images

AUGMENT_PER_CLEAN = 2  # degraded variants rendered per clean source image


def degraded_training_set(clean_manifests, profile: DomainProfile, kinds,
                          seed: int, per_clean: int = AUGMENT_PER_CLEAN) -> tuple:
    """Render labeled degraded images from clean train images.

    Returns (images NCHW float32 tensor, kind index list). Per-slot RNG keys
    make the set reproducible and order-independent."""
    kind_index = {k: i for i, k in enumerate(kinds)}
    images, labels = [], []
    slot = 0
    for m in clean_manifests:
        clean, _ = manifest_images(m, "clean", "train")
        for img in clean:
            arr = img.permute(1, 2, 0).numpy().astype(np.float64)
            for _ in range(per_clean):
                spec = sample_spec(profile, derive_seed(seed, "diff-spec", slot))
                out = apply_degradation(arr, spec, derive_seed(seed, "diff-render", slot))
                images.append(out.astype(np.float32))
                labels.append(kind_index[spec.kind])
                slot += 1
    batch = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).contiguous()
    return batch, labels


def train_diffusion(clean_manifests, profile: DomainProfile, ae_ckpt: Checkpoint,
                    config: RunConfig, log_path=None) -> Checkpoint:
    """Train the conditional denoiser in the frozen autoencoder's latent space.

    The resulting checkpoint embeds a copy of the autoencoder weights so
    downstream stages need only this file to generate images."""
    if ae_ckpt.kind != "autoencoder":
        raise PipelineError(f"expected an autoencoder checkpoint, got {ae_ckpt.kind!r}")
    cfg = config.diffusion
    kinds = tuple(config.corpus.kinds)
    ae = freeze(load_autoencoder(ae_ckpt))
    schedule = NoiseSchedule(cfg.T, ddim_steps=cfg.ddim_steps)

    torch.manual_seed(derive_seed(config.seed, "diffusion", "init"))
    unet = CondUNet(ae.latent_channels, cfg.base_width,
                    prompt_dim=config.adapter.d_p, time_dim=cfg.time_dim)
    bank = ClassTokenBank(kinds, l_p=config.adapter.l_p, d_p=config.adapter.d_p)
    gen = torch_generator(derive_seed(config.seed, "diffusion", "steps"))

    images, labels = degraded_training_set(
        clean_manifests, profile, kinds, derive_seed(config.seed, "diffusion", "data"))
    with torch.no_grad():
        latents = torch.cat([
            ae.scaled_encode(images[i : i + cfg.batch_size])
            for i in range(0, len(images), cfg.batch_size)
        ])
    labels = torch.tensor(labels, dtype=torch.long)

    params = list(unet.parameters()) + list(bank.parameters())
    optim = torch.optim.Adam(params, lr=cfg.lr)
    logger = TrainLogger(log_path)
    step = 0
    for epoch in range(cfg.epochs):
        for idx in epoch_batches(len(latents), cfg.batch_size, gen):
            z0 = latents[idx]
            t = torch.randint(1, schedule.T + 1, (len(idx),), generator=gen)
            eps = torch.empty_like(z0).normal_(generator=gen)
            z_t = schedule.forward_diffuse(z0, t, eps)
            token_idx = labels[idx].clone()
            drop = torch.rand(len(idx), generator=gen) < cfg.cond_dropout
            token_idx[drop] = bank.null_index
            pred = unet(z_t, t, bank(token_idx))
            loss = nn.functional.mse_loss(pred, eps)
            optim.zero_grad()
            loss.backward()
            optim.step()
            logger.log(step=step, epoch=epoch, loss=float(loss.item()), lr=cfg.lr)
            step += 1
    logger.close()

    ckpt = Checkpoint(
        kind="diffusion",
        fingerprint=config.fingerprint,
        step=step,
        metrics={"final_loss": float(loss.item())},
        meta={
            "schedule": schedule.to_meta(),
            "kinds": list(kinds),
            "base_width": cfg.base_width,
            "time_dim": cfg.time_dim,
            "prompt_dim": config.adapter.d_p,
            "l_p": config.adapter.l_p,
            "ae": dict(ae_ckpt.meta),
            "image_size": config.image_size,
        },
    )
    ckpt.put_state_dict("unet", unet)
    ckpt.put_state_dict("bank", bank)
    ckpt.put_state_dict("ae", ae)
    return ckpt


def load_diffusion(ckpt: Checkpoint) -> tuple:
    """Rebuild (ae, unet, bank, schedule) from a diffusion checkpoint, frozen."""
    if ckpt.kind != "diffusion":
        raise PipelineError(f"expected a diffusion checkpoint, got {ckpt.kind!r}")
    meta = ckpt.meta
    ae = TinyAutoencoder(meta["ae"]["base_width"], meta["ae"]["latent_channels"])
    ckpt.load_module("ae", ae)
    unet = CondUNet(ae.latent_channels, meta["base_width"],
                    prompt_dim=meta["prompt_dim"], time_dim=meta["time_dim"])
    ckpt.load_module("unet", unet)
    bank = ClassTokenBank(meta["kinds"], l_p=meta["l_p"], d_p=meta["prompt_dim"])
    ckpt.load_module("bank", bank)
    schedule = NoiseSchedule.from_meta(meta["schedule"])
    return freeze(ae), freeze(unet), freeze(bank), schedule
