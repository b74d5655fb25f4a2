"""Distillation engine: losses, the two-stage schedule, generative and
direct-data training paths, and the ablation matrix.

Each generative step draws a batch of web degraded images x_bar and web clean
images y_bar, builds prompt tokens from x_bar (or class/content/null stand-ins),
synthesizes training images, and matches the student to the frozen teacher on
them. Stage 1 (epoch < e1) adds gamma * contrastive loss for the prompt
encoder; stage 2 keeps the encoder in the graph through generation only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from ..checkpoint import Checkpoint
from ..config import RunConfig
from ..diffusion.sampler import generate, generate_from_noise
from ..errors import ManifestError, PipelineError, ValidationError
from ..evaluate import score_restoration
from ..models.prompt import (
    DegradationPromptEncoder,
    MomentumEncoder,
    NegativeQueue,
    contrastive_loss,
)
from ..models.restoration import RestorationNet, param_count
from ..utils import derive_seed, torch_generator
from .common import TrainLogger, epoch_batches, freeze, halved_lr, manifest_images, set_lr
from .diffusion import load_diffusion
from .teacher import load_restoration_net

# ---------------------------------------------------------------------------
# losses


def kd_loss(teacher_out: torch.Tensor, student_out: torch.Tensor) -> torch.Tensor:
    """Pixel-wise distillation loss: mean squared difference over batch,
    channels, and pixels (resolution-independent by construction)."""
    if teacher_out.shape != student_out.shape:
        raise ValidationError(
            f"shape mismatch {tuple(teacher_out.shape)} vs {tuple(student_out.shape)}")
    return (teacher_out - student_out).pow(2).mean()


def joint_loss(kd, cl, gamma: float):
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    return kd + gamma * cl


def gamma_for_epoch(epoch: int, gamma0: float, e1: int) -> float:
    return gamma0 if epoch < e1 else 0.0


# ---------------------------------------------------------------------------
# variants


@dataclass(frozen=True)
class DistillVariant:
    name: str
    z0_source: str | None  # "pure_noise" | "ccd" | None (no generation)
    prompt_source: str | None  # "none" | "class" | "content" | "dpa" | None
    extra_paper: bool = False

    @property
    def generative(self) -> bool:
        return self.z0_source is not None


VARIANTS = {
    "m0": DistillVariant("m0", None, None),  # direct web-data distill
    "m1": DistillVariant("m1", "pure_noise", "class"),
    "m2": DistillVariant("m2", "pure_noise", "dpa"),
    "m3": DistillVariant("m3", "pure_noise", "content"),
    "m4": DistillVariant("m4", "ccd", "none"),
    "m5": DistillVariant("m5", "ccd", "class"),
    "d4ir": DistillVariant("d4ir", "ccd", "dpa"),
    "data": DistillVariant("data", None, None),  # direct original-domain distill
    "extra": DistillVariant("extra", "pure_noise", "none", extra_paper=True),
}

ABLATION_MATRIX = ("m0", "m1", "m2", "m3", "m4", "m5", "d4ir")


def get_variant(name: str) -> DistillVariant:
    if name not in VARIANTS:
        raise ValidationError(f"unknown variant {name!r}, have {sorted(VARIANTS)}")
    return VARIANTS[name]


# ---------------------------------------------------------------------------
# trainer


def _random_crops(batch: torch.Tensor, size: int, gen: torch.Generator) -> torch.Tensor:
    b, _, h, w = batch.shape
    ys = torch.randint(0, h - size + 1, (b,), generator=gen)
    xs = torch.randint(0, w - size + 1, (b,), generator=gen)
    return torch.stack([
        img[:, y : y + size, x : x + size] for img, y, x in zip(batch, ys, xs)])


class DistillTrainer:
    """Owns all mutable distillation state; checkpointable mid-run.

    Generative variants need the diffusion checkpoint; the direct variants
    (m0, data) train straight on `direct_manifest`'s degraded images.
    """

    def __init__(self, config: RunConfig, variant, teacher_ckpt: Checkpoint,
                 diffusion_ckpt: Checkpoint | None = None,
                 web_degraded_manifest=None, web_clean_manifest=None,
                 direct_manifest=None, seed: int = 0, log_path=None,
                 eval_manifest=None):
        if isinstance(variant, str):
            variant = get_variant(variant)
        self.config = config
        self.variant = variant
        self.seed = seed
        self.logger = TrainLogger(log_path)
        self.eval_manifest = eval_manifest
        dcfg = config.distill

        if teacher_ckpt is None:
            raise PipelineError("teacher checkpoint is required")
        self.teacher = freeze(load_restoration_net(teacher_ckpt))

        torch.manual_seed(derive_seed(config.seed, "student-init", seed))
        self.student = RestorationNet(
            config.teacher.base_width // 2, config.teacher.depth,
            config.teacher.scales, role="student")
        self.student.train()
        self.gen = torch_generator(derive_seed(config.seed, "distill", variant.name, seed))

        self.ae = self.unet = self.bank = self.schedule = None
        self.adapter = self.momentum = self.queue = None
        self.optim_adapter = None
        self.content_proj = None
        self._cache = None

        if variant.generative:
            if diffusion_ckpt is None:
                raise PipelineError(f"variant {variant.name!r} needs a diffusion checkpoint")
            if web_degraded_manifest is None or web_clean_manifest is None:
                raise PipelineError(f"variant {variant.name!r} needs web manifests")
            for m in (web_degraded_manifest, web_clean_manifest):
                if m.is_paired:
                    warnings.warn(
                        "paired web manifest passed to data-free distillation; "
                        "pair links will be ignored", stacklevel=2)
            self.ae, self.unet, self.bank, self.schedule = load_diffusion(diffusion_ckpt)
            self.x_bar, self.x_bar_records = manifest_images(
                web_degraded_manifest, "degraded", "train")
            self.y_bar, _ = manifest_images(web_clean_manifest, "clean", "train")
            self.kind_idx = torch.tensor(
                [self.bank.index(r.kind) for r in self.x_bar_records], dtype=torch.long)
            self.n_items = len(self.x_bar)

            if variant.prompt_source == "dpa":
                torch.manual_seed(derive_seed(config.seed, "adapter-init", seed))
                acfg = config.adapter
                self.adapter = DegradationPromptEncoder(acfg.d_p, acfg.l_p, acfg.width)
                self.momentum = MomentumEncoder(self.adapter, acfg.momentum)
                self.queue = NegativeQueue(acfg.queue_capacity, acfg.d_p)
                self.optim_adapter = torch.optim.Adam(
                    self.adapter.parameters(), lr=dcfg.lr_adapter,
                    betas=(dcfg.adam_beta1, dcfg.adam_beta2))
                self._warm_fill_queue()
            elif variant.prompt_source == "content":
                proj_gen = torch_generator(derive_seed(config.seed, "content-proj"))
                d_in = self.ae.latent_channels
                d_out = config.adapter.l_p * config.adapter.d_p
                # fixed random projection: the content prompt is untrained
                self.content_proj = torch.empty(d_in, d_out).normal_(
                    generator=proj_gen) / math.sqrt(d_in)
        else:
            if direct_manifest is None:
                raise PipelineError(f"variant {variant.name!r} needs a dataset manifest")
            records = direct_manifest.select(role="degraded", split="train")
            if not records:
                raise ManifestError("no degraded train records to distill on")
            self.x_bar, self.x_bar_records = manifest_images(
                direct_manifest, "degraded", "train")
            self.n_items = len(self.x_bar)

        self.optim_student = torch.optim.Adam(
            self.student.parameters(), lr=dcfg.lr_student,
            betas=(dcfg.adam_beta1, dcfg.adam_beta2))
        self.epoch = 0
        self.step = 0

    # -- state ------------------------------------------------------------

    def _warm_fill_queue(self) -> None:
        """Seed the negative queue so the contrastive loss is defined at step 0."""
        n = min(self.queue.capacity, self.n_items)
        batch = _random_crops(self.x_bar[:n], self.config.adapter.crop, self.gen)
        with torch.no_grad():
            keys = self.momentum.embed(batch, normalize=True)
        self.queue.push(keys)

    def _key_encoder_embed(self, batch: torch.Tensor) -> torch.Tensor:
        if self.config.adapter.momentum_keys:
            return self.momentum.embed(batch, normalize=True)
        with torch.no_grad():
            return self.adapter.embed(batch, normalize=True)

    def state_checkpoint(self) -> Checkpoint:
        dcfg = self.config.distill
        ckpt = Checkpoint(
            kind="student",
            fingerprint=self.config.fingerprint,
            step=self.step,
            meta={
                "variant": self.variant.name,
                "seed": self.seed,
                "epoch": self.epoch,
                "base_width": self.student.base_width,
                "depth": self.student.depth,
                "scales": self.student.scales,
                "role": "student",
                "image_size": self.config.image_size,
                "extra_paper": self.variant.extra_paper,
            },
        )
        ckpt.put_state_dict("net", self.student)
        ckpt.put_optimizer("optim/student", self.optim_student)
        ckpt.arrays["rng/torch"] = self.gen.get_state().numpy().copy()
        if self.adapter is not None:
            ckpt.put_state_dict("adapter", self.adapter)
            ckpt.put_state_dict("momentum", self.momentum.shadow)
            ckpt.arrays["queue/entries"] = self.queue.tensor().numpy().copy()
            ckpt.put_optimizer("optim/adapter", self.optim_adapter)
        return ckpt

    def load_state(self, ckpt: Checkpoint) -> None:
        if ckpt.meta.get("variant") != self.variant.name:
            raise PipelineError(
                f"checkpoint is for variant {ckpt.meta.get('variant')!r}, "
                f"trainer runs {self.variant.name!r}")
        if ckpt.fingerprint != self.config.fingerprint:
            raise PipelineError(
                f"checkpoint fingerprint {ckpt.fingerprint} does not match "
                f"config {self.config.fingerprint}")
        ckpt.load_module("net", self.student)
        ckpt.load_optimizer("optim/student", self.optim_student)
        self.gen.set_state(torch.from_numpy(ckpt.arrays["rng/torch"].copy()))
        if self.adapter is not None:
            ckpt.load_module("adapter", self.adapter)
            ckpt.load_module("momentum", self.momentum.shadow)
            self.queue.load_state(torch.from_numpy(ckpt.arrays["queue/entries"].copy()))
            ckpt.load_optimizer("optim/adapter", self.optim_adapter)
        self.epoch = ckpt.meta["epoch"]
        self.step = ckpt.step

    # -- step pieces --------------------------------------------------------

    def _prompts_and_contrastive(self, x_bar, y_bar, kind_idx):
        """Prompt tokens for the generator plus the contrastive term."""
        acfg = self.config.adapter
        src = self.variant.prompt_source
        if src == "dpa":
            crop_q = _random_crops(x_bar, acfg.crop, self.gen)
            crop_k = _random_crops(x_bar, acfg.crop, self.gen)
            q = self.adapter.embed(crop_q, normalize=True)
            keys = self._key_encoder_embed(crop_k)
            loss_cl = contrastive_loss(q, keys, self.queue, acfg.tau,
                                       literal_eq3=acfg.literal_eq3)
            return self.adapter.tokens(x_bar), loss_cl, keys
        if src == "class":
            return self.bank(kind_idx), torch.zeros(()), None
        if src == "content":
            with torch.no_grad():
                pooled = self.ae.scaled_encode(y_bar).mean(dim=(2, 3))
            tokens = (pooled @ self.content_proj).reshape(
                -1, self.config.adapter.l_p, self.config.adapter.d_p)
            return tokens, torch.zeros(()), None
        return self.bank.null_tokens(len(y_bar)), torch.zeros(()), None

    def _generate(self, y_bar, prompt):
        dcfg = self.config.distill
        if self.variant.z0_source == "ccd":
            return generate(self.ae, self.unet, self.schedule, y_bar, prompt,
                            dcfg.lam, generator=self.gen,
                            literal_eq7=dcfg.literal_eq7,
                            truncate_backprop=dcfg.truncate_backprop)
        shape = (len(y_bar), self.ae.latent_channels,
                 self.config.image_size // 4, self.config.image_size // 4)
        return generate_from_noise(self.ae, self.unet, self.schedule, shape, prompt,
                                   generator=self.gen,
                                   literal_eq7=dcfg.literal_eq7,
                                   truncate_backprop=dcfg.truncate_backprop)

    def _build_cache(self) -> None:
        """Pregenerate one x_hat per web clean image with the initial prompts.

        Trades diversity for speed; the prompt encoder stops receiving
        distillation gradients because everything is generated up front."""
        parts = []
        bs = self.config.distill.batch_size
        with torch.no_grad():
            for i in range(0, self.n_items, bs):
                x = self.x_bar[i : i + bs]
                y = self.y_bar[i : i + bs]
                prompt, _, _ = self._prompts_and_contrastive(x, y, self.kind_idx[i : i + bs])
                parts.append(self._generate(y, prompt))
        self._cache = torch.cat(parts)

    def _epoch_step_batches(self) -> list:
        dcfg = self.config.distill
        batches = epoch_batches(self.n_items, dcfg.batch_size, self.gen)
        if dcfg.steps_per_epoch:
            while len(batches) < dcfg.steps_per_epoch:
                batches = batches + epoch_batches(self.n_items, dcfg.batch_size, self.gen)
            batches = batches[: dcfg.steps_per_epoch]
        return batches

    def _train_batch_direct(self, idx):
        x = self.x_bar[idx]
        with torch.no_grad():
            t_out = self.teacher(x)
        s_out = self.student(x)
        return kd_loss(t_out, s_out), torch.zeros(())

    def _train_batch_generative(self, idx):
        x = self.x_bar[idx]
        y = self.y_bar[idx]
        if self._cache is not None:
            x_hat = self._cache[idx]
            loss_cl = torch.zeros(())
            if self.variant.prompt_source == "dpa":
                acfg = self.config.adapter
                crop_q = _random_crops(x, acfg.crop, self.gen)
                crop_k = _random_crops(x, acfg.crop, self.gen)
                q = self.adapter.embed(crop_q, normalize=True)
                keys = self._key_encoder_embed(crop_k)
                loss_cl = contrastive_loss(q, keys, self.queue, acfg.tau,
                                           literal_eq3=acfg.literal_eq3)
                self._pending_keys = keys
            with torch.no_grad():
                t_out = self.teacher(x_hat)
            s_out = self.student(x_hat)
            return kd_loss(t_out, s_out), loss_cl

        prompt, loss_cl, keys = self._prompts_and_contrastive(x, y, self.kind_idx[idx])
        self._pending_keys = keys
        x_hat = self._generate(y, prompt)
        if self.adapter is None:
            x_hat = x_hat.detach()
        t_out = self.teacher(x_hat)
        s_out = self.student(x_hat)
        return kd_loss(t_out, s_out), loss_cl

    # -- main loop ----------------------------------------------------------

    def run(self, epochs: int | None = None) -> Checkpoint:
        """Train up to `epochs` total (default: the configured count)."""
        dcfg = self.config.distill
        until = dcfg.epochs if epochs is None else epochs
        if self.variant.generative and dcfg.cache_generated and self._cache is None:
            self._build_cache()

        while self.epoch < until:
            gamma = gamma_for_epoch(self.epoch, dcfg.gamma0, dcfg.e1)
            lr_s = halved_lr(dcfg.lr_student, self.epoch, dcfg.lr_halving_every)
            set_lr(self.optim_student, lr_s)
            if self.optim_adapter is not None:
                set_lr(self.optim_adapter,
                       halved_lr(dcfg.lr_adapter, self.epoch, dcfg.lr_halving_every))
            for idx in self._epoch_step_batches():
                self._pending_keys = None
                if self.variant.generative:
                    loss_kd, loss_cl = self._train_batch_generative(idx)
                else:
                    loss_kd, loss_cl = self._train_batch_direct(idx)
                loss = joint_loss(loss_kd, loss_cl, gamma)
                self.optim_student.zero_grad()
                if self.optim_adapter is not None:
                    self.optim_adapter.zero_grad()
                loss.backward()
                self.optim_student.step()
                if self.optim_adapter is not None:
                    self.optim_adapter.step()
                    self.momentum.update(self.adapter)
                    if self._pending_keys is not None:
                        self.queue.push(self._pending_keys)
                self.logger.log(step=self.step, epoch=self.epoch,
                                loss_kd=float(loss_kd.item()),
                                loss_cl=float(loss_cl.item()),
                                gamma=gamma, lr=lr_s)
                self.step += 1
            self.epoch += 1
        self.logger.close()

        ckpt = self.state_checkpoint()
        if self.eval_manifest is not None:
            scores = evaluate_student_net(self.student, self.eval_manifest)
            ckpt.metrics.update(scores)
        if self.logger.records:
            ckpt.metrics["final_loss_kd"] = self.logger.records[-1]["loss_kd"]
        return ckpt


def evaluate_student_net(net: RestorationNet, paired_manifest,
                         use_quantized: bool = False, use_luma: bool = False) -> dict:
    """Held-out restoration quality of a net on a paired manifest's test split."""
    scores = score_restoration(net, paired_manifest, use_quantized=use_quantized,
                               use_luma=use_luma)
    return {"test_psnr_db": scores["test_psnr_db"], "test_ssim": scores["test_ssim"]}


# ---------------------------------------------------------------------------
# entry points


def train_d4ir(web_degraded_manifest, web_clean_manifest, teacher_ckpt: Checkpoint,
               diffusion_ckpt: Checkpoint, config: RunConfig, variant: str = "d4ir",
               seed: int = 0, log_path=None, eval_manifest=None) -> Checkpoint:
    """Distill via generated data; `variant` picks the z0/prompt combination."""
    v = get_variant(variant)
    if not v.generative:
        raise ValidationError(f"variant {variant!r} is a direct-data baseline; "
                              "use distill_on_dataset")
    trainer = DistillTrainer(
        config, v, teacher_ckpt, diffusion_ckpt,
        web_degraded_manifest=web_degraded_manifest,
        web_clean_manifest=web_clean_manifest,
        seed=seed, log_path=log_path, eval_manifest=eval_manifest)
    return trainer.run()


def distill_on_dataset(degraded_manifest, teacher_ckpt: Checkpoint, config: RunConfig,
                       variant: str = "data", seed: int = 0, log_path=None,
                       eval_manifest=None) -> Checkpoint:
    """Plain distillation on existing degraded images (no generation, no GT)."""
    v = get_variant(variant)
    if v.generative:
        raise ValidationError(f"variant {variant!r} generates data; use train_d4ir")
    trainer = DistillTrainer(
        config, v, teacher_ckpt, direct_manifest=degraded_manifest,
        seed=seed, log_path=log_path, eval_manifest=eval_manifest)
    return trainer.run()


def run_ablation(config: RunConfig, teacher_ckpt: Checkpoint, diffusion_ckpt: Checkpoint,
                 web_degraded_manifest, web_clean_manifest, eval_manifest,
                 matrix=ABLATION_MATRIX, out_dir=None, log_dir=None) -> list:
    """Train and evaluate every variant on the same seeds; one row per variant.

    Scores are medians over config.distill.ablation_seeds runs."""
    from pathlib import Path

    rows = []
    for name in matrix:
        v = get_variant(name)
        psnrs, ssims = [], []
        last_ckpt = None
        for seed in range(config.distill.ablation_seeds):
            log_path = (Path(log_dir) / f"ablate-{name}-s{seed}.jsonl"
                        if log_dir is not None else None)
            if v.generative:
                ckpt = train_d4ir(web_degraded_manifest, web_clean_manifest,
                                  teacher_ckpt, diffusion_ckpt, config,
                                  variant=name, seed=seed, log_path=log_path,
                                  eval_manifest=eval_manifest)
            else:
                source = web_degraded_manifest if name == "m0" else eval_manifest
                ckpt = distill_on_dataset(source, teacher_ckpt, config,
                                          variant=name, seed=seed, log_path=log_path,
                                          eval_manifest=eval_manifest)
            psnrs.append(ckpt.metrics["test_psnr_db"])
            ssims.append(ckpt.metrics["test_ssim"])
            last_ckpt = ckpt
            if out_dir is not None:
                ckpt.save(Path(out_dir) / f"student-{name}-s{seed}.ckpt")
        student = RestorationNet(config.teacher.base_width // 2,
                                 config.teacher.depth, config.teacher.scales)
        rows.append({
            "variant": name,
            "z0_source": v.z0_source or "web-data",
            "prompt_source": v.prompt_source or "-",
            "psnr_db": float(np.median(psnrs)),
            "ssim": float(np.median(ssims)),
            "params_m": param_count(student) / 1e6,
            "seeds": list(range(config.distill.ablation_seeds)),
            "extra_paper": v.extra_paper,
        })
        del last_ckpt
    return rows
