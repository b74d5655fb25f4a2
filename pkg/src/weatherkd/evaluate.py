"""Checkpoint evaluation on paired test manifests.

Scores are computed pairwise over the manifest's test split with the
restoration metrics; each evaluated checkpoint yields one MetricRow. Mixing
artifacts from different config fingerprints is refused unless explicitly
allowed, so a report can never silently combine incompatible runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import EvalConfig
from .errors import ManifestError, PipelineError, ValidationError
from .metrics import psnr, ssim
from .models.restoration import RestorationNet, param_count, restore

PSNR_SENTINEL = "inf"


@dataclass
class MetricRow:
    """One table row: a method scored on one dataset over a set of seeds."""

    method: str
    params_m: float
    psnr_db: float
    ssim: float
    dataset: str
    seeds: tuple = (0,)
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not (math.isfinite(self.psnr_db) or math.isinf(self.psnr_db)):
            raise ValidationError("psnr_db must be finite or inf")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValidationError(f"ssim out of [-1, 1]: {self.ssim}")

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "params_m": self.params_m,
            "psnr_db": PSNR_SENTINEL if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
            "dataset": self.dataset,
            "seeds": list(self.seeds),
            "fingerprint": self.fingerprint,
        }
        if self.extra:
            d["extra"] = dict(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricRow":
        p = d["psnr_db"]
        row = cls(
            method=d["method"],
            params_m=float(d["params_m"]),
            psnr_db=math.inf if p == PSNR_SENTINEL else float(p),
            ssim=float(d["ssim"]),
            dataset=d["dataset"],
            seeds=tuple(d.get("seeds", (0,))),
            fingerprint=d.get("fingerprint", ""),
            extra=dict(d.get("extra", {})),
        )
        row.validate()
        return row


def _pair_arrays(manifest, split: str = "test"):
    pairs = manifest.pairs(split=split)
    if not pairs:
        raise ManifestError(f"manifest has no {split} pairs to evaluate on")
    for clean_rec, degraded_rec in pairs:
        yield manifest.load_image(clean_rec), manifest.load_image(degraded_rec)


def score_restoration(net: RestorationNet, paired_manifest, *,
                      use_quantized: bool = False, use_luma: bool = False,
                      split: str = "test") -> dict:
    """Mean PSNR/SSIM of net outputs and of the raw degraded inputs."""
    was_training = net.training
    net.eval()
    out_psnr, out_ssim, in_psnr = [], [], []
    for clean, degraded in _pair_arrays(paired_manifest, split):
        x = torch.from_numpy(degraded.astype(np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            out = restore(net, x)[0].permute(1, 2, 0).numpy().astype(np.float64)
        out_psnr.append(psnr(out, clean, use_quantized=use_quantized, use_luma=use_luma))
        out_ssim.append(ssim(out, clean))
        in_psnr.append(psnr(degraded, clean, use_quantized=use_quantized, use_luma=use_luma))
    if was_training:
        net.train()
    return {
        "test_psnr_db": float(np.mean(out_psnr)),
        "test_ssim": float(np.mean(out_ssim)),
        "degraded_psnr_db": float(np.mean(in_psnr)),
        "n_pairs": len(out_psnr),
    }


def check_fingerprints(items, allow_mixed: bool = False) -> str:
    """items: iterable of (label, fingerprint). Returns the common fingerprint."""
    seen = {}
    for label, fp in items:
        seen.setdefault(fp, []).append(label)
    if len(seen) > 1 and not allow_mixed:
        detail = "; ".join(f"{fp or '<none>'}: {', '.join(v)}" for fp, v in seen.items())
        raise PipelineError(
            f"refusing to mix artifacts from different configs ({detail}); "
            "pass allow_mixed to override")
    return next(iter(seen)) if seen else ""


def evaluate_checkpoint(ckpt: Checkpoint, manifest, *, eval_config: EvalConfig | None = None,
                        allow_mixed: bool = False, method: str | None = None,
                        seeds=(0,)) -> MetricRow:
    """Score a restoration checkpoint (teacher or student) on a paired manifest."""
    if ckpt.kind not in ("teacher", "student"):
        raise ValidationError(f"cannot evaluate checkpoint kind {ckpt.kind!r}")
    cfg = eval_config or EvalConfig()
    check_fingerprints(
        [("checkpoint", ckpt.fingerprint), ("manifest", manifest.fingerprint)],
        allow_mixed)
    from .train.teacher import load_restoration_net

    net = load_restoration_net(ckpt)
    scores = score_restoration(net, manifest, use_quantized=cfg.use_quantized,
                               use_luma=cfg.use_luma)
    name = method or ckpt.meta.get("variant", ckpt.kind)
    row = MetricRow(
        method=name,
        params_m=param_count(net) / 1e6,
        psnr_db=scores["test_psnr_db"],
        ssim=scores["test_ssim"],
        dataset=manifest.domain,
        seeds=tuple(seeds),
        fingerprint=ckpt.fingerprint,
        extra={"degraded_psnr_db": scores["degraded_psnr_db"],
               "n_pairs": scores["n_pairs"]},
    )
    row.validate()
    return row


def evaluate_many(ckpts: dict, manifest, *, eval_config: EvalConfig | None = None,
                  allow_mixed: bool = False) -> list:
    """Score {method_name: Checkpoint} against one manifest, one row each."""
    check_fingerprints(
        [(name, c.fingerprint) for name, c in ckpts.items()]
        + [("manifest", manifest.fingerprint)],
        allow_mixed)
    return [
        evaluate_checkpoint(c, manifest, eval_config=eval_config, allow_mixed=True,
                            method=name)
        for name, c in ckpts.items()
    ]
