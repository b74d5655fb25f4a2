"""Deterministic latent sampling (eta = 0) and image generation.

Each step predicts z0 from the current latent and the noise estimate, then
re-noises to the previous sub-sequence timestep:

    z0_hat  = (z_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)
    z_prev  = sqrt(ab_prev) * z0_hat + sqrt(1 - ab_prev) * eps

literal_eq7 keeps sqrt(1 - ab_t) as the second coefficient instead; that
variant does not reduce to z0_hat at t_prev = 0 and exists for comparison.
"""

from __future__ import annotations

import math

import torch

from ..errors import ValidationError
from .schedule import NoiseSchedule


def ddim_step(schedule: NoiseSchedule, z_t, t: int, t_prev: int, eps_hat,
              literal_eq7: bool = False):
    if not (t > t_prev >= 0):
        raise ValidationError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = float(schedule.alpha_bar(t))
    ab_p = float(schedule.alpha_bar(t_prev))
    z0_hat = (z_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    coeff = math.sqrt(1.0 - ab_t) if literal_eq7 else math.sqrt(1.0 - ab_p)
    return math.sqrt(ab_p) * z0_hat + coeff * eps_hat


def ddim_sample(unet, schedule: NoiseSchedule, z_start: torch.Tensor, pairs,
                prompt: torch.Tensor, literal_eq7: bool = False,
                truncate_backprop: int | None = None, *,
                guidance: float = 1.0,
                null_prompt: torch.Tensor | None = None) -> torch.Tensor:
    """Run the (t, t_prev) step pairs down to their end, conditioned on prompt.

    truncate_backprop=k detaches the graph so only the last k steps carry
    gradients; None backpropagates through every step.

    guidance > 1 extrapolates away from the unconditional prediction
    (eps_null + guidance * (eps_cond - eps_null)) and needs null_prompt;
    guidance == 1 is plain conditional sampling with a single forward pass.
    """
    if guidance != 1.0 and null_prompt is None:
        raise ValidationError("guidance != 1 requires a null prompt")
    z = z_start
    n = len(pairs)
    keep = n if truncate_backprop is None else max(0, min(truncate_backprop, n))
    for i, (t, t_prev) in enumerate(pairs):
        grad_on = torch.is_grad_enabled() and i >= n - keep
        t_batch = torch.full((z.shape[0],), t, dtype=torch.long, device=z.device)
        with torch.set_grad_enabled(grad_on):
            eps_hat = unet(z, t_batch, prompt)
            if guidance != 1.0:
                eps_null = unet(z, t_batch, null_prompt)
                eps_hat = eps_null + guidance * (eps_hat - eps_null)
            z = ddim_step(schedule, z, t, t_prev, eps_hat, literal_eq7=literal_eq7)
    return z


def generate(ae, unet, schedule: NoiseSchedule, clean: torch.Tensor,
             prompt: torch.Tensor, lam: float, *,
             generator: torch.Generator | None = None,
             literal_eq7: bool = False,
             truncate_backprop: int | None = None,
             guidance: float = 1.0,
             null_prompt: torch.Tensor | None = None) -> torch.Tensor:
    """Content-conditioned generation: encode, partially noise, denoise, decode.

    lam in [0,1] sets the noising depth; lam=0 is a pure autoencoder
    round-trip and lam=1 discards the content entirely. Output is in [0,1]
    and differentiable w.r.t. the prompt.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValidationError(f"lam {lam} outside [0, 1]")
    z0 = ae.scaled_encode(clean)
    pairs = schedule.ddim_pairs(lam)
    if not pairs:
        return ae.scaled_decode(z0)
    t_start = pairs[0][0]
    eps = torch.empty_like(z0).normal_(generator=generator)
    z_t = schedule.forward_diffuse(z0, t_start, eps)
    z = ddim_sample(unet, schedule, z_t, pairs, prompt,
                    literal_eq7=literal_eq7, truncate_backprop=truncate_backprop,
                    guidance=guidance, null_prompt=null_prompt)
    return ae.scaled_decode(z)


def generate_from_noise(ae, unet, schedule: NoiseSchedule, shape, prompt: torch.Tensor, *,
                        generator: torch.Generator | None = None,
                        literal_eq7: bool = False,
                        truncate_backprop: int | None = None,
                        guidance: float = 1.0,
                        null_prompt: torch.Tensor | None = None,
                        dtype=torch.float32, device="cpu") -> torch.Tensor:
    """Full-chain generation from a unit-Gaussian latent (no content input)."""
    z = torch.empty(shape, dtype=dtype, device=device).normal_(generator=generator)
    pairs = schedule.ddim_pairs(1.0)
    z = ddim_sample(unet, schedule, z, pairs, prompt,
                    literal_eq7=literal_eq7, truncate_backprop=truncate_backprop,
                    guidance=guidance, null_prompt=null_prompt)
    return ae.scaled_decode(z)
