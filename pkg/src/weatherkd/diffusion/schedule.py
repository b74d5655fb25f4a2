"""Diffusion noise schedule and the deterministic-sampler sub-sequence.

Linear beta schedule over T steps with cumulative products alpha_bar indexed
0..T (alpha_bar[0] = 1, no noise). The sampler visits a fixed sub-sequence of
S timesteps; a noising fraction lam in [0,1] selects its upper portion by
starting at the largest sub-step <= lam*T.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from ..errors import ValidationError


class NoiseSchedule:
    def __init__(self, T: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 0.02, ddim_steps: int = 70):
        if T < 1:
            raise ValidationError(f"T must be >= 1, got {T}")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValidationError(f"bad beta range [{beta_start}, {beta_end}]")
        if not (1 <= ddim_steps <= T):
            raise ValidationError(f"ddim_steps {ddim_steps} outside [1, {T}]")
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.ddim_steps = ddim_steps

        self.betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        bar = np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])
        if not (np.diff(bar) < 0).all():
            raise ValidationError("alpha_bar must decrease strictly")
        self._alpha_bar = bar

        # evenly spaced timesteps; half-away rounding keeps them strictly
        # increasing whenever ddim_steps <= T
        sub = np.floor(np.linspace(1.0, float(T), ddim_steps) + 0.5).astype(np.int64)
        if len(np.unique(sub)) != ddim_steps or sub[0] < 1 or sub[-1] != T:
            raise ValidationError("ddim sub-sequence is not strictly increasing in [1, T]")
        self.ddim_subsequence = sub

    def alpha_bar(self, t):
        """Cumulative product at timestep(s) t, t in [0, T]."""
        t_arr = np.asarray(t)
        if t_arr.min() < 0 or t_arr.max() > self.T:
            raise ValidationError(f"timestep {t} outside [0, {self.T}]")
        return self._alpha_bar[t_arr]

    def forward_diffuse(self, z0, t, eps):
        """Closed-form noising: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps.

        t is a scalar or a per-sample vector matching z0's batch dim; eps must
        have z0's shape. Works on torch tensors and numpy arrays alike.
        """
        ab = self.alpha_bar(t)
        if torch.is_tensor(z0):
            if not torch.is_tensor(eps) or eps.shape != z0.shape:
                raise ValidationError("eps must be a tensor with z0's shape")
            ab_t = torch.as_tensor(ab, dtype=z0.dtype, device=z0.device)
            while ab_t.ndim < z0.ndim:
                ab_t = ab_t.unsqueeze(-1)
            return torch.sqrt(ab_t) * z0 + torch.sqrt(1.0 - ab_t) * eps
        z0 = np.asarray(z0)
        eps = np.asarray(eps)
        if eps.shape != z0.shape:
            raise ValidationError("eps must have z0's shape")
        ab_t = np.asarray(ab, dtype=np.float64)
        while ab_t.ndim < z0.ndim:
            ab_t = ab_t[..., None]
        return np.sqrt(ab_t) * z0 + np.sqrt(1.0 - ab_t) * eps

    def start_step(self, lam: float) -> int:
        """Largest sub-sequence timestep <= lam*T, or 0 when none qualifies."""
        if not (0.0 <= lam <= 1.0):
            raise ValidationError(f"lam {lam} outside [0, 1]")
        cut = lam * self.T
        eligible = self.ddim_subsequence[self.ddim_subsequence <= cut]
        return int(eligible[-1]) if len(eligible) else 0

    def ddim_pairs(self, lam: float = 1.0) -> list:
        """(t, t_prev) step pairs, descending, from the lam start down to 0."""
        start = self.start_step(lam)
        if start == 0:
            return []
        steps = [int(s) for s in self.ddim_subsequence if s <= start]
        steps_down = steps[::-1] + [0]
        return list(zip(steps_down[:-1], steps_down[1:]))

    def to_meta(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "ddim_steps": self.ddim_steps,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "NoiseSchedule":
        return cls(
            T=meta["T"], beta_start=meta["beta_start"],
            beta_end=meta["beta_end"], ddim_steps=meta["ddim_steps"],
        )
