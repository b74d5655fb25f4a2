"""Conditional denoising U-Net over autoencoder latents.

Two resolution scales, sinusoidal timestep embeddings, and one prompt
cross-attention layer per scale. The attention math is exposed as plain
functions so it can be checked against dense oracles.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from ..errors import ValidationError


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) over the key axis; rows sum to 1."""
    if q.shape[-1] != k.shape[-1]:
        raise ValidationError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = torch.matmul(q, k.transpose(-2, -1)) * scale
    return torch.softmax(scores, dim=-1)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    if k.shape[-2] != v.shape[-2]:
        raise ValidationError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    return torch.matmul(attention_weights(q, k), v)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    if dim % 2:
        raise ValidationError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(t.device)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class CrossAttention(nn.Module):
    """Single-head cross-attention from spatial positions to prompt tokens."""

    def __init__(self, channels: int, prompt_dim: int):
        super().__init__()
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(prompt_dim, channels, bias=False)
        self.w_v = nn.Linear(prompt_dim, channels, bias=False)
        self.proj = nn.Linear(channels, channels)
        # attention starts as a no-op; conditioning strength is learned
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        if prompt.ndim != 3:
            raise ValidationError(f"expected (B, L, d) prompt, got {tuple(prompt.shape)}")
        if prompt.shape[1] < 1:
            raise ValidationError("prompt must hold at least one token")
        b, c, h, w = x.shape
        tokens = x.reshape(b, c, h * w).transpose(1, 2)  # (B, HW, C)
        out = attention(self.w_q(tokens), self.w_k(prompt), self.w_v(prompt))
        out = self.proj(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class ResTimeBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.act = nn.SiLU()
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels else nn.Identity()
        )

    def forward(self, x, temb):
        h = self.act(self.conv1(x))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(h))
        return self.skip(x) + h


class CondUNet(nn.Module):
    """Predicts the noise in z_t given the timestep and prompt tokens."""

    def __init__(self, latent_channels: int = 4, base_width: int = 64,
                 prompt_dim: int = 64, time_dim: int = 64):
        super().__init__()
        self.latent_channels = latent_channels
        self.base_width = base_width
        self.prompt_dim = prompt_dim
        self.time_dim = time_dim
        w = base_width
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, 2 * time_dim), nn.SiLU(), nn.Linear(2 * time_dim, time_dim))
        self.in_conv = nn.Conv2d(latent_channels, w, 3, padding=1)
        self.block1 = ResTimeBlock(w, w, time_dim)
        self.attn1 = CrossAttention(w, prompt_dim)
        self.down = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.block2 = ResTimeBlock(2 * w, 2 * w, time_dim)
        self.attn2 = CrossAttention(2 * w, prompt_dim)
        self.mid = ResTimeBlock(2 * w, 2 * w, time_dim)
        self.up = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.block3 = ResTimeBlock(2 * w, w, time_dim)
        self.out_conv = nn.Conv2d(w, latent_channels, 3, padding=1)
        # zero-init head: the untrained net predicts zero noise
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, z: torch.Tensor, t: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise ValidationError(
                f"expected (N, {self.latent_channels}, h, w) latents, got {tuple(z.shape)}")
        if z.shape[2] % 2 or z.shape[3] % 2:
            raise ValidationError(f"latent H, W must divide 2, got {tuple(z.shape[2:])}")
        if t.ndim == 0:
            t = t.expand(z.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.time_dim).to(z.dtype))
        h1 = self.attn1(self.block1(self.in_conv(z), temb), prompt)
        h2 = self.block2(self.down(h1), temb)
        h2 = self.attn2(h2, prompt)
        h2 = self.mid(h2, temb)
        h3 = self.block3(torch.cat([self.up(h2), h1], dim=1), temb)
        return self.out_conv(h3)


class ClassTokenBank(nn.Module):
    """Learned per-degradation-kind prompt tokens plus a null token.

    Stands in for a text encoder during diffusion pretraining: each kind gets
    an L_p x d_p token block, and the null token supports unconditional
    training and sampling.
    """

    def __init__(self, kinds, l_p: int = 1, d_p: int = 64):
        super().__init__()
        kinds = tuple(kinds)
        if not kinds:
            raise ValidationError("need at least one degradation kind")
        self.kinds = kinds
        self.l_p = l_p
        self.d_p = d_p
        self.tokens = nn.Parameter(torch.randn(len(kinds) + 1, l_p, d_p) * 0.02)

    @property
    def null_index(self) -> int:
        return len(self.kinds)

    def index(self, kind: str) -> int:
        try:
            return self.kinds.index(kind)
        except ValueError:
            raise ValidationError(f"unknown kind {kind!r}, bank holds {self.kinds}") from None

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        return self.tokens[idx]

    def tokens_for(self, kind: str, batch: int) -> torch.Tensor:
        return self.tokens[self.index(kind)].expand(batch, self.l_p, self.d_p)

    def null_tokens(self, batch: int) -> torch.Tensor:
        return self.tokens[self.null_index].expand(batch, self.l_p, self.d_p)
