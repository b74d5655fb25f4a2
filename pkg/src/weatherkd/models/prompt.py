"""Degradation prompt adapter and its contrastive training parts.

The encoder maps a degraded image to a compact embedding describing *how*
the image is corrupted (not what it depicts). Two crops of one image are a
positive pair; a FIFO queue of momentum-encoded keys supplies negatives.
The embedding also fans out to the prompt tokens consumed by cross-attention.
"""

from __future__ import annotations

import copy

import torch
from torch import nn

from ..errors import ValidationError
from .restoration import ResBlock

UNIT_NORM_TOL = 1e-3


class DegradationPromptEncoder(nn.Module):
    """Three residual conv blocks + global pooling + MLP head.

    embed() yields the (B, d_p) vector used for contrastive scoring;
    tokens() fans it out to the (B, L_p, d_p) prompt sequence.
    """

    def __init__(self, d_p: int = 64, l_p: int = 1, width: int = 32):
        super().__init__()
        if l_p < 1:
            raise ValidationError("l_p must be >= 1")
        self.d_p = d_p
        self.l_p = l_p
        w = width
        self.stem = nn.Conv2d(3, w, 3, stride=2, padding=1)
        self.blocks = nn.ModuleList(ResBlock(w) for _ in range(3))
        self.pool = nn.AvgPool2d(2)
        self.act = nn.ReLU()
        self.mlp = nn.Sequential(nn.Linear(w, w), nn.ReLU(), nn.Linear(w, d_p))
        self.fan_out = nn.Linear(d_p, l_p * d_p)

    def embed(self, x: torch.Tensor, normalize: bool = False) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"expected (N, 3, H, W) batch, got {tuple(x.shape)}")
        if x.min() < 0 or x.max() > 1:
            raise ValidationError("prompt encoder expects inputs in [0,1]")
        h = self.act(self.stem(x))
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.blocks) - 1 and min(h.shape[2], h.shape[3]) >= 2:
                h = self.pool(h)
        v = self.mlp(h.mean(dim=(2, 3)))
        if normalize:
            v = nn.functional.normalize(v, dim=-1)
        return v

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        v = self.embed(x)
        return self.fan_out(v).reshape(-1, self.l_p, self.d_p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.tokens(x)


class MomentumEncoder:
    """EMA shadow of the online encoder; provides the keys, never gradients."""

    def __init__(self, online: DegradationPromptEncoder, momentum: float = 0.999):
        if not (0.0 <= momentum < 1.0):
            raise ValidationError(f"momentum {momentum} outside [0, 1)")
        self.momentum = momentum
        self.shadow = copy.deepcopy(online)
        self.shadow.eval()
        for p in self.shadow.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def update(self, online: DegradationPromptEncoder) -> None:
        m = self.momentum
        for ps, po in zip(self.shadow.parameters(), online.parameters()):
            ps.mul_(m).add_(po.detach(), alpha=1.0 - m)

    @torch.no_grad()
    def embed(self, x: torch.Tensor, normalize: bool = False) -> torch.Tensor:
        return self.shadow.embed(x, normalize=normalize)


class NegativeQueue:
    """Fixed-capacity FIFO of unit-norm key vectors (single-writer)."""

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1 or dim < 1:
            raise ValidationError(f"bad queue shape: capacity={capacity} dim={dim}")
        self.capacity = capacity
        self.dim = dim
        self._buf = torch.zeros(capacity, dim, dtype=dtype)
        self._ptr = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, keys: torch.Tensor) -> None:
        keys = torch.atleast_2d(keys).detach()
        if keys.numel() == 0:
            return
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ValidationError(f"expected (B, {self.dim}) keys, got {tuple(keys.shape)}")
        norms = keys.norm(dim=1)
        if (norms - 1.0).abs().max().item() > UNIT_NORM_TOL:
            raise ValidationError("queue keys must be unit-norm")
        keys = (keys / norms[:, None]).to(self._buf.dtype)
        if keys.shape[0] >= self.capacity:
            self._buf.copy_(keys[-self.capacity:])
            self._ptr, self._size = 0, self.capacity
            return
        for k in keys:
            self._buf[self._ptr] = k
            self._ptr = (self._ptr + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def tensor(self) -> torch.Tensor:
        """Current entries, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].clone()
        return torch.cat([self._buf[self._ptr:], self._buf[: self._ptr]]).clone()

    def state(self) -> torch.Tensor:
        return self.tensor()

    def load_state(self, entries: torch.Tensor) -> None:
        entries = torch.atleast_2d(entries)
        if entries.shape[0] > self.capacity or (entries.numel() and entries.shape[1] != self.dim):
            raise ValidationError(f"bad queue state shape {tuple(entries.shape)}")
        self._buf.zero_()
        n = entries.shape[0]
        self._buf[:n] = entries.to(self._buf.dtype)
        self._ptr = n % self.capacity
        self._size = n


def _check_unit(name: str, v: torch.Tensor) -> None:
    norms = v.norm(dim=-1)
    if (norms - 1.0).abs().max().item() > UNIT_NORM_TOL:
        raise ValidationError(f"{name} must be unit-norm within {UNIT_NORM_TOL}")


def contrastive_loss(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    queue: NegativeQueue,
    tau: float = 0.07,
    literal_eq3: bool = False,
) -> torch.Tensor:
    """Query-vs-queue InfoNCE with temperature tau; gradients reach q only.

    Default denominator includes the positive pair alongside the queued
    negatives. literal_eq3 switches to a negatives-only denominator.
    """
    if tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    if len(queue) == 0:
        raise ValidationError("negative queue is empty")
    q = torch.atleast_2d(q)
    k_pos = torch.atleast_2d(k_pos).detach()
    if q.shape != k_pos.shape or q.shape[1] != queue.dim:
        raise ValidationError(
            f"shape mismatch: q {tuple(q.shape)}, k_pos {tuple(k_pos.shape)}, dim {queue.dim}")
    _check_unit("q", q)
    _check_unit("k_pos", k_pos)

    negs = queue.tensor().to(q.dtype)
    l_pos = (q * k_pos).sum(dim=1) / tau  # (B,)
    l_neg = q @ negs.t() / tau  # (B, K)
    if literal_eq3:
        denom = torch.logsumexp(l_neg, dim=1)
    else:
        denom = torch.logsumexp(torch.cat([l_pos[:, None], l_neg], dim=1), dim=1)
    return (denom - l_pos).mean()
