"""Teacher and student restoration networks.

Plain residual encoder-decoder: strided conv downsampling, a residual
bottleneck, transposed-conv upsampling, and a global input skip so the net
predicts a correction to its input. The student is the same net at half the
base width.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ValidationError


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU()

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class RestorationNet(nn.Module):
    """Image-to-image restoration net; output shape equals input shape.

    base_width: channels after the stem (teacher 32, student 16)
    depth: residual blocks in the bottleneck
    scales: stride-2 downsampling stages (input H, W must divide 2**scales)
    role: "teacher" or "student", recorded for checkpoints/reports
    """

    def __init__(self, base_width: int = 32, depth: int = 4, scales: int = 2,
                 role: str = "teacher"):
        super().__init__()
        if base_width < 1 or depth < 0 or scales < 0:
            raise ValidationError(
                f"bad net shape: width={base_width} depth={depth} scales={scales}")
        self.base_width = base_width
        self.depth = depth
        self.scales = scales
        self.role = role
        self.act = nn.ReLU()

        self.stem = nn.Conv2d(3, base_width, 3, padding=1)
        downs, ups = [], []
        ch = base_width
        for _ in range(scales):
            downs.append(nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1))
            ch *= 2
        for _ in range(scales):
            ups.append(nn.ConvTranspose2d(ch, ch // 2, 2, stride=2))
            ch //= 2
        self.downs = nn.ModuleList(downs)
        self.ups = nn.ModuleList(ups)
        self.body = nn.ModuleList(ResBlock(base_width * 2 ** scales) for _ in range(depth))
        self.head = nn.Conv2d(base_width, 3, 3, padding=1)

    def forward(self, x):
        factor = 2 ** self.scales
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"expected (N, 3, H, W) batch, got {tuple(x.shape)}")
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ValidationError(
                f"H, W must divide {factor}, got {tuple(x.shape[2:])}")
        h = self.act(self.stem(x))
        for down in self.downs:
            h = self.act(down(h))
        for block in self.body:
            h = block(h)
        for up in self.ups:
            h = self.act(up(h))
        return x + self.head(h)


def make_teacher(base_width: int = 32, depth: int = 4, scales: int = 2) -> RestorationNet:
    return RestorationNet(base_width, depth, scales, role="teacher")


def make_student(teacher_width: int = 32, depth: int = 4, scales: int = 2) -> RestorationNet:
    """Same topology at half the teacher's channel width."""
    return RestorationNet(teacher_width // 2, depth, scales, role="student")


def param_count(net: nn.Module) -> int:
    """Exact number of trainable scalars."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def restore(net: RestorationNet, degraded: torch.Tensor) -> torch.Tensor:
    """Run the net on a [0,1] batch; clamp only in eval mode so training
    gradients are not cut at the box boundary."""
    if degraded.min() < 0 or degraded.max() > 1:
        raise ValidationError("restore() expects inputs in [0,1]")
    out = net(degraded)
    return out if net.training else out.clamp(0.0, 1.0)
