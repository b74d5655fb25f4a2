"""Small conv classifier over degradation kinds.

Independent of the generative stack; used to probe whether class-token
conditioning actually steers generation toward the requested kind.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ValidationError


class KindClassifier(nn.Module):
    def __init__(self, kinds, width: int = 32):
        super().__init__()
        kinds = tuple(kinds)
        if len(kinds) < 2:
            raise ValidationError("classifier needs at least two kinds")
        self.kinds = kinds
        w = width
        # stride-1 lead-in keeps thin streaks visible before downsampling
        self.net = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1), nn.ReLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, padding=1), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.head = nn.Linear(2 * w, len(kinds))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"expected (N, 3, H, W) batch, got {tuple(x.shape)}")
        h = self.net(x).mean(dim=(2, 3))
        return self.head(h)

    @torch.no_grad()
    def predict_kinds(self, x: torch.Tensor) -> list:
        idx = self.forward(x).argmax(dim=1)
        return [self.kinds[i] for i in idx.tolist()]
