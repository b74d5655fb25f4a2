"""Small reconstruction autoencoder defining the diffusion latent space.

Three encoder conv stages map (H, W, 3) images to an (H/4, W/4, 4) latent;
the decoder mirrors them and ends in a sigmoid so reconstructions live in
[0,1]. After pretraining, `latent_scale` is set to 1/std of the training
latents so the diffusion model sees roughly unit-variance inputs.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ValidationError


class TinyAutoencoder(nn.Module):
    def __init__(self, base_width: int = 32, latent_channels: int = 4):
        super().__init__()
        w = base_width
        self.base_width = base_width
        self.latent_channels = latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(w, w, 3, padding=1), nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.ReLU(),
            nn.Conv2d(2 * w, latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, 2 * w, 3, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(2 * w, w, 2, stride=2), nn.ReLU(),
            nn.Conv2d(w, w, 3, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(w, w, 2, stride=2), nn.ReLU(),
            nn.Conv2d(w, 3, 3, padding=1),
        )
        self.register_buffer("latent_scale", torch.ones(()))

    @property
    def downsample_factor(self) -> int:
        return 4

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Raw (unscaled) latent of a (N, 3, H, W) batch; H, W must divide 4."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"expected (N, 3, H, W) batch, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValidationError(f"H, W must divide 4, got {tuple(x.shape[2:])}")
        return self.encoder(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(z))

    def scaled_encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encode(x) * self.latent_scale

    def scaled_decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decode(z / self.latent_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))
