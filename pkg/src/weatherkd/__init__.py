"""Data-free distillation of multi-weather image restoration networks.

A pretrained teacher restoration network is distilled into a half-width
student without access to the teacher's training data: a small latent
diffusion model, conditioned on learned degradation prompts and started
from partially noised latents of unpaired clean images, synthesizes the
degraded images the student trains on.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointIntegrityError,
    ConfigError,
    ManifestError,
    PipelineError,
    ValidationError,
    WeatherKDError,
)

__all__ = [
    "WeatherKDError",
    "ValidationError",
    "ConfigError",
    "ManifestError",
    "CheckpointIntegrityError",
    "PipelineError",
    "__version__",
]
