from .schedule import NoiseSchedule
from .sampler import ddim_sample, ddim_step, generate, generate_from_noise

__all__ = ["NoiseSchedule", "ddim_sample", "ddim_step", "generate", "generate_from_noise"]
