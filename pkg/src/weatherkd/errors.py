"""Exception types shared across the package."""


class WeatherKDError(Exception):
    """Base class for all package errors."""


class ValidationError(WeatherKDError, ValueError):
    """Invalid value for a domain type (spec field out of range, bad shape, ...)."""


class ConfigError(ValidationError):
    """Invalid or inconsistent run configuration."""


class ManifestError(WeatherKDError):
    """Corpus manifest is malformed or violates its pairing invariants."""


class CheckpointIntegrityError(WeatherKDError):
    """Checkpoint file is corrupt, truncated, or fails its content hash."""


class PipelineError(WeatherKDError):
    """Pipeline orchestration failure (missing upstream artifact, held lock, ...)."""
