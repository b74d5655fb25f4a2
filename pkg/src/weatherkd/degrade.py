"""Procedural weather degradations: rain streaks, haze, snow, sensor noise.

Rain and snow composite an additive occlusion layer rendered through a
motion/disc kernel onto the clean image; haze follows the homogeneous
atmospheric scattering model ``y = t * x + (1 - t) * A``. Every kind may
add Gaussian pixel noise. All outputs are clipped to [0, 1] and are
deterministic for a fixed (image, spec, seed) triple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ValidationError
from .utils import rng_from

KINDS = ("rain", "haze", "snow", "noise-only")

# per-field validation bounds; densities are per kilopixel
ANGLE_RANGE = (-90.0, 90.0)
LENGTH_RANGE = (1.0, 99.0)
DENSITY_RANGE = (0.0, 50.0)
RADIUS_RANGE = (0.0, 16.0)
UNIT_RANGE = (0.0, 1.0)


def _check_range(name: str, value: float, lo: float, hi: float) -> None:
    if not np.isfinite(value) or not (lo <= value <= hi):
        raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class RainParams:
    angle: float = 0.0  # degrees from vertical, positive tilts clockwise
    length: float = 9.0  # streak length in pixels
    density: float = 2.0  # streaks per kilopixel
    streak_intensity: float = 0.6  # brightness of a streak, in [0,1]

    def validate(self) -> None:
        _check_range("rain.angle", self.angle, *ANGLE_RANGE)
        _check_range("rain.density", self.density, *DENSITY_RANGE)
        _check_range("rain.streak_intensity", self.streak_intensity, *UNIT_RANGE)
        if self.density > 0:
            _check_range("rain.length", self.length, *LENGTH_RANGE)
        elif self.length < 0:
            raise ValidationError("rain.length must be >= 0")


@dataclass(frozen=True)
class HazeParams:
    transmission: float = 0.6  # t in [0,1]; t=1 is haze-free
    airlight: tuple[float, float, float] = (0.85, 0.85, 0.85)

    def validate(self) -> None:
        _check_range("haze.transmission", self.transmission, *UNIT_RANGE)
        if len(self.airlight) != 3:
            raise ValidationError("haze.airlight must have 3 channels")
        for c, a in zip("rgb", self.airlight):
            _check_range(f"haze.airlight.{c}", a, *UNIT_RANGE)


@dataclass(frozen=True)
class SnowParams:
    flake_radius: float = 1.5  # flake radius in pixels
    density: float = 2.0  # flakes per kilopixel
    opacity: float = 0.7  # blend strength toward white, in [0,1]

    def validate(self) -> None:
        _check_range("snow.density", self.density, *DENSITY_RANGE)
        _check_range("snow.opacity", self.opacity, *UNIT_RANGE)
        if self.density > 0:
            if not (0.5 <= self.flake_radius <= RADIUS_RANGE[1]):
                raise ValidationError(f"snow.flake_radius={self.flake_radius} outside [0.5, {RADIUS_RANGE[1]}]")
        elif self.flake_radius < 0:
            raise ValidationError("snow.flake_radius must be >= 0")


@dataclass(frozen=True)
class DegradationSpec:
    """Fully determined recipe for one degraded image."""

    kind: str
    rain: RainParams | None = None
    haze: HazeParams | None = None
    snow: SnowParams | None = None
    noise_sigma: float = 0.0

    def validate(self) -> "DegradationSpec":
        if self.kind not in KINDS:
            raise ValidationError(f"unknown degradation kind {self.kind!r}")
        _check_range("noise_sigma", self.noise_sigma, *UNIT_RANGE)
        params = {"rain": self.rain, "haze": self.haze, "snow": self.snow}
        needed = self.kind if self.kind != "noise-only" else None
        for name, p in params.items():
            if name == needed:
                if p is None:
                    raise ValidationError(f"kind={self.kind!r} requires {name} parameters")
                p.validate()
            elif p is not None:
                raise ValidationError(f"kind={self.kind!r} must not carry {name} parameters")
        return self

    @property
    def is_identity(self) -> bool:
        """True when the spec denotes the identity degradation."""
        if self.noise_sigma > 0:
            return False
        if self.kind == "rain":
            return self.rain.density == 0
        if self.kind == "haze":
            return self.haze.transmission == 1.0
        if self.kind == "snow":
            return self.snow.density == 0
        return True  # noise-only with sigma == 0

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "noise_sigma": self.noise_sigma}
        if self.rain is not None:
            out["rain"] = {
                "angle": self.rain.angle,
                "length": self.rain.length,
                "density": self.rain.density,
                "streak_intensity": self.rain.streak_intensity,
            }
        if self.haze is not None:
            out["haze"] = {
                "transmission": self.haze.transmission,
                "airlight": list(self.haze.airlight),
            }
        if self.snow is not None:
            out["snow"] = {
                "flake_radius": self.snow.flake_radius,
                "density": self.snow.density,
                "opacity": self.snow.opacity,
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        rain = RainParams(**d["rain"]) if "rain" in d else None
        haze = None
        if "haze" in d:
            haze = HazeParams(
                transmission=d["haze"]["transmission"],
                airlight=tuple(d["haze"]["airlight"]),
            )
        snow = SnowParams(**d["snow"]) if "snow" in d else None
        return cls(
            kind=d["kind"],
            rain=rain,
            haze=haze,
            snow=snow,
            noise_sigma=d.get("noise_sigma", 0.0),
        ).validate()


# ---------------------------------------------------------------------------
# rendering


def motion_line_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Anti-aliased line kernel used to smear impulses into streaks.

    angle 0 gives a vertical streak; the kernel peak is normalized to 1 so an
    impulse of amplitude a renders a streak of brightness about a.
    """
    size = int(math.ceil(length))
    size = size + 1 if size % 2 == 0 else size
    size = max(size, 1)
    half = size // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    theta = math.radians(angle_deg)
    # direction of the streak (angle from the vertical axis)
    du, dv = math.sin(theta), math.cos(theta)
    along = xs * du + ys * dv
    across = -xs * dv + ys * du
    profile = np.clip(1.0 - np.abs(across), 0.0, 1.0)
    extent = np.clip(length / 2.0 + 0.5 - np.abs(along), 0.0, 1.0)
    kernel = profile * extent
    peak = kernel.max()
    if peak <= 0:
        kernel[half, half] = 1.0
        peak = 1.0
    return kernel / peak


def _render_rain(img: np.ndarray, p: RainParams, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    kernel = motion_line_kernel(p.length, p.angle)
    if min(h, w) < kernel.shape[0]:
        raise ValidationError(
            f"image {h}x{w} smaller than streak kernel {kernel.shape[0]}x{kernel.shape[0]}"
        )
    n = int(round(p.density * h * w / 1000.0))
    if n == 0 or p.streak_intensity == 0.0:
        return img
    impulses = np.zeros((h, w), dtype=np.float64)
    ys = rng.integers(0, h, size=n)
    xs = rng.integers(0, w, size=n)
    amps = p.streak_intensity * rng.uniform(0.5, 1.0, size=n)
    np.add.at(impulses, (ys, xs), amps)
    streaks = fftconvolve(impulses, kernel, mode="same")
    return np.clip(img + streaks[:, :, None], 0.0, 1.0)


def _render_haze(img: np.ndarray, p: HazeParams) -> np.ndarray:
    t = p.transmission
    airlight = np.asarray(p.airlight, dtype=np.float64)
    return t * img + (1.0 - t) * airlight[None, None, :]


def _render_snow(img: np.ndarray, p: SnowParams, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    n = int(round(p.density * h * w / 1000.0))
    if n == 0 or p.opacity == 0.0:
        return img
    mask = np.zeros((h, w), dtype=np.float64)
    centers_y = rng.uniform(0, h, size=n)
    centers_x = rng.uniform(0, w, size=n)
    radii = p.flake_radius * rng.uniform(0.7, 1.3, size=n)
    for cy, cx, r in zip(centers_y, centers_x, radii):
        y0, y1 = max(int(cy - r - 1), 0), min(int(cy + r + 2), h)
        x0, x1 = max(int(cx - r - 1), 0), min(int(cx + r + 2), w)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dist = np.hypot(yy - cy, xx - cx)
        disc = np.clip(r + 0.5 - dist, 0.0, 1.0)
        mask[y0:y1, x0:x1] = np.maximum(mask[y0:y1, x0:x1], disc)
    blend = p.opacity * mask[:, :, None]
    return img + blend * (1.0 - img)


def apply_degradation(clean: np.ndarray, spec: DegradationSpec, rng_seed: int) -> np.ndarray:
    """Degrade a clean (H, W, 3) image in [0,1] according to spec.

    Deterministic for fixed (clean, spec, rng_seed); output is clipped to
    [0,1] and has the input's shape. A zero-strength spec returns the input
    unchanged.
    """
    spec.validate()
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) image, got shape {clean.shape}")
    if clean.min() < 0.0 or clean.max() > 1.0 or not np.isfinite(clean).all():
        raise ValidationError("clean image values must lie in [0, 1]")

    if spec.is_identity:
        return clean.copy()

    rng = rng_from(rng_seed)
    out = clean
    if spec.kind == "rain":
        out = _render_rain(out, spec.rain, rng)
    elif spec.kind == "haze":
        out = _render_haze(out, spec.haze)
    elif spec.kind == "snow":
        out = _render_snow(out, spec.snow, rng)
    if spec.noise_sigma > 0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# domain profiles


@dataclass(frozen=True)
class ParamDist:
    """Scalar sampling distribution with hard bounds: uniform, truncated normal, or const."""

    dist: str
    a: float = 0.0
    b: float = 0.0

    def validate(self, name: str, lo: float, hi: float) -> None:
        if self.dist == "uniform":
            if not (lo <= self.a <= self.b <= hi):
                raise ValidationError(f"{name}: uniform({self.a}, {self.b}) outside [{lo}, {hi}]")
        elif self.dist == "const":
            _check_range(name, self.a, lo, hi)
        elif self.dist == "normal":
            if self.b < 0:
                raise ValidationError(f"{name}: normal std must be >= 0")
            _check_range(f"{name}.mean", self.a, lo, hi)
        else:
            raise ValidationError(f"{name}: unknown distribution {self.dist!r}")

    def sample(self, rng: np.random.Generator, lo: float, hi: float) -> float:
        if self.dist == "uniform":
            return float(rng.uniform(self.a, self.b))
        if self.dist == "const":
            return float(self.a)
        return float(np.clip(rng.normal(self.a, self.b), lo, hi))

    def bounds(self) -> tuple[float, float]:
        if self.dist == "const":
            return (self.a, self.a)
        return (self.a, self.b) if self.dist == "uniform" else (-np.inf, np.inf)

    def to_dict(self) -> dict:
        if self.dist == "const":
            return {"const": self.a}
        return {self.dist: [self.a, self.b]}

    @classmethod
    def from_dict(cls, d) -> "ParamDist":
        if isinstance(d, (int, float)):
            return cls("const", float(d))
        if not isinstance(d, dict) or len(d) != 1:
            raise ValidationError(f"bad distribution descriptor: {d!r}")
        key, val = next(iter(d.items()))
        if key == "const":
            return cls("const", float(val))
        if key in ("uniform", "normal"):
            a, b = val
            return cls(key, float(a), float(b))
        raise ValidationError(f"unknown distribution {key!r}")


# field name -> validation bounds, per kind
_FIELD_BOUNDS = {
    "rain": {
        "angle": ANGLE_RANGE,
        "length": LENGTH_RANGE,
        "density": DENSITY_RANGE,
        "streak_intensity": UNIT_RANGE,
        "noise_sigma": UNIT_RANGE,
    },
    "haze": {
        "transmission": UNIT_RANGE,
        "airlight": UNIT_RANGE,
        "noise_sigma": UNIT_RANGE,
    },
    "snow": {
        "flake_radius": (0.5, RADIUS_RANGE[1]),
        "density": DENSITY_RANGE,
        "opacity": UNIT_RANGE,
        "noise_sigma": UNIT_RANGE,
    },
    "noise-only": {"noise_sigma": UNIT_RANGE},
}

AIRLIGHT_JITTER = 0.02  # per-channel spread around the sampled airlight base


@dataclass(frozen=True)
class DomainProfile:
    """Sampling distributions that define one data domain.

    The original-vs-web domain shift is realized by giving the two profiles
    disjoint or offset parameter ranges.
    """

    name: str
    weights: dict = field(default_factory=dict)  # kind -> mixture weight
    params: dict = field(default_factory=dict)  # kind -> {field -> ParamDist}

    def validate(self) -> "DomainProfile":
        if not self.weights:
            raise ValidationError("profile has no degradation kinds")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"kind mixture weights sum to {total}, expected 1")
        for kind, weight in self.weights.items():
            if kind not in KINDS:
                raise ValidationError(f"unknown kind {kind!r} in profile {self.name!r}")
            if weight < 0:
                raise ValidationError("mixture weights must be >= 0")
            fields = _FIELD_BOUNDS[kind]
            dists = self.params.get(kind, {})
            missing = set(fields) - set(dists)
            if missing:
                raise ValidationError(f"profile {self.name!r}/{kind}: missing fields {sorted(missing)}")
            extra = set(dists) - set(fields)
            if extra:
                raise ValidationError(f"profile {self.name!r}/{kind}: unknown fields {sorted(extra)}")
            for fname, dist in dists.items():
                dist.validate(f"{self.name}/{kind}.{fname}", *fields[fname])
        return self

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k for k in KINDS if self.weights.get(k, 0.0) > 0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "weights": dict(self.weights),
            "params": {
                kind: {fname: d.to_dict() for fname, d in fields.items()}
                for kind, fields in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainProfile":
        params = {
            kind: {fname: ParamDist.from_dict(v) for fname, v in fields.items()}
            for kind, fields in d.get("params", {}).items()
        }
        return cls(name=d["name"], weights=dict(d["weights"]), params=params).validate()


def sample_spec(profile: DomainProfile, rng_seed: int) -> DegradationSpec:
    """Draw one degradation spec from a domain profile, reproducibly."""
    profile.validate()
    rng = rng_from(rng_seed)
    kinds = sorted(profile.weights, key=KINDS.index)
    weights = np.array([profile.weights[k] for k in kinds], dtype=np.float64)
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    bounds = _FIELD_BOUNDS[kind]
    values = {
        fname: profile.params[kind][fname].sample(rng, *bounds[fname])
        for fname in sorted(bounds)
    }
    sigma = values.pop("noise_sigma")
    if kind == "rain":
        spec = DegradationSpec(kind, rain=RainParams(
            angle=values["angle"], length=values["length"],
            density=values["density"], streak_intensity=values["streak_intensity"]),
            noise_sigma=sigma)
    elif kind == "haze":
        base = values["airlight"]
        jitter = rng.normal(0.0, AIRLIGHT_JITTER, size=3)
        airlight = tuple(float(np.clip(base + j, 0.0, 1.0)) for j in jitter)
        spec = DegradationSpec(kind, haze=HazeParams(
            transmission=values["transmission"], airlight=airlight), noise_sigma=sigma)
    elif kind == "snow":
        spec = DegradationSpec(kind, snow=SnowParams(
            flake_radius=values["flake_radius"], density=values["density"],
            opacity=values["opacity"]), noise_sigma=sigma)
    else:
        spec = DegradationSpec(kind, noise_sigma=sigma)
    return spec.validate()


# Built-in profiles. "original" is the domain the teacher is pretrained on,
# "web" a shifted stand-in for images collected in the wild, and "wide" the
# union of both (used to pretrain the generative model and the kind
# classifier on a broad data distribution).
_PROFILE_TABLES = {
    "original": {
        "rain": {"angle": ("uniform", -20.0, 0.0), "length": ("uniform", 7.0, 11.0),
                 "density": ("uniform", 5.0, 9.0), "streak_intensity": ("uniform", 0.35, 0.6),
                 "noise_sigma": ("uniform", 0.0, 0.02)},
        "haze": {"transmission": ("uniform", 0.45, 0.7), "airlight": ("uniform", 0.75, 0.9),
                 "noise_sigma": ("uniform", 0.0, 0.02)},
        "snow": {"flake_radius": ("uniform", 2.0, 3.0), "density": ("uniform", 4.0, 7.0),
                 "opacity": ("uniform", 0.8, 1.0), "noise_sigma": ("uniform", 0.0, 0.02)},
        "noise-only": {"noise_sigma": ("uniform", 0.02, 0.08)},
    },
    "web": {
        "rain": {"angle": ("uniform", 0.0, 20.0), "length": ("uniform", 9.0, 14.0),
                 "density": ("uniform", 7.0, 13.0), "streak_intensity": ("uniform", 0.45, 0.75),
                 "noise_sigma": ("uniform", 0.0, 0.03)},
        "haze": {"transmission": ("uniform", 0.3, 0.55), "airlight": ("uniform", 0.8, 0.95),
                 "noise_sigma": ("uniform", 0.0, 0.03)},
        "snow": {"flake_radius": ("uniform", 2.4, 3.6), "density": ("uniform", 6.0, 10.0),
                 "opacity": ("uniform", 0.85, 1.0), "noise_sigma": ("uniform", 0.0, 0.03)},
        "noise-only": {"noise_sigma": ("uniform", 0.04, 0.12)},
    },
    "wide": {
        "rain": {"angle": ("uniform", -20.0, 20.0), "length": ("uniform", 7.0, 14.0),
                 "density": ("uniform", 5.0, 13.0), "streak_intensity": ("uniform", 0.35, 0.75),
                 "noise_sigma": ("uniform", 0.0, 0.03)},
        "haze": {"transmission": ("uniform", 0.3, 0.7), "airlight": ("uniform", 0.75, 0.95),
                 "noise_sigma": ("uniform", 0.0, 0.03)},
        "snow": {"flake_radius": ("uniform", 2.0, 3.6), "density": ("uniform", 4.0, 10.0),
                 "opacity": ("uniform", 0.8, 1.0), "noise_sigma": ("uniform", 0.0, 0.03)},
        "noise-only": {"noise_sigma": ("uniform", 0.02, 0.12)},
    },
}


def builtin_profile(domain: str, kinds=("rain",), weights=None) -> DomainProfile:
    """One of the built-in domains ("original", "web", "wide") restricted to kinds."""
    if domain not in _PROFILE_TABLES:
        raise ValidationError(f"unknown builtin domain {domain!r}, have {sorted(_PROFILE_TABLES)}")
    kinds = tuple(kinds)
    for k in kinds:
        if k not in KINDS:
            raise ValidationError(f"unknown kind {k!r}")
    if weights is None:
        weights = {k: 1.0 / len(kinds) for k in kinds}
    params = {
        kind: {fname: ParamDist(spec[0], spec[1], spec[2])
               for fname, spec in _PROFILE_TABLES[domain][kind].items()}
        for kind in kinds
    }
    return DomainProfile(name=f"{domain}:{'+'.join(kinds)}", weights=dict(weights), params=params).validate()
