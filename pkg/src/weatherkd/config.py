"""Run configuration: versioned schema, presets, validation, fingerprints.

Configs load from YAML. Unknown keys are errors, every bounded field is
range-checked up front, and the canonical-JSON sha256 prefix of the full
config is the fingerprint stamped on every artifact the run produces.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .degrade import KINDS
from .errors import ConfigError
from .utils import sha256_hex, stable_json

CONFIG_SCHEMA = "weatherkd/config@1"
FINGERPRINT_LEN = 12


@dataclass
class CorpusConfig:
    kinds: tuple = ("rain", "haze", "snow")
    n_train_pairs: int = 700  # paired original-domain corpus size
    n_web: int = 300  # web-domain clean pool and degraded pool, each
    test_fraction: float = 0.2

    def validate(self) -> None:
        if not self.kinds:
            raise ConfigError("corpus.kinds is empty")
        for k in self.kinds:
            if k not in KINDS:
                raise ConfigError(f"corpus.kinds: unknown kind {k!r}")
        if len(set(self.kinds)) != len(self.kinds):
            raise ConfigError("corpus.kinds has duplicates")
        if self.n_train_pairs < 1 or self.n_web < 1:
            raise ConfigError("corpus sizes must be >= 1")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError(f"test_fraction {self.test_fraction} outside (0, 1)")


@dataclass
class AutoencoderConfig:
    base_width: int = 32
    latent_channels: int = 4
    epochs: int = 120
    batch_size: int = 32
    lr: float = 2e-3
    latent_reg: float = 1e-5

    def validate(self) -> None:
        if self.base_width < 1 or self.latent_channels < 1:
            raise ConfigError("autoencoder widths must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("autoencoder epochs/batch_size must be >= 1")
        if self.lr <= 0 or self.latent_reg < 0:
            raise ConfigError("autoencoder lr must be > 0 and latent_reg >= 0")


@dataclass
class DiffusionConfig:
    T: int = 1000
    ddim_steps: int = 70
    base_width: int = 64
    time_dim: int = 64
    epochs: int = 60
    batch_size: int = 32
    lr: float = 2e-4
    cond_dropout: float = 0.1
    guidance: float = 3.0  # class-token sampling only; adapter prompts have no null

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError(f"diffusion.T must be >= 1, got {self.T}")
        if not (1 <= self.ddim_steps <= self.T):
            raise ConfigError(f"ddim_steps {self.ddim_steps} outside [1, {self.T}]")
        if self.base_width < 1 or self.time_dim < 2 or self.time_dim % 2:
            raise ConfigError("diffusion base_width must be >= 1, time_dim even and >= 2")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("diffusion epochs/batch_size/lr out of range")
        if not (0.0 <= self.cond_dropout < 1.0):
            raise ConfigError(f"cond_dropout {self.cond_dropout} outside [0, 1)")
        if self.guidance < 1.0:
            raise ConfigError(f"guidance {self.guidance} must be >= 1")


@dataclass
class TeacherConfig:
    base_width: int = 32
    depth: int = 4
    scales: int = 2
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    lr_halving_every: int = 15

    def validate(self) -> None:
        if self.base_width < 2 or self.base_width % 2:
            raise ConfigError("teacher.base_width must be even and >= 2 (student halves it)")
        if self.depth < 0 or self.scales < 0:
            raise ConfigError("teacher depth/scales must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.lr_halving_every < 1:
            raise ConfigError("teacher training fields out of range")


@dataclass
class AdapterConfig:
    d_p: int = 64
    l_p: int = 1
    width: int = 32
    queue_capacity: int = 1024
    momentum: float = 0.999
    tau: float = 0.07
    crop: int = 32
    literal_eq3: bool = False
    momentum_keys: bool = True

    def validate(self) -> None:
        if self.d_p < 1 or self.l_p < 1 or self.width < 1:
            raise ConfigError("adapter dims must be >= 1")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum {self.momentum} outside [0, 1)")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.crop < 8:
            raise ConfigError(f"adapter.crop {self.crop} too small, need >= 8")


@dataclass
class DistillConfig:
    gamma0: float = 0.5
    lam: float = 0.5
    e1: int = 5  # joint-loss epochs before gamma drops to 0
    epochs: int = 20
    steps_per_epoch: int = 0  # 0 means one pass over the web degraded pool
    batch_size: int = 16
    lr_student: float = 1e-3
    lr_adapter: float = 1e-5
    lr_halving_every: int = 15
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    literal_eq7: bool = False
    cache_generated: bool = False
    truncate_backprop: int | None = None
    variant: str = "d4ir"
    ablation_seeds: int = 3
    eval_every: int = 0  # epochs between held-out PSNR probes; 0 = end only

    def validate(self) -> None:
        if self.gamma0 < 0:
            raise ConfigError(f"gamma0 must be >= 0, got {self.gamma0}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lam {self.lam} outside [0, 1]")
        if not (0 <= self.e1 <= self.epochs):
            raise ConfigError(f"e1 {self.e1} outside [0, epochs={self.epochs}]")
        if self.epochs < 1 or self.batch_size < 1 or self.steps_per_epoch < 0:
            raise ConfigError("distill epochs/batch_size/steps_per_epoch out of range")
        if self.lr_student <= 0 or self.lr_adapter <= 0 or self.lr_halving_every < 1:
            raise ConfigError("distill learning rates out of range")
        for b in (self.adam_beta1, self.adam_beta2):
            if not (0.0 <= b < 1.0):
                raise ConfigError(f"adam beta {b} outside [0, 1)")
        if self.truncate_backprop is not None and self.truncate_backprop < 1:
            raise ConfigError("truncate_backprop must be >= 1 or null")
        if self.ablation_seeds < 1:
            raise ConfigError("ablation_seeds must be >= 1")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")


@dataclass
class EvalConfig:
    use_quantized: bool = False
    use_luma: bool = False
    batch_size: int = 16

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("eval.batch_size must be >= 1")


@dataclass
class RunConfig:
    schema: str = CONFIG_SCHEMA
    preset: str = "desk"
    seed: int = 0
    image_size: int = 64
    deterministic: bool = True
    artifacts_root: str | None = None
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        if self.schema != CONFIG_SCHEMA:
            raise ConfigError(f"unknown config schema {self.schema!r}, expected {CONFIG_SCHEMA}")
        for sub in (self.corpus, self.autoencoder, self.diffusion, self.teacher,
                    self.adapter, self.distill, self.eval):
            sub.validate()
        if self.image_size < 16:
            raise ConfigError(f"image_size {self.image_size} too small, need >= 16")
        ae_factor = 4
        net_factor = 2 ** self.teacher.scales
        if self.image_size % max(ae_factor, net_factor):
            raise ConfigError(
                f"image_size {self.image_size} must divide {max(ae_factor, net_factor)}")
        if self.image_size // ae_factor % 2:
            raise ConfigError("latent size must be even for the two-scale denoiser")
        if self.adapter.crop > self.image_size:
            raise ConfigError(
                f"adapter.crop {self.adapter.crop} exceeds image_size {self.image_size}")
        return self

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corpus"]["kinds"] = list(self.corpus.kinds)
        return d

    @property
    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("artifacts_root")  # storage location must not change identity
        return sha256_hex(stable_json(d).encode("utf-8"))[:FINGERPRINT_LEN]

    def dump_yaml(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path


_SECTION_TYPES = {
    "corpus": CorpusConfig,
    "autoencoder": AutoencoderConfig,
    "diffusion": DiffusionConfig,
    "teacher": TeacherConfig,
    "adapter": AdapterConfig,
    "distill": DistillConfig,
    "eval": EvalConfig,
}


def _apply_section(obj, updates: dict, path: str):
    known = {f.name for f in dataclasses.fields(obj)}
    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if key == "kinds":
            value = tuple(value)
        if key == "truncate_backprop" and value is not None:
            value = int(value)
        setattr(obj, key, value)


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config root must be a mapping, got {type(d).__name__}")
    d = dict(d)
    preset_name = d.pop("preset", "desk")
    cfg = preset(preset_name)
    top_level = {}
    for key, value in d.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a mapping")
            _apply_section(getattr(cfg, key), value, f"{key}.")
        else:
            top_level[key] = value
    _apply_section(cfg, top_level, "")
    return cfg.validate()


def from_yaml(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if raw is None:
        raw = {}
    return from_dict(raw)


# ---------------------------------------------------------------------------
# presets


def _desk() -> RunConfig:
    return RunConfig(preset="desk")


def _smoke() -> RunConfig:
    """CPU-minutes scale: 32x32 images, ~300 of them end to end."""
    return RunConfig(
        preset="smoke",
        image_size=32,
        corpus=CorpusConfig(kinds=("rain", "haze", "snow"), n_train_pairs=100, n_web=50),
        autoencoder=AutoencoderConfig(base_width=32, epochs=150, batch_size=32, lr=3e-3,
                                      latent_reg=1e-5),
        diffusion=DiffusionConfig(T=1000, ddim_steps=20, base_width=32, time_dim=32,
                                  epochs=80, batch_size=32, lr=1e-3, guidance=5.0),
        teacher=TeacherConfig(base_width=16, depth=2, scales=2, epochs=40,
                              batch_size=16, lr=2e-3),
        adapter=AdapterConfig(d_p=32, width=16, queue_capacity=256, crop=16),
        distill=DistillConfig(e1=2, epochs=6, batch_size=8, steps_per_epoch=6,
                              ablation_seeds=1),
    )


def _micro() -> RunConfig:
    """Unit-test scale: a few 16x16 images, steps not quality."""
    return RunConfig(
        preset="micro",
        image_size=16,
        corpus=CorpusConfig(kinds=("rain", "haze"), n_train_pairs=6, n_web=4,
                            test_fraction=0.34),
        autoencoder=AutoencoderConfig(base_width=8, epochs=2, batch_size=4),
        diffusion=DiffusionConfig(T=50, ddim_steps=5, base_width=8, time_dim=8,
                                  epochs=2, batch_size=4),
        teacher=TeacherConfig(base_width=8, depth=1, scales=1, epochs=2, batch_size=4),
        adapter=AdapterConfig(d_p=16, width=8, queue_capacity=16, crop=8),
        distill=DistillConfig(e1=1, epochs=2, batch_size=2, steps_per_epoch=2,
                              ablation_seeds=1),
    )


_PRESETS = {"desk": _desk, "smoke": _smoke, "micro": _micro}
PRESETS = tuple(sorted(_PRESETS))


def preset(name: str) -> RunConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}, have {sorted(_PRESETS)}")
    return _PRESETS[name]().validate()
