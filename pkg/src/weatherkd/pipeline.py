"""Pipeline orchestration: stage graph, artifact layout, locking, idempotency.

Artifacts live under <root>/<config fingerprint>/, where <root> comes from an
explicit argument, config.artifacts_root, the WEATHERKD_ARTIFACTS environment
variable, or ./artifacts, in that order. Each completed stage drops a stamp
file; re-running an already-stamped stage is a no-op unless forced. A lock
file serializes runs per artifact directory.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import torch

from .checkpoint import Checkpoint
from .config import RunConfig
from .corpus import DatasetManifest, build_corpus
from .degrade import builtin_profile
from .errors import ConfigError, PipelineError
from .evaluate import evaluate_checkpoint
from .report import SampleGrid, emit_report, rows_from_ablation
from .train import (
    pretrain_teacher,
    run_ablation,
    train_autoencoder,
    train_d4ir,
    train_diffusion,
)
from .train.distill import distill_on_dataset, get_variant
from .utils import derive_seed, stable_json

ENV_ARTIFACTS = "WEATHERKD_ARTIFACTS"
STAGES = ("synth", "pretrain-ae", "pretrain-diffusion", "pretrain-teacher",
          "distill", "ablate", "eval", "report")

_STAGE_DEPS = {
    "synth": (),
    "pretrain-ae": ("synth",),
    "pretrain-diffusion": ("synth", "pretrain-ae"),
    "pretrain-teacher": ("synth",),
    "distill": ("synth", "pretrain-diffusion", "pretrain-teacher"),
    "ablate": ("synth", "pretrain-diffusion", "pretrain-teacher"),
    "eval": ("pretrain-teacher", "distill"),
    "report": ("eval",),
}


def artifacts_root(config: RunConfig | None = None, override=None) -> Path:
    if override is not None:
        return Path(override)
    if config is not None and config.artifacts_root:
        return Path(config.artifacts_root)
    env = os.environ.get(ENV_ARTIFACTS)
    if env:
        return Path(env)
    return Path("artifacts")


class Paths:
    """Canonical artifact locations for one config fingerprint."""

    def __init__(self, root: Path, fingerprint: str):
        self.dir = Path(root) / fingerprint
        self.config = self.dir / "config.yaml"
        self.lock = self.dir / "lock"
        self.stamps = self.dir / "stamps"
        self.logs = self.dir / "logs"
        self.checkpoints = self.dir / "checkpoints"
        self.original_corpus = self.dir / "corpora" / "original"
        self.web_corpus = self.dir / "corpora" / "web"
        self.autoencoder = self.checkpoints / "autoencoder.ckpt"
        self.diffusion = self.checkpoints / "diffusion.ckpt"
        self.teacher = self.checkpoints / "teacher.ckpt"
        self.eval_rows = self.dir / "eval" / "rows.jsonl"
        self.ablation_rows = self.dir / "eval" / "ablation.jsonl"
        self.report = self.dir / "report"

    def student(self, variant: str, seed: int = 0) -> Path:
        return self.checkpoints / f"student-{variant}-s{seed}.ckpt"

    def manifest(self, which: str) -> Path:
        base = self.original_corpus if which == "original" else self.web_corpus
        return base / "manifest.jsonl"

    def stamp(self, stage: str) -> Path:
        return self.stamps / f"{stage}.json"


def for_config(config: RunConfig, root=None) -> Paths:
    return Paths(artifacts_root(config, root), config.fingerprint)


@contextmanager
def pipeline_lock(paths: Paths):
    paths.dir.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(paths.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"another run holds {paths.lock}; remove it if no other run is active"
        ) from None
    try:
        os.write(fd, f"pid={os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        paths.lock.unlink(missing_ok=True)


def _is_stamped(paths: Paths, stage: str) -> bool:
    return paths.stamp(stage).exists()

def _write_stamp(paths: Paths, stage: str, config: RunConfig, t0: float) -> None:
    paths.stamps.mkdir(parents=True, exist_ok=True)
    paths.stamp(stage).write_text(stable_json({
        "stage": stage,
        "fingerprint": config.fingerprint,
        "seconds": round(time.time() - t0, 2),
    }) + "\n", encoding="utf-8")


def _require(paths: Paths, stage: str, *files) -> None:
    for f in files:
        if not Path(f).exists():
            raise PipelineError(
                f"stage {stage!r} needs missing artifact {f}; "
                f"run its producer stage first (one of: {', '.join(_STAGE_DEPS[stage])})")


def _load_manifest(paths: Paths, which: str) -> DatasetManifest:
    return DatasetManifest.load(paths.manifest(which))


# ---------------------------------------------------------------------------
# stage bodies


def stage_synth(config: RunConfig, paths: Paths) -> None:
    kinds = config.corpus.kinds
    build_corpus(
        None, builtin_profile("original", kinds), paired=True,
        n_images=config.corpus.n_train_pairs, out_dir=paths.original_corpus,
        corpus_seed=derive_seed(config.seed, "corpus", "original"),
        size=config.image_size, test_fraction=config.corpus.test_fraction,
        fingerprint=config.fingerprint)
    build_corpus(
        None, builtin_profile("web", kinds), paired=False,
        n_images=config.corpus.n_web, out_dir=paths.web_corpus,
        corpus_seed=derive_seed(config.seed, "corpus", "web"),
        size=config.image_size, test_fraction=config.corpus.test_fraction,
        fingerprint=config.fingerprint)


def stage_pretrain_ae(config: RunConfig, paths: Paths) -> None:
    _require(paths, "pretrain-ae", paths.manifest("original"), paths.manifest("web"))
    manifests = [_load_manifest(paths, "original"), _load_manifest(paths, "web")]
    paths.checkpoints.mkdir(parents=True, exist_ok=True)
    paths.logs.mkdir(parents=True, exist_ok=True)
    ckpt = train_autoencoder(manifests, config, log_path=paths.logs / "autoencoder.jsonl")
    ckpt.save(paths.autoencoder)


def stage_pretrain_diffusion(config: RunConfig, paths: Paths) -> None:
    _require(paths, "pretrain-diffusion", paths.manifest("original"),
             paths.manifest("web"), paths.autoencoder)
    manifests = [_load_manifest(paths, "original"), _load_manifest(paths, "web")]
    profile = builtin_profile("wide", config.corpus.kinds)
    ckpt = train_diffusion(manifests, profile, Checkpoint.load(paths.autoencoder),
                           config, log_path=paths.logs / "diffusion.jsonl")
    ckpt.save(paths.diffusion)


def stage_pretrain_teacher(config: RunConfig, paths: Paths) -> None:
    _require(paths, "pretrain-teacher", paths.manifest("original"))
    paths.checkpoints.mkdir(parents=True, exist_ok=True)
    paths.logs.mkdir(parents=True, exist_ok=True)
    ckpt = pretrain_teacher(_load_manifest(paths, "original"), config,
                            log_path=paths.logs / "teacher.jsonl")
    ckpt.save(paths.teacher)


def stage_distill(config: RunConfig, paths: Paths) -> None:
    variant = config.distill.variant
    v = get_variant(variant)
    needed = [paths.teacher]
    if v.generative:
        needed += [paths.diffusion, paths.manifest("web")]
    else:
        needed += [paths.manifest("web" if variant == "m0" else "original")]
    _require(paths, "distill", *needed)
    teacher_ckpt = Checkpoint.load(paths.teacher)
    original = _load_manifest(paths, "original")
    log = paths.logs / f"distill-{variant}-s0.jsonl"
    if v.generative:
        web = _load_manifest(paths, "web")
        ckpt = train_d4ir(web, web, teacher_ckpt, Checkpoint.load(paths.diffusion),
                          config, variant=variant, seed=0, log_path=log,
                          eval_manifest=original)
    else:
        source = _load_manifest(paths, "web") if variant == "m0" else original
        ckpt = distill_on_dataset(source, teacher_ckpt, config, variant=variant,
                                  seed=0, log_path=log, eval_manifest=original)
    ckpt.save(paths.student(variant, 0))


def stage_ablate(config: RunConfig, paths: Paths) -> None:
    _require(paths, "ablate", paths.teacher, paths.diffusion,
             paths.manifest("original"), paths.manifest("web"))
    web = _load_manifest(paths, "web")
    rows = run_ablation(
        config, Checkpoint.load(paths.teacher), Checkpoint.load(paths.diffusion),
        web, web, _load_manifest(paths, "original"),
        out_dir=paths.checkpoints, log_dir=paths.logs)
    paths.ablation_rows.parent.mkdir(parents=True, exist_ok=True)
    with open(paths.ablation_rows, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(stable_json(row) + "\n")


def stage_eval(config: RunConfig, paths: Paths) -> None:
    student_path = paths.student(config.distill.variant, 0)
    _require(paths, "eval", paths.teacher, student_path, paths.manifest("original"))
    manifest = _load_manifest(paths, "original")
    rows = [
        evaluate_checkpoint(Checkpoint.load(paths.teacher), manifest, method="teacher",
                            eval_config=config.eval),
        evaluate_checkpoint(Checkpoint.load(student_path), manifest,
                            method=f"student ({config.distill.variant})",
                            eval_config=config.eval),
    ]
    paths.eval_rows.parent.mkdir(parents=True, exist_ok=True)
    with open(paths.eval_rows, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(stable_json(row.to_dict()) + "\n")


def _report_grids(config: RunConfig, paths: Paths, n_samples: int = 4) -> list:
    from .train.teacher import load_restoration_net
    import numpy as np

    manifest = _load_manifest(paths, "original")
    teacher = load_restoration_net(Checkpoint.load(paths.teacher))
    student = load_restoration_net(
        Checkpoint.load(paths.student(config.distill.variant, 0)))
    pairs = manifest.pairs(split="test")[:n_samples]
    if not pairs:
        return []
    rows = []
    for clean_rec, degraded_rec in pairs:
        clean = manifest.load_image(clean_rec)
        degraded = manifest.load_image(degraded_rec)
        x = torch.from_numpy(degraded.astype(np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            t_out = teacher(x).clamp(0, 1)[0].permute(1, 2, 0).numpy()
            s_out = student(x).clamp(0, 1)[0].permute(1, 2, 0).numpy()
        rows.append([degraded, t_out.astype(np.float64), s_out.astype(np.float64), clean])
    return [SampleGrid("restorations", ("degraded", "teacher", "student", "clean"), rows)]


def stage_report(config: RunConfig, paths: Paths) -> None:
    _require(paths, "report", paths.eval_rows)
    from .evaluate import MetricRow

    rows = []
    with open(paths.eval_rows, encoding="utf-8") as fh:
        rows += [MetricRow.from_dict(json.loads(line)) for line in fh if line.strip()]
    if paths.ablation_rows.exists():
        with open(paths.ablation_rows, encoding="utf-8") as fh:
            ablation = [json.loads(line) for line in fh if line.strip()]
        rows += rows_from_ablation(ablation, dataset="original",
                                   fingerprint=config.fingerprint)
    emit_report(rows, paths.report, grids=_report_grids(config, paths),
                notes=(f"Preset: {config.preset}; image size {config.image_size}; "
                       f"seed {config.seed}.",))


_STAGE_BODIES = {
    "synth": stage_synth,
    "pretrain-ae": stage_pretrain_ae,
    "pretrain-diffusion": stage_pretrain_diffusion,
    "pretrain-teacher": stage_pretrain_teacher,
    "distill": stage_distill,
    "ablate": stage_ablate,
    "eval": stage_eval,
    "report": stage_report,
}

DEFAULT_STAGES = STAGES


def resolve_stages(spec) -> tuple:
    if spec in ("all", None):
        return DEFAULT_STAGES
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    unknown = [s for s in spec if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; valid: {', '.join(STAGES)}")
    return tuple(s for s in STAGES if s in spec)


def run_pipeline(config: RunConfig, stages="all", *, force: bool = False,
                 root=None, echo=print) -> Path:
    """Run the requested stages; returns the artifact directory."""
    config.validate()
    if not config.deterministic:
        # fresh entropy each run; the new seed lands in the fingerprint, so
        # nondeterministic runs get their own artifact directory
        config = replace(config, seed=secrets.randbits(31))
    wanted = resolve_stages(stages)
    paths = for_config(config, root)
    with pipeline_lock(paths):
        config.dump_yaml(paths.config)
        for stage in wanted:
            if _is_stamped(paths, stage) and not force:
                echo(f"[{stage}] up to date")
                continue
            t0 = time.time()
            echo(f"[{stage}] running")
            torch.manual_seed(derive_seed(config.seed, "stage", stage))
            _STAGE_BODIES[stage](config, paths)
            _write_stamp(paths, stage, config, t0)
            echo(f"[{stage}] done in {time.time() - t0:.1f}s")
    return paths.dir
