"""Command-line entry points for the full pipeline and its individual stages.

Every subcommand accepts --seed / --preset / --config; --config points at a
YAML run config (its embedded preset applies), --preset picks a builtin, and
--seed overrides the config's global seed.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from . import config as config_mod
from .checkpoint import Checkpoint
from .config import RunConfig
from .corpus import DatasetManifest, build_corpus
from .degrade import DomainProfile, builtin_profile
from .errors import ConfigError, WeatherKDError
from .evaluate import MetricRow, evaluate_checkpoint
from .report import emit_report, rows_from_ablation
from .utils import derive_seed, torch_generator

VARIANT_CHOICES = ("m0", "m1", "m2", "m3", "m4", "m5", "d4ir", "data")


def common_options(f):
    f = click.option("--config", "config_path",
                     type=click.Path(exists=True, dir_okay=False),
                     default=None, help="YAML run config.")(f)
    f = click.option("--preset", "preset_name",
                     type=click.Choice(config_mod.PRESETS),
                     default=None, help="Builtin config preset.")(f)
    f = click.option("--seed", type=int, default=None,
                     help="Override the config's global seed.")(f)
    return f


def resolve_config(config_path, preset_name, seed) -> RunConfig:
    if config_path and preset_name:
        raise ConfigError("--config and --preset are mutually exclusive")
    if config_path:
        cfg = config_mod.from_yaml(config_path)
    else:
        cfg = config_mod.preset(preset_name or "desk")
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg.validate()


def load_profile(value: str, kinds) -> DomainProfile:
    """Accept a builtin profile name or a YAML profile file."""
    if value in ("original", "web", "wide"):
        return builtin_profile(value, kinds)
    path = Path(value)
    if not path.exists():
        raise ConfigError(
            f"profile {value!r} is neither a builtin (original/web/wide) nor a file")
    with open(path, encoding="utf-8") as fh:
        return DomainProfile.from_dict(yaml.safe_load(fh))


@click.group()
def cli():
    """Data-free distillation of multi-weather restoration nets."""


@cli.command()
@common_options
@click.option("--profile", required=True,
              help="Builtin profile name (original/web/wide) or a YAML profile file.")
@click.option("--n", "n_images", required=True, type=int,
              help="Pairs (paired) or pool size per role (unpaired).")
@click.option("--paired/--unpaired", default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--clean-source", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of clean images; default is procedural scenes.")
def synth(config_path, preset_name, seed, profile, n_images, paired, out_dir, clean_source):
    """Synthesize a degraded corpus and write its manifest."""
    cfg = resolve_config(config_path, preset_name, seed)
    prof = load_profile(profile, cfg.corpus.kinds)
    manifest = build_corpus(
        clean_source, prof, paired=paired, n_images=n_images, out_dir=out_dir,
        corpus_seed=cfg.seed, size=cfg.image_size,
        test_fraction=cfg.corpus.test_fraction, fingerprint=cfg.fingerprint)
    click.echo(f"wrote {len(manifest.records)} records to "
               f"{Path(out_dir) / 'manifest.jsonl'} (domain={manifest.domain})")


def _load_manifests(paths) -> list:
    return [DatasetManifest.load(p) for p in paths]


@cli.command("pretrain-ae")
@common_options
@click.option("--manifest", "manifests", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
def pretrain_ae_cmd(config_path, preset_name, seed, manifests, out_path, log_path):
    """Train the latent autoencoder on corpus images."""
    from .train import train_autoencoder

    cfg = resolve_config(config_path, preset_name, seed)
    ckpt = train_autoencoder(_load_manifests(manifests), cfg, log_path=log_path)
    ckpt.save(out_path)
    click.echo(f"autoencoder checkpoint: {out_path} "
               f"(recon {ckpt.metrics['recon_psnr_db']:.2f} dB)")


@cli.command("pretrain-diffusion")
@common_options
@click.option("--manifest", "manifests", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Manifests whose clean images seed the training set.")
@click.option("--ae", "ae_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--profile", default="wide", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
def pretrain_diffusion_cmd(config_path, preset_name, seed, manifests, ae_path,
                           profile, out_path, log_path):
    """Train the class-conditioned latent denoiser."""
    from .train import train_diffusion

    cfg = resolve_config(config_path, preset_name, seed)
    prof = load_profile(profile, cfg.corpus.kinds)
    ckpt = train_diffusion(_load_manifests(manifests), prof, Checkpoint.load(ae_path),
                           cfg, log_path=log_path)
    ckpt.save(out_path)
    click.echo(f"diffusion checkpoint: {out_path}")


@cli.command("pretrain-teacher")
@common_options
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
def pretrain_teacher_cmd(config_path, preset_name, seed, manifest_path, out_path, log_path):
    """Train the teacher restoration net on a paired corpus."""
    from .train import pretrain_teacher

    cfg = resolve_config(config_path, preset_name, seed)
    ckpt = pretrain_teacher(DatasetManifest.load(manifest_path), cfg, log_path=log_path)
    ckpt.save(out_path)
    click.echo(f"teacher checkpoint: {out_path} "
               f"(test {ckpt.metrics['test_psnr_db']:.2f} dB over degraded "
               f"{ckpt.metrics['degraded_psnr_db']:.2f} dB)")


@cli.command()
@common_options
@click.option("--variant", type=click.Choice(VARIANT_CHOICES), default="d4ir",
              show_default=True)
@click.option("--teacher", "teacher_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--diffusion", "diffusion_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Required for generative variants.")
@click.option("--web-manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Unpaired web corpus (degraded + clean pools).")
@click.option("--data-manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Degraded source for the direct variants (m0, data).")
@click.option("--eval-manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Paired manifest for final held-out scores.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
@click.option("--replicate", type=int, default=0, show_default=True,
              help="Replicate index; shifts the run's RNG streams only.")
@click.option("--resume-from", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--cache-generated", is_flag=True, default=False,
              help="Pregenerate the synthetic set once instead of per batch.")
def distill(config_path, preset_name, seed, variant, teacher_path, diffusion_path,
            web_manifest, data_manifest, eval_manifest, out_path, log_path,
            replicate, resume_from, cache_generated):
    """Distill the student, either from generated data or straight from a dataset."""
    from .train.distill import DistillTrainer, get_variant

    cfg = resolve_config(config_path, preset_name, seed)
    if cache_generated:
        cfg = dataclasses.replace(
            cfg, distill=dataclasses.replace(cfg.distill, cache_generated=True))
    v = get_variant(variant)
    teacher_ckpt = Checkpoint.load(teacher_path)
    eval_m = DatasetManifest.load(eval_manifest) if eval_manifest else None
    if v.generative:
        if not (diffusion_path and web_manifest):
            raise ConfigError(f"variant {variant!r} needs --diffusion and --web-manifest")
        web = DatasetManifest.load(web_manifest)
        trainer = DistillTrainer(
            cfg, v, teacher_ckpt, Checkpoint.load(diffusion_path),
            web_degraded_manifest=web, web_clean_manifest=web,
            seed=replicate, log_path=log_path, eval_manifest=eval_m)
    else:
        source = data_manifest or web_manifest
        if source is None:
            raise ConfigError(f"variant {variant!r} needs --data-manifest")
        trainer = DistillTrainer(
            cfg, v, teacher_ckpt, direct_manifest=DatasetManifest.load(source),
            seed=replicate, log_path=log_path, eval_manifest=eval_m)
    if resume_from:
        trainer.load_state(Checkpoint.load(resume_from))
    ckpt = trainer.run()
    ckpt.save(out_path)
    msg = f"student checkpoint: {out_path}"
    if "test_psnr_db" in ckpt.metrics:
        msg += f" (test {ckpt.metrics['test_psnr_db']:.2f} dB)"
    click.echo(msg)


@cli.command()
@common_options
@click.option("--teacher", "teacher_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--diffusion", "diffusion_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--web-manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--eval-manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Destination JSONL for the ablation rows.")
@click.option("--ckpt-dir", type=click.Path(file_okay=False), default=None)
@click.option("--log-dir", type=click.Path(file_okay=False), default=None)
@click.option("--include-extra", is_flag=True, default=False,
              help="Also run the pure_noise+none variant (beyond the reference matrix).")
def ablate(config_path, preset_name, seed, teacher_path, diffusion_path, web_manifest,
           eval_manifest, out_path, ckpt_dir, log_dir, include_extra):
    """Run the variant matrix and write one scored row per variant."""
    from .train import run_ablation
    from .train.distill import ABLATION_MATRIX
    from .utils import stable_json

    cfg = resolve_config(config_path, preset_name, seed)
    matrix = ABLATION_MATRIX + (("extra",) if include_extra else ())
    web = DatasetManifest.load(web_manifest)
    rows = run_ablation(cfg, Checkpoint.load(teacher_path), Checkpoint.load(diffusion_path),
                        web, web, DatasetManifest.load(eval_manifest),
                        matrix=matrix, out_dir=ckpt_dir, log_dir=log_dir)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(stable_json(row) + "\n")
    for row in rows:
        click.echo(f"{row['variant']:>5}: {row['psnr_db']:.2f} dB / {row['ssim']:.4f} SSIM")
    click.echo(f"ablation rows: {out}")


@cli.command("eval")
@common_options
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--allow-mixed", is_flag=True, default=False,
              help="Permit artifacts from different config fingerprints.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Append the row to this JSONL file.")
def eval_cmd(config_path, preset_name, seed, ckpt_path, manifest_path, allow_mixed, out_path):
    """Score a restoration checkpoint on a paired manifest's test split."""
    from .utils import stable_json

    cfg = resolve_config(config_path, preset_name, seed)
    row = evaluate_checkpoint(
        Checkpoint.load(ckpt_path), DatasetManifest.load(manifest_path),
        eval_config=cfg.eval, allow_mixed=allow_mixed)
    if out_path:
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "a", encoding="utf-8") as fh:
            fh.write(stable_json(row.to_dict()) + "\n")
    click.echo(f"{row.method}: {row.psnr_db:.2f} dB / {row.ssim:.4f} SSIM "
               f"({row.params_m:.3f}M params, dataset={row.dataset})")


@cli.command()
@common_options
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSONL of metric rows (from `eval --out`).")
@click.option("--ablation-rows", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--title", default="Restoration results", show_default=True)
def report(config_path, preset_name, seed, rows_path, ablation_rows, out_dir, title):
    """Render metric rows into results.md / results.jsonl (table-only)."""
    resolve_config(config_path, preset_name, seed)
    rows = []
    with open(rows_path, encoding="utf-8") as fh:
        rows += [MetricRow.from_dict(json.loads(line)) for line in fh if line.strip()]
    if ablation_rows:
        with open(ablation_rows, encoding="utf-8") as fh:
            parsed = [json.loads(line) for line in fh if line.strip()]
        dataset = rows[0].dataset if rows else "original"
        rows += rows_from_ablation(parsed, dataset=dataset)
    out = emit_report(rows, out_dir, title=title)
    click.echo(f"report written to {out}")


@cli.command()
@common_options
@click.option("--stages", default="all", show_default=True,
              help="'all' or a comma-separated subset (ablate is opt-in).")
@click.option("--force", is_flag=True, default=False,
              help="Re-run stages even when stamped up to date.")
@click.option("--root", type=click.Path(file_okay=False), default=None,
              help="Artifacts root (overrides config and WEATHERKD_ARTIFACTS).")
def run(config_path, preset_name, seed, stages, force, root):
    """Run the pipeline stages in order under one artifact directory."""
    from .pipeline import run_pipeline

    cfg = resolve_config(config_path, preset_name, seed)
    out = run_pipeline(cfg, stages, force=force, root=root, echo=click.echo)
    click.echo(f"artifacts: {out}")


@cli.command()
@common_options
@click.option("--lambda", "lam", type=float, default=None,
              help="Partial-noising level in [0,1]; default from the config.")
@click.option("--prompt-kind", default="null", show_default=True,
              help="Class token to condition on, or 'null' for unconditioned.")
@click.option("--diffusion", "diffusion_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--clean-manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Source of content images; default is procedural scenes.")
@click.option("--n", "n_samples", type=int, default=4, show_default=True)
@click.option("--from-noise", is_flag=True, default=False,
              help="Sample from pure noise instead of partially noised content.")
@click.option("--guidance", type=float, default=None,
              help="Unconditional-extrapolation scale (1 disables); default from the config.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def sample(config_path, preset_name, seed, lam, prompt_kind, diffusion_path,
           clean_manifest, n_samples, from_noise, guidance, out_path):
    """Generate images from the frozen diffusion model; writes a contact sheet."""
    from .diffusion.sampler import generate, generate_from_noise
    from .report import contact_sheet
    from .scenes import make_scene
    from .train.diffusion import load_diffusion
    from .utils import save_image

    cfg = resolve_config(config_path, preset_name, seed)
    ae, unet, bank, schedule = load_diffusion(Checkpoint.load(diffusion_path))
    lam = cfg.distill.lam if lam is None else lam
    gen = torch_generator(derive_seed(cfg.seed, "sample", prompt_kind))

    if guidance is None:
        guidance = cfg.diffusion.guidance
    if prompt_kind == "null":
        prompt = bank.null_tokens(n_samples)
        guidance = 1.0  # no conditional signal to amplify
    else:
        prompt = bank.tokens_for(prompt_kind, n_samples)
    null_prompt = bank.null_tokens(n_samples) if guidance != 1.0 else None

    size = cfg.image_size
    if clean_manifest:
        manifest = DatasetManifest.load(clean_manifest)
        records = manifest.select(role="clean", split="test")[:n_samples]
        if len(records) < n_samples:
            records = manifest.select(role="clean")[:n_samples]
        clean_np = np.stack([manifest.load_image(r) for r in records])
    else:
        clean_np = np.stack([
            make_scene(size, (cfg.seed, "sample-scene", i)) for i in range(n_samples)])
    clean = torch.from_numpy(clean_np.astype(np.float32)).permute(0, 3, 1, 2)

    with torch.no_grad():
        if from_noise:
            shape = (n_samples, ae.latent_channels,
                     clean.shape[2] // 4, clean.shape[3] // 4)
            out = generate_from_noise(ae, unet, schedule, shape, prompt, generator=gen,
                                      guidance=guidance, null_prompt=null_prompt)
        else:
            out = generate(ae, unet, schedule, clean, prompt, lam, generator=gen,
                           guidance=guidance, null_prompt=null_prompt)
    out_np = out.clamp(0, 1).permute(0, 2, 3, 1).numpy().astype(np.float64)
    sheet = contact_sheet([[clean_np[i], out_np[i]] for i in range(n_samples)])
    save_image(sheet, out_path)
    click.echo(f"sampled {n_samples} images (lambda={lam}, prompt={prompt_kind}) "
               f"-> {out_path}")


def main():
    try:
        cli(standalone_mode=True)
    except WeatherKDError as exc:
        raise SystemExit(f"error: {exc}") from exc


if __name__ == "__main__":
    main()
