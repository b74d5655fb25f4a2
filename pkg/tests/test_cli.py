import json

import pytest
import yaml
from click.testing import CliRunner

from weatherkd.cli import cli
from weatherkd.config import preset
from weatherkd.corpus import DatasetManifest
from weatherkd.degrade import builtin_profile
from weatherkd.errors import ConfigError


@pytest.fixture()
def runner():
    return CliRunner()


def test_config_and_preset_are_exclusive(runner, tmp_path):
    cfg_file = tmp_path / "run.yaml"
    preset("micro").dump_yaml(cfg_file)
    result = runner.invoke(cli, [
        "synth", "--config", str(cfg_file), "--preset", "micro",
        "--profile", "original", "--n", "2", "--out", str(tmp_path / "c")])
    assert result.exit_code != 0
    assert isinstance(result.exception, ConfigError)
    assert "mutually exclusive" in str(result.exception)


def test_unknown_preset_rejected(runner, tmp_path):
    result = runner.invoke(cli, [
        "synth", "--preset", "nope", "--profile", "original",
        "--n", "2", "--out", str(tmp_path / "c")])
    assert result.exit_code == 2
    assert "Invalid value" in result.output


def test_synth_paired_corpus(runner, tmp_path):
    out_dir = tmp_path / "corpus"
    result = runner.invoke(cli, [
        "synth", "--preset", "micro", "--profile", "original",
        "--n", "3", "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert "wrote 6 records" in result.output
    manifest = DatasetManifest.load(out_dir / "manifest.jsonl")
    assert len(manifest.pairs()) == 3


def test_synth_profile_from_yaml_file(runner, tmp_path):
    prof_file = tmp_path / "prof.yaml"
    kinds = preset("micro").corpus.kinds
    prof_file.write_text(yaml.safe_dump(builtin_profile("web", kinds).to_dict()))
    result = runner.invoke(cli, [
        "synth", "--preset", "micro", "--profile", str(prof_file),
        "--n", "2", "--unpaired", "--out", str(tmp_path / "c")])
    assert result.exit_code == 0, result.output
    manifest = DatasetManifest.load(tmp_path / "c" / "manifest.jsonl")
    assert manifest.domain.startswith("web")  # kind-restricted name, e.g. web:rain+haze
    assert not any(r.pair_id for r in manifest.records)


def test_synth_unknown_profile_name(runner, tmp_path):
    result = runner.invoke(cli, [
        "synth", "--preset", "micro", "--profile", "storm",
        "--n", "2", "--out", str(tmp_path / "c")])
    assert result.exit_code != 0
    assert "neither a builtin" in str(result.exception)


def test_eval_then_report(runner, tmp_path, micro_run):
    paths = micro_run.paths
    rows_path = tmp_path / "rows.jsonl"
    result = runner.invoke(cli, [
        "eval", "--preset", "micro",
        "--ckpt", str(paths.teacher),
        "--manifest", str(paths.manifest("original")),
        "--out", str(rows_path)])
    assert result.exit_code == 0, result.output
    assert "teacher:" in result.output and "dB" in result.output
    assert len(rows_path.read_text().splitlines()) == 1

    report_dir = tmp_path / "report"
    result = runner.invoke(cli, [
        "report", "--preset", "micro", "--rows", str(rows_path),
        "--ablation-rows", str(paths.ablation_rows),
        "--out", str(report_dir), "--title", "Micro results"])
    assert result.exit_code == 0, result.output
    md = (report_dir / "results.md").read_text()
    assert md.startswith("# Micro results")
    assert "| teacher |" in md
    assert "| d4ir |" in md
    rows = [json.loads(line)
            for line in (report_dir / "results.jsonl").read_text().splitlines()]
    assert len(rows) == 1 + 7  # eval row + full ablation matrix


def test_run_single_stage(runner, tmp_path):
    result = runner.invoke(cli, [
        "run", "--preset", "micro", "--stages", "synth", "--root", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "[synth]" in result.output
    assert "artifacts:" in result.output
    fingerprint_dirs = [p for p in tmp_path.iterdir() if p.is_dir()]
    assert len(fingerprint_dirs) == 1
    assert (fingerprint_dirs[0] / "stamps" / "synth.json").exists()


def test_sample_with_guidance(runner, tmp_path, micro_run):
    out_path = tmp_path / "sheet.png"
    result = runner.invoke(cli, [
        "sample", "--preset", "micro",
        "--diffusion", str(micro_run.paths.diffusion),
        "--prompt-kind", "rain", "--n", "2", "--from-noise",
        "--guidance", "3", "--out", str(out_path)])
    assert result.exit_code == 0, result.output
    assert out_path.exists()
    assert "prompt=rain" in result.output


def test_sample_null_prompt_partial_noising(runner, tmp_path, micro_run):
    out_path = tmp_path / "sheet.png"
    result = runner.invoke(cli, [
        "sample", "--preset", "micro",
        "--diffusion", str(micro_run.paths.diffusion),
        "--n", "2", "--lambda", "0.5", "--out", str(out_path)])
    assert result.exit_code == 0, result.output
    assert out_path.exists()
    assert "lambda=0.5" in result.output
