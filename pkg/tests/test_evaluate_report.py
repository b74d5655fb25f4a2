import dataclasses
import json
import math

import numpy as np
import pytest

from weatherkd.checkpoint import Checkpoint
from weatherkd.corpus import DatasetManifest
from weatherkd.errors import ManifestError, PipelineError, ValidationError
from weatherkd.evaluate import (
    PSNR_SENTINEL,
    MetricRow,
    check_fingerprints,
    evaluate_checkpoint,
    evaluate_many,
    score_restoration,
)
from weatherkd.report import (
    PUBLISHED_REFERENCE,
    SampleGrid,
    contact_sheet,
    emit_report,
    rows_from_ablation,
)
from weatherkd.train.teacher import load_restoration_net
from weatherkd.utils import float_to_uint8


def make_row(**kw):
    base = dict(method="d4ir", params_m=0.123, psnr_db=27.5, ssim=0.91,
                dataset="original", seeds=(0, 1), fingerprint="abc123",
                extra={"n_pairs": 4})
    base.update(kw)
    return MetricRow(**base)


# -- MetricRow -----------------------------------------------------------------


def test_metric_row_round_trip():
    row = make_row()
    again = MetricRow.from_dict(row.to_dict())
    assert again == row


def test_metric_row_inf_uses_sentinel():
    row = make_row(psnr_db=math.inf, extra={})
    d = row.to_dict()
    assert d["psnr_db"] == PSNR_SENTINEL == "inf"
    json.dumps(d)  # sentinel keeps the dict serializable
    assert MetricRow.from_dict(d).psnr_db == math.inf


def test_metric_row_from_dict_defaults():
    row = MetricRow.from_dict({
        "method": "teacher", "params_m": 1, "psnr_db": 30.0,
        "ssim": 0.9, "dataset": "web"})
    assert row.seeds == (0,)
    assert row.fingerprint == ""
    assert row.extra == {}


def test_metric_row_validation():
    with pytest.raises(ValidationError):
        make_row(ssim=1.5).validate()
    with pytest.raises(ValidationError):
        make_row(psnr_db=math.nan).validate()
    make_row(psnr_db=math.inf).validate()  # identical images are legal


# -- fingerprint hygiene -------------------------------------------------------


def test_check_fingerprints_common():
    assert check_fingerprints([("a", "f1"), ("b", "f1")]) == "f1"
    assert check_fingerprints([]) == ""


def test_check_fingerprints_mixed():
    with pytest.raises(PipelineError) as exc:
        check_fingerprints([("ckpt", "f1"), ("manifest", "f2")])
    assert "ckpt" in str(exc.value) and "manifest" in str(exc.value)
    # explicit override returns one of the fingerprints instead of raising
    assert check_fingerprints([("ckpt", "f1"), ("manifest", "f2")],
                              allow_mixed=True) in ("f1", "f2")


# -- scoring on real artifacts -------------------------------------------------


@pytest.fixture(scope="module")
def eval_parts(micro_run):
    paths = micro_run.paths
    return {
        "cfg": micro_run.cfg,
        "teacher": Checkpoint.load(paths.teacher),
        "original": DatasetManifest.load(paths.manifest("original")),
        "web": DatasetManifest.load(paths.manifest("web")),
    }


def test_score_restoration_keys_and_mode(eval_parts):
    net = load_restoration_net(eval_parts["teacher"])
    net.train()
    scores = score_restoration(net, eval_parts["original"])
    assert net.training  # caller's mode is restored after eval
    assert set(scores) == {"test_psnr_db", "test_ssim", "degraded_psnr_db", "n_pairs"}
    assert scores["n_pairs"] == len(eval_parts["original"].pairs(split="test"))
    assert math.isfinite(scores["test_psnr_db"])
    assert math.isfinite(scores["degraded_psnr_db"])
    assert -1.0 <= scores["test_ssim"] <= 1.0


def test_score_restoration_needs_pairs(eval_parts):
    net = load_restoration_net(eval_parts["teacher"])
    with pytest.raises(ManifestError):
        score_restoration(net, eval_parts["web"])  # unpaired corpus


def test_evaluate_checkpoint_row(eval_parts):
    row = evaluate_checkpoint(eval_parts["teacher"], eval_parts["original"])
    row.validate()
    assert row.method == "teacher"
    assert row.params_m > 0
    assert row.dataset == eval_parts["original"].domain
    assert row.fingerprint == eval_parts["teacher"].fingerprint
    assert row.extra["n_pairs"] > 0
    assert "degraded_psnr_db" in row.extra
    named = evaluate_checkpoint(eval_parts["teacher"], eval_parts["original"],
                                method="reference", seeds=(3, 4))
    assert named.method == "reference" and named.seeds == (3, 4)


def test_evaluate_checkpoint_rejects_wrong_kind(micro_run, eval_parts):
    diffusion = Checkpoint.load(micro_run.paths.diffusion)
    with pytest.raises(ValidationError):
        evaluate_checkpoint(diffusion, eval_parts["original"])


def test_evaluate_checkpoint_fingerprint_mismatch(eval_parts):
    stale = dataclasses.replace(eval_parts["teacher"], fingerprint="f" * 12)
    with pytest.raises(PipelineError):
        evaluate_checkpoint(stale, eval_parts["original"])
    row = evaluate_checkpoint(stale, eval_parts["original"], allow_mixed=True)
    assert row.fingerprint == "f" * 12


def test_evaluate_many(eval_parts):
    rows = evaluate_many({"t-a": eval_parts["teacher"], "t-b": eval_parts["teacher"]},
                         eval_parts["original"])
    assert [r.method for r in rows] == ["t-a", "t-b"]
    assert rows[0].psnr_db == rows[1].psnr_db


# -- contact sheets ------------------------------------------------------------


def grid_rows(n_rows=2, n_cols=3, h=4, w=5):
    rng = np.random.default_rng(0)
    return [[rng.random((h, w, 3)) for _ in range(n_cols)] for _ in range(n_rows)]


def test_contact_sheet_geometry():
    rows = grid_rows()
    sheet = contact_sheet(rows, pad=2)
    assert sheet.dtype == np.uint8
    assert sheet.shape == (2 * 4 + 2 * 3, 3 * 5 + 2 * 4, 3)
    # padding stays white, cells carry the tile contents
    assert (sheet[0] == 255).all()
    np.testing.assert_array_equal(sheet[2:6, 2:7], float_to_uint8(rows[0][0]))
    np.testing.assert_array_equal(sheet[8:12, 9:14], float_to_uint8(rows[1][1]))


def test_sample_grid_validation():
    rows = grid_rows()
    SampleGrid("ok", ("a", "b", "c"), rows).validate()
    with pytest.raises(ValidationError):
        SampleGrid("bad/name", ("a", "b", "c"), rows).validate()
    with pytest.raises(ValidationError):
        SampleGrid("empty", ("a",), []).validate()
    with pytest.raises(ValidationError):
        SampleGrid("short-row", ("a", "b"), rows).validate()
    holey = grid_rows()
    holey[1][2] = None
    with pytest.raises(ValidationError):
        SampleGrid("holey", ("a", "b", "c"), holey).validate()
    mixed = grid_rows()
    mixed[0][1] = np.zeros((6, 5, 3))
    with pytest.raises(ValidationError):
        SampleGrid("mixed", ("a", "b", "c"), mixed).validate()


# -- report emission -----------------------------------------------------------


def test_emit_report_files_and_sections(tmp_path):
    rows = [make_row(), make_row(method="m0", dataset="web", psnr_db=math.inf)]
    grid = SampleGrid("samples", ("clean", "degraded", "restored"), grid_rows())
    out = emit_report(rows, tmp_path / "report", grids=[grid],
                      title="Desk-scale results", notes=("half-width student",))
    md = (out / "results.md").read_text()
    assert md.startswith("# Desk-scale results")
    assert "half-width student" in md
    assert "Config fingerprint: abc123" in md
    assert "## Dataset: original" in md and "## Dataset: web" in md
    assert "| m0 | 0.123 | inf | 0.9100 | 0,1 |" in md
    assert "## Published reference (NOT reproduced here)" in md
    for ref in PUBLISHED_REFERENCE:
        assert f"| {ref['method']} |" in md
    assert (out / "grids" / "samples.png").exists()
    assert "`grids/samples.png`" in md

    parsed = [MetricRow.from_dict(json.loads(line))
              for line in (out / "results.jsonl").read_text().splitlines()]
    assert parsed == rows


def test_emit_report_reference_opt_out(tmp_path):
    out = emit_report([make_row()], tmp_path, include_reference=False)
    md = (out / "results.md").read_text()
    assert "Published reference" not in md
    assert "NOT reproduced" not in md


def test_emit_report_needs_rows(tmp_path):
    with pytest.raises(ValidationError):
        emit_report([], tmp_path)


def test_rows_from_ablation():
    raw = [
        {"variant": "d4ir", "z0_source": "ccd", "prompt_source": "dpa",
         "psnr_db": 21.0, "ssim": 0.8, "params_m": 0.05, "seeds": [0, 1, 2]},
        {"variant": "extra", "z0_source": "pure_noise", "prompt_source": "none",
         "psnr_db": 19.0, "ssim": 0.7, "params_m": 0.05, "extra_paper": True},
    ]
    rows = rows_from_ablation(raw, "original", fingerprint="fp")
    assert rows[0].method == "d4ir" and rows[0].seeds == (0, 1, 2)
    assert rows[0].extra == {"z0_source": "ccd", "prompt_source": "dpa"}
    assert rows[1].method == "extra (extra, beyond the reference matrix)"
    assert all(r.dataset == "original" and r.fingerprint == "fp" for r in rows)
