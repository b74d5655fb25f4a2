import dataclasses

import pytest
import torch

from weatherkd.checkpoint import Checkpoint
from weatherkd.corpus import DatasetManifest, ManifestRecord
from weatherkd.errors import ManifestError, PipelineError, ValidationError
from weatherkd.train.distill import (
    ABLATION_MATRIX,
    VARIANTS,
    DistillTrainer,
    _random_crops,
    gamma_for_epoch,
    get_variant,
    joint_loss,
    kd_loss,
)
from weatherkd.utils import torch_generator, weight_hash


def test_kd_loss_is_mean_squared_difference():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(3, 3, 8, 8, generator=g, dtype=torch.float64)
    b = torch.randn(3, 3, 8, 8, generator=g, dtype=torch.float64)
    expected = ((a - b) ** 2).sum() / a.numel()
    assert kd_loss(a, b).item() == pytest.approx(expected.item(), abs=1e-12)
    assert kd_loss(a, a).item() == 0.0


def test_kd_loss_shape_guard():
    with pytest.raises(ValidationError):
        kd_loss(torch.zeros(2, 3, 4, 4), torch.zeros(2, 3, 4, 5))


def test_joint_loss_weighting():
    assert joint_loss(torch.tensor(1.0), torch.tensor(2.0), 0.5).item() == 2.0
    assert joint_loss(torch.tensor(1.0), torch.tensor(99.0), 0.0).item() == 1.0
    with pytest.raises(ValidationError):
        joint_loss(torch.tensor(1.0), torch.tensor(1.0), -0.1)


def test_gamma_schedule_boundary():
    assert gamma_for_epoch(0, 0.5, 2) == 0.5
    assert gamma_for_epoch(1, 0.5, 2) == 0.5
    assert gamma_for_epoch(2, 0.5, 2) == 0.0  # drops exactly at the boundary
    assert gamma_for_epoch(100, 0.5, 2) == 0.0
    assert gamma_for_epoch(0, 0.5, 0) == 0.0


def test_variant_table():
    assert set(ABLATION_MATRIX) == {"m0", "m1", "m2", "m3", "m4", "m5", "d4ir"}
    assert len(ABLATION_MATRIX) == 7
    assert "extra" not in ABLATION_MATRIX and "data" not in ABLATION_MATRIX
    d4ir = get_variant("d4ir")
    assert d4ir.z0_source == "ccd" and d4ir.prompt_source == "dpa"
    assert get_variant("m0").generative is False
    assert get_variant("m1").z0_source == "pure_noise"
    assert VARIANTS["extra"].extra_paper and not VARIANTS["d4ir"].extra_paper
    with pytest.raises(ValidationError):
        get_variant("m9")


def test_random_crops_inside_source():
    g = torch_generator(0)
    batch = torch.arange(2 * 3 * 8 * 8, dtype=torch.float32).reshape(2, 3, 8, 8)
    crops = _random_crops(batch, 5, g)
    assert crops.shape == (2, 3, 5, 5)
    flat = batch.flatten()
    for i in range(2):
        assert all(v in flat for v in crops[i].flatten())
    again = _random_crops(batch, 5, torch_generator(0))
    assert torch.equal(crops, again)


# -- trainer behavior at unit-test scale --------------------------------------


@pytest.fixture(scope="module")
def micro_parts(micro_run):
    paths = micro_run.paths
    return {
        "cfg": micro_run.cfg,
        "teacher": Checkpoint.load(paths.teacher),
        "diffusion": Checkpoint.load(paths.diffusion),
        "original": DatasetManifest.load(paths.manifest("original")),
        "web": DatasetManifest.load(paths.manifest("web")),
    }


def make_trainer(parts, variant="d4ir", seed=0, **kw):
    return DistillTrainer(
        parts["cfg"], variant, parts["teacher"],
        diffusion_ckpt=parts["diffusion"],
        web_degraded_manifest=parts["web"], web_clean_manifest=parts["web"],
        seed=seed, **kw)


def test_trainer_freezes_pretrained_parts(micro_parts):
    trainer = make_trainer(micro_parts)
    hashes = {
        "teacher": weight_hash(trainer.teacher),
        "unet": weight_hash(trainer.unet),
        "ae": weight_hash(trainer.ae),
    }
    student_before = weight_hash(trainer.student)
    queue_before = len(trainer.queue)
    assert queue_before > 0  # warm-filled so the loss is defined at step 0
    trainer.run()
    assert weight_hash(trainer.teacher) == hashes["teacher"]
    assert weight_hash(trainer.unet) == hashes["unet"]
    assert weight_hash(trainer.ae) == hashes["ae"]
    assert weight_hash(trainer.student) != student_before


def test_trainer_log_fields_and_gamma(micro_parts):
    trainer = make_trainer(micro_parts)
    trainer.run()
    recs = trainer.logger.records
    cfg = micro_parts["cfg"].distill
    assert len(recs) == cfg.epochs * cfg.steps_per_epoch
    for r in recs:
        assert set(r) >= {"step", "epoch", "loss_kd", "loss_cl", "gamma", "lr"}
        expected_gamma = cfg.gamma0 if r["epoch"] < cfg.e1 else 0.0
        assert r["gamma"] == expected_gamma


def test_trainer_student_init_shared_across_variants(micro_parts):
    # every variant starts from the same student weights: differences in the
    # outcome are attributable to the data synthesis, not the init draw
    t1 = make_trainer(micro_parts, variant="d4ir")
    t2 = make_trainer(micro_parts, variant="m1")
    assert weight_hash(t1.student) == weight_hash(t2.student)
    t3 = make_trainer(micro_parts, variant="d4ir", seed=1)
    assert weight_hash(t1.student) != weight_hash(t3.student)


def test_resume_equality_bitwise(micro_parts, tmp_path):
    full = make_trainer(micro_parts)
    full.run()

    first_leg = make_trainer(micro_parts)
    first_leg.run(epochs=1)
    mid = first_leg.state_checkpoint()
    path = mid.save(tmp_path / "mid.ckpt")

    resumed = make_trainer(micro_parts)
    resumed.load_state(Checkpoint.load(path))
    assert resumed.epoch == 1
    resumed.run()

    assert weight_hash(resumed.student) == weight_hash(full.student)
    assert torch.equal(resumed.gen.get_state(), full.gen.get_state())
    assert weight_hash(resumed.adapter) == weight_hash(full.adapter)
    assert torch.equal(resumed.queue.tensor(), full.queue.tensor())


def test_load_state_guards(micro_parts, tmp_path):
    trainer = make_trainer(micro_parts)
    ckpt = trainer.state_checkpoint()

    other = make_trainer(micro_parts, variant="m2")
    with pytest.raises(PipelineError):
        other.load_state(ckpt)

    cfg2 = dataclasses.replace(micro_parts["cfg"], seed=123)
    mismatched = DistillTrainer(
        cfg2, "d4ir", micro_parts["teacher"], diffusion_ckpt=micro_parts["diffusion"],
        web_degraded_manifest=micro_parts["web"], web_clean_manifest=micro_parts["web"])
    with pytest.raises(PipelineError):
        mismatched.load_state(ckpt)


def test_direct_variant_trains_on_manifest(micro_parts):
    trainer = DistillTrainer(
        micro_parts["cfg"], "m0", micro_parts["teacher"],
        direct_manifest=micro_parts["web"])
    before = weight_hash(trainer.student)
    ckpt = trainer.run()
    assert weight_hash(trainer.student) != before
    assert ckpt.kind == "student"
    assert ckpt.meta["variant"] == "m0"
    # direct distillation never logs a contrastive term
    assert all(r["loss_cl"] == 0.0 for r in trainer.logger.records)


def test_generative_variant_requirements(micro_parts):
    with pytest.raises(PipelineError):
        DistillTrainer(micro_parts["cfg"], "d4ir", micro_parts["teacher"])
    with pytest.raises(PipelineError):
        DistillTrainer(micro_parts["cfg"], "m0", micro_parts["teacher"])


def test_direct_variant_needs_degraded_records(micro_parts):
    clean_only = DatasetManifest(
        corpus_seed=0, domain="web", fingerprint="",
        records=[ManifestRecord("x.png", "clean", "train")])
    clean_only.base_dir = micro_parts["web"].base_dir
    with pytest.raises(ManifestError):
        DistillTrainer(micro_parts["cfg"], "m0", micro_parts["teacher"],
                       direct_manifest=clean_only)


def test_cached_generation_runs(micro_parts):
    cfg = dataclasses.replace(
        micro_parts["cfg"],
        distill=dataclasses.replace(micro_parts["cfg"].distill, cache_generated=True))
    trainer = DistillTrainer(
        cfg, "m5", micro_parts["teacher"], diffusion_ckpt=micro_parts["diffusion"],
        web_degraded_manifest=micro_parts["web"], web_clean_manifest=micro_parts["web"])
    ckpt = trainer.run()
    assert trainer._cache is not None
    assert trainer._cache.shape[0] == trainer.n_items
    assert ckpt.metrics["final_loss_kd"] >= 0.0


def test_checkpoint_records_trainer_identity(micro_parts):
    trainer = make_trainer(micro_parts, seed=3)
    ckpt = trainer.state_checkpoint()
    assert ckpt.meta["seed"] == 3
    assert ckpt.meta["variant"] == "d4ir"
    assert ckpt.meta["extra_paper"] is False
    assert ckpt.fingerprint == micro_parts["cfg"].fingerprint
