import numpy as np
import pytest
import torch

from posetransfer.checkpoint import read_checkpoint
from posetransfer.config import AdversarialConfig, TrainConfig
from posetransfer.data import decode_image, load_manifest
from posetransfer.engine import LOG_FILE, Trainer, evaluate, infer, infer_sequence, read_log, train
from posetransfer.errors import LevelError, ShapeError, TrainingDiverged

from conftest import full_keypoints

TINY = 1 / 16


def _cfg(manifest, out, ladder=(64,), iters=4, **kw):
    return TrainConfig(
        ladder=ladder,
        iterations_per_level={lvl: iters for lvl in ladder},
        batch_size={lvl: 2 for lvl in ladder},
        width=TINY,
        manifest=str(manifest),
        output_dir=str(out),
        **kw,
    )


def _params(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _max_rel_diff(a, b):
    worst = 0.0
    for k in a:
        if a[k].is_floating_point():
            scale = a[k].abs().max().item() or 1.0
            worst = max(worst, (a[k] - b[k]).abs().max().item() / scale)
    return worst


def test_runs_are_reproducible(toy_manifest, small_fx, tmp_path):
    runs = []
    for name in ("a", "b"):
        tr = Trainer(_cfg(toy_manifest, tmp_path / name, iters=3), extractor=small_fx)
        tr.run()
        runs.append(_params(tr.model))
    assert _max_rel_diff(*runs) == 0.0


def test_resume_matches_uninterrupted_run(toy_manifest, small_fx, tmp_path):
    full = Trainer(_cfg(toy_manifest, tmp_path / "full", iters=6), extractor=small_fx)
    full.run()
    first = Trainer(_cfg(toy_manifest, tmp_path / "split", iters=6), extractor=small_fx)
    mid = first.run(max_steps=3)
    assert read_checkpoint(mid)["step"] == 3
    second = Trainer(_cfg(toy_manifest, tmp_path / "split", iters=6), extractor=small_fx)
    second.resume(mid)
    second.run()
    assert second.global_step == 6
    assert _max_rel_diff(_params(full.model), _params(second.model)) <= 1e-6


def test_progressive_ladder_and_log(toy_manifest, small_fx, tmp_path):
    cfg = _cfg(toy_manifest, tmp_path, ladder=(64, 128), iters=4, log_every=1, checkpoint_every=2)
    final = train(cfg, extractor=small_fx)
    payload = read_checkpoint(final)
    assert payload["level"] == 128 and final.name == "level128_final.pt"
    assert (tmp_path / "level64_final.pt").is_file() and (tmp_path / "level64_step0000002.pt").is_file()
    log = read_log(tmp_path / LOG_FILE)
    assert [r["level"] for r in log] == [64] * 4 + [128] * 4
    assert [r["criterion"] for r in log[:4]] == ["l2", "l2", "l1", "l1"]
    assert all(np.isfinite(r["loss"]) and r["loss_adv"] is None for r in log)


def test_resume_across_growth(toy_manifest, small_fx, tmp_path):
    cfg = _cfg(toy_manifest, tmp_path, ladder=(64, 128), iters=2)
    tr = Trainer(cfg, extractor=small_fx)
    tr.run()
    again = Trainer(cfg, extractor=small_fx)
    again.resume(tmp_path / "level64_final.pt")
    again.run()
    assert again.model.level == 128 and again.global_step == 4


def test_adversarial_phase_trains_discriminator(toy_manifest, small_fx, tmp_path):
    adv = AdversarialConfig(levels=(64,), crop_sides=(8,))
    tr = Trainer(_cfg(toy_manifest, tmp_path, iters=2, adversarial=adv, log_every=1), extractor=small_fx)
    tr._ensure_discriminator()
    before = _params(tr.disc)
    tr.run()
    after = _params(tr.disc)
    assert any(not torch.equal(before[k], after[k]) for k in before if "original" in k)
    log = read_log(tmp_path / LOG_FILE)
    assert all(r["loss_d"] is not None and r["loss_local"] is None for r in log)
    assert "discriminator" in read_checkpoint(tmp_path / "level64_final.pt")


def test_non_finite_loss_stops_with_snapshot(toy_manifest, small_fx, tmp_path, monkeypatch):
    import posetransfer.engine as engine

    monkeypatch.setattr(engine, "global_perceptual", lambda *a: torch.tensor(float("nan"), requires_grad=True))
    tr = Trainer(_cfg(toy_manifest, tmp_path), extractor=small_fx)
    with pytest.raises(TrainingDiverged, match="snapshot"):
        tr.run()
    assert (tmp_path / "diverged_level64_step0000000.pt").is_file()


@pytest.fixture(scope="module")
def tiny_checkpoint(toy_manifest, small_fx, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck")
    return train(_cfg(toy_manifest, out, ladder=(64, 128), iters=1), extractor=small_fx)


def test_infer_produces_valid_images(tiny_checkpoint, toy_manifest):
    rec = load_manifest(toy_manifest).records[0]
    ref = decode_image(rec.image_path, 128)
    out = infer(tiny_checkpoint, ref, full_keypoints(256))
    assert out.resolution == (128, 128)
    assert out.pixels.min() >= -1 and out.pixels.max() <= 1
    frames = infer_sequence(tiny_checkpoint, ref, [full_keypoints(64), full_keypoints(512)])
    assert len(frames) == 2
    with pytest.raises(ShapeError):
        infer(tiny_checkpoint, decode_image(rec.image_path, 64), full_keypoints(64))


def test_evaluate_report(tiny_checkpoint, toy_manifest, small_fx):
    m = load_manifest(toy_manifest)
    report, rows = evaluate(tiny_checkpoint, m, 128, fx=small_fx)
    assert report.n_pairs == len(rows) == m.epoch_size
    assert report.ms_ssim is None
    assert -1 <= report.ssim <= 1 and report.perceptual_distance >= 0
    low, _ = evaluate(tiny_checkpoint, m, 64, fx=small_fx)
    assert low.n_pairs == report.n_pairs
    with pytest.raises(LevelError):
        evaluate(tiny_checkpoint, m, 256, fx=small_fx)


def test_evaluate_real_data_is_perfect(toy_manifest, small_fx):
    report, _ = evaluate(None, load_manifest(toy_manifest), 256, fx=small_fx, real_data=True)
    assert report.ssim == pytest.approx(1.0, abs=1e-12)
    assert report.ms_ssim == pytest.approx(1.0, abs=1e-12)
    assert report.local_ssim == pytest.approx(1.0, abs=1e-12)
    assert report.perceptual_distance == 0.0


def test_single_growth_and_no_discriminator_before_final_level(toy_manifest, small_fx, tmp_path):
    adv = AdversarialConfig(levels=(128,), crop_sides=(16,))
    tr = Trainer(_cfg(toy_manifest, tmp_path, ladder=(64, 128), iters=1, adversarial=adv), extractor=small_fx)
    tr.run()
    assert tr.grow_calls == 1
    assert "discriminator" not in read_checkpoint(tmp_path / "level64_final.pt")
    assert "discriminator" in read_checkpoint(tmp_path / "level128_final.pt")


def test_sequence_edge_cases(tiny_checkpoint, toy_manifest):
    ref = decode_image(load_manifest(toy_manifest).records[0].image_path, 128)
    assert infer_sequence(tiny_checkpoint, ref, []) == []
    a, b = infer_sequence(tiny_checkpoint, ref, [full_keypoints(128)] * 2)
    assert np.array_equal(a.pixels, b.pixels)


def test_evaluation_is_deterministic(tiny_checkpoint, toy_manifest, small_fx):
    m = load_manifest(toy_manifest)
    first, _ = evaluate(tiny_checkpoint, m, 128, fx=small_fx)
    second, _ = evaluate(tiny_checkpoint, m, 128, fx=small_fx)
    assert first.to_dict() == second.to_dict()
