import json

import numpy as np
import pytest

import ecgtrust


def test_synth_record_shapes():
    rec = ecgtrust.synth_ecg(1, fs=250.0, n_beats=4, seed=3)
    assert rec["samples"].ndim == 1
    assert rec["samples"].shape == rec["stt_mask"].shape
    assert rec["stt_mask"].dtype == np.bool_
    assert rec["stt_mask"].any()
    again = ecgtrust.synth_ecg(1, fs=250.0, n_beats=4, seed=3)
    np.testing.assert_array_equal(rec["samples"], again["samples"])


def test_synth_rejects_bad_label():
    with pytest.raises(ValueError):
        ecgtrust.synth_ecg(7)


def test_denoise_identity_at_zero_threshold():
    x = np.random.default_rng(0).normal(size=512)
    y = ecgtrust.dwt_denoise(x, levels=4, threshold=0.0)
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-9


def test_soft_threshold_examples():
    out = ecgtrust.soft_threshold(np.array([-0.5, 2.5]), 1.0)
    np.testing.assert_allclose(out, [0.0, 1.5])


def test_bandpass_removes_drift_keeps_10hz():
    fs = 250.0
    t = np.arange(20000) / fs
    slow = ecgtrust.bandpass(np.sin(2 * np.pi * 0.1 * t), fs)
    mid = ecgtrust.bandpass(np.sin(2 * np.pi * 10.0 * t), fs)
    core = slice(5000, 15000)
    assert np.abs(slow[core]).max() < 0.01
    assert np.abs(mid[core]).max() > 0.95


def test_statistics_hand_examples():
    assert ecgtrust.cohens_d(np.array([2.0, 4.0]), np.array([1.0, 3.0])) == pytest.approx(0.7071, abs=1e-4)
    assert ecgtrust.kl_divergence(np.array([0.0, 1.0]), np.zeros(8), 2) == pytest.approx(0.5108, abs=1e-3)
    assert len(ecgtrust.simplex_lattice(3, 0.05)) == 231
    assert ecgtrust.discrete_mi([[0.5, 0.0], [0.0, 0.5]]) == pytest.approx(np.log(2.0))


def test_alignment_metrics_on_exact_match():
    mask = np.zeros(1000, dtype=bool)
    mask[100:160] = True
    mask[500:580] = True
    assert ecgtrust.windowed_nmi(mask.astype(float), mask, 50) == pytest.approx(1.0)
    dice, iou = ecgtrust.dice_iou_at_k(mask.astype(float), mask, 14.0)
    assert iou == pytest.approx(dice / (2.0 - dice))


def test_config_round_trip_and_strictness():
    cfg = ecgtrust.default_config()
    assert ecgtrust.validate_config(cfg) == cfg
    assert ecgtrust.validate_config({"seed": 3})["seed"] == 3
    with pytest.raises(ecgtrust.ConfigError):
        ecgtrust.validate_config({"sede": 3})
    with pytest.raises(ValueError):
        ecgtrust.validate_config({"data": {"n_per_class": 0}})


def test_stage_order():
    assert ecgtrust.stage_order() == ["preprocess", "balance", "train", "fuse", "attack", "certify"]


def test_prerequisites_enforced(tmp_path):
    out = str(tmp_path / "run")
    cfg = {"data": {"n_per_class": 8}}
    with pytest.raises(ecgtrust.MissingPrerequisite):
        ecgtrust.run("preprocess", config=cfg, out=out)
    ecgtrust.gen(config=cfg, out=out)
    with pytest.raises(ecgtrust.MissingPrerequisite):
        ecgtrust.report(config=cfg, out=out)
    ecgtrust.run(["preprocess"], config=cfg, out=out)
    index = json.loads((tmp_path / "run" / "features" / "index.json").read_text())
    assert len(index["labels"]) > 0


def test_small_end_to_end(tmp_path):
    out = str(tmp_path / "e2e")
    cfg = {"data": {"n_per_class": 20}, "explain": {"n_perm": 200, "n_boot": 200}}
    ecgtrust.gen(config=cfg, seed=5, out=out)
    ecgtrust.run("all", config=cfg, seed=5, out=out)
    summary = ecgtrust.report(config=cfg, seed=5, out=out)
    text = json.dumps(summary)
    assert "intermediate" in text
