"""Smoke tests for the python bindings."""

import json
import math
import os
import tempfile

import numpy as np
import pytest

import cacophony


def test_constants():
    assert cacophony.SAMPLE_RATE == 16000
    assert cacophony.MEL_BANDS == 128
    assert cacophony.PATCH_DIM == 256


def test_mel_and_patch_arithmetic():
    mel = cacophony.mel_spectrogram([0.0] * 163840)  # 10.24 s
    assert mel.shape == (1024, 128)
    assert np.allclose(mel, math.log(1e-10))

    grid = cacophony.patchify(mel)
    assert grid["patches"].shape == (512, 256)
    assert grid["t_patches"] == 64
    assert grid["f_patches"] == 8


def test_mask_plan_counts():
    plan = cacophony.make_mask_plan(512, "mae", mask_ratio=0.8, seed=7)
    assert len(plan["kept"]) == 102
    assert len(plan["kept"]) + len(plan["masked"]) == 512

    short = cacophony.make_mask_plan(300, "clap", target_len=512, seed=3)
    assert len(short["kept"]) == 300
    assert len(short["padded"]) == 212


def test_info_nce_closed_forms():
    row = np.array([[0.6, 0.8, 0.0]] * 4)
    assert cacophony.info_nce(row, row, tau=0.5) == pytest.approx(2 * math.log(4), abs=1e-6)

    eye = np.eye(2)
    assert cacophony.info_nce(eye, eye, tau=1.0) == pytest.approx(0.626524, abs=1e-6)


def test_sam_perturb():
    eps = cacophony.sam_perturb([3.0, 4.0], 0.075)
    assert eps == pytest.approx([0.045, 0.060], abs=1e-12)


def test_schedule():
    assert cacophony.schedule_lr(0, 100, 1100, 2e-4, 1e-6) == 0.0
    assert cacophony.schedule_lr(100, 100, 1100, 2e-4, 1e-6) == pytest.approx(2e-4)
    assert cacophony.schedule_lr(600, 100, 1100, 2e-4, 1e-6) == pytest.approx(1e-6 + (2e-4 - 1e-6) / 2)


def test_retrieval_and_gap():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    rep = cacophony.retrieval_eval(x, x, ks=[1, 5])
    assert rep["text_to_audio"]["recall"][0] == 100.0
    assert rep["audio_to_text"]["recall"][0] == 100.0

    gap, magnitude = cacophony.modality_gap(x, x)
    assert magnitude == pytest.approx(0.0)


def test_end_to_end_training_and_captioning(tmp_path):
    corpus_dir = tmp_path / "corpus"
    items = cacophony.generate_corpus(seed=11, n=4, dur_min=0.4, dur_max=0.6, out_dir=str(corpus_dir))
    assert len(items) == 4
    manifest = str(corpus_dir / "manifest.jsonl")

    config = {
        "steps": 3,
        "batch_size": 2,
        "sched": {"warmup_steps": 1, "total_steps": 3, "peak_lr": 1e-3, "final_lr": 1e-5},
        "target_len": 48,
        "random_init": True,
        "val_policy": "none",
        "eval_every": 0,
        "seed": 5,
        "model": {
            "audio_enc": {"depth": 1, "heads": 2, "d_model": 16, "d_ff": 32},
            "mae_dec": {"depth": 1, "heads": 2, "d_model": 16, "d_ff": 32},
            "text_enc": {"depth": 1, "heads": 2, "d_model": 16, "d_ff": 32},
            "text_dec_depth": 1,
            "pool_heads": 2,
            "d_embed": 8,
        },
        "out_dir": str(tmp_path / "run"),
    }
    result = cacophony.train_clap(manifest, json.dumps(config))
    assert os.path.exists(result["metrics_csv"])
    assert math.isfinite(result["final_loss"])

    ckpt = cacophony.load_checkpoint(result["checkpoint"], str(tmp_path / "run" / "vocab.txt"))
    assert ckpt.stage == "clap"

    audio, text = ckpt.embed_corpus(manifest)
    assert audio.shape == text.shape == (4, 8)
    assert np.allclose(np.linalg.norm(audio, axis=1), 1.0, atol=1e-5)

    wav_path = items[0]["wav_path"]
    cap_a = ckpt.caption(wav_path, temperature=0.0, max_len=8)
    cap_b = ckpt.caption(wav_path, temperature=0.0, max_len=8)
    assert cap_a == cap_b  # greedy decoding is deterministic

    emb = ckpt.embed_text("a low sine tone")
    assert np.linalg.norm(emb) == pytest.approx(1.0, abs=1e-5)


def test_cli_binding(tmp_path):
    assert cacophony.cli(["synth-data", "--seed", "3", "--n", "2", "--dur-min", "0.4", "--dur-max", "0.5",
                          "--out", str(tmp_path / "c")]) == 0
    assert cacophony.cli(["no-such-command"]) == 1
