"""Acceptance suite: ten end-to-end guarantees, one pass line each.

Each test prints a single ``ACCEPTANCE n: PASS`` line when its guarantee
holds; a failing guarantee fails the test (no line is printed). Criterion 7
runs the full default desk-scale training and takes the bulk of the suite's
runtime.
"""

import json
import math
import struct
import time

import numpy as np
import pytest

from voclab import losses
from voclab import tensor as tt
from voclab.data import AudioClip, read_wav, synth_corpus, write_wav
from voclab.dsp import F0Config, estimate_f0
from voclab.gradcheck import LOSS_CHECKS, MODEL_CHECKS, check_loss, check_model
from voclab.losses import MultiStftConfig, PrlsConfig
from voclab.metrics import ffe, mcd, mcd_from_cepstra
from voclab.tensor import Tensor
from voclab.trainer import desk_config, train


def _report(capsys, n, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n}: PASS — {detail}")


def test_acceptance_01_reduction_equivalence(capsys):
    """Disabling the relativistic and top-K terms recovers plain LSGAN."""
    rng = np.random.default_rng(42)
    off = PrlsConfig(lambda_rls=0.0, lambda_adv=1.0, lambda_topk=0.0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        shape = (int(rng.integers(1, 5)), int(rng.integers(2, 40)))
        real = Tensor(rng.normal(size=shape))
        fake = Tensor(rng.normal(size=shape))
        d_diff = abs(
            losses.prls_d_total(real, fake, off).item()
            - losses.lsgan_d_loss(real, fake).item()
        )
        g_diff = abs(
            losses.prls_adv_total(fake, real, off).item()
            - losses.lsgan_adv_loss(fake).item()
        )
        worst = max(worst, d_diff, g_diff)
        assert d_diff <= 1e-12 and g_diff <= 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _report(capsys, 1, f"100 maps, max deviation {worst:.2e}, {elapsed:.2f}s")


def test_acceptance_02_gradient_suite(capsys):
    """Every loss and model forward passes finite-difference checks at >=100 points."""
    start = time.perf_counter()
    summary = []
    for name in LOSS_CHECKS + MODEL_CHECKS:
        checked = 0
        worst = 0.0
        for seed in range(40):
            if name in LOSS_CHECKS:
                report = check_loss(name, seed=seed)
            else:
                report = check_model(name, seed=seed, coords=50)
            assert report.passed, (
                f"{name} seed {seed}: max rel err {report.max_rel_err:.3e} "
                f"failures {report.failures[:3]}"
            )
            checked += report.n_checked
            worst = max(worst, report.max_rel_err)
            if checked >= 100:
                break
        assert checked >= 100, f"{name}: only {checked} finite-difference points"
        summary.append(worst)
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    _report(
        capsys,
        2,
        f"{len(summary)} checks, >=100 points each, worst rel err "
        f"{max(summary):.2e}, {elapsed:.0f}s",
    )


def test_acceptance_03_pointwise_sensitivity_witness(capsys):
    """Score maps with equal mean error are separated by the relativistic term."""
    real = Tensor(np.array([[1.0, 1.0]]))
    flat = Tensor(np.array([[0.5, 0.5]]))
    skew = Tensor(np.array([[0.9, 0.3]]))
    mean_flat = losses.lsgan_adv_loss(flat).item()
    mean_skew = losses.lsgan_adv_loss(skew).item()
    assert mean_flat == 0.25
    # 0.9 and 0.3 have no exact binary representation; the mean lands within
    # one ulp of the hand-computed 1/4
    assert abs(mean_skew - 0.25) <= 1e-16
    g_flat = tt.mean(losses.pointwise_relativistic_g(flat, real, 1.0)).item()
    g_skew = tt.mean(losses.pointwise_relativistic_g(skew, real, 1.0)).item()
    assert g_flat == 2.25
    assert g_skew == 2.05
    _report(capsys, 3, f"means 0.25/0.25 but relativistic {g_flat}/{g_skew}")


def test_acceptance_04_topk_oracle(capsys):
    """topk_mean equals sort-then-average; full fraction equals the plain mean."""
    rng = np.random.default_rng(7)
    for i in range(1000):
        n = int(rng.integers(5, 60))
        x = rng.normal(size=n)
        for frac in (0.1, 0.5, 1.0):
            got = losses.topk_mean(Tensor(x[None, :]), frac).item()
            k = math.ceil(frac * n)
            ref = float(np.mean(np.sort(x)[::-1][:k]))
            if frac == 1.0:
                assert got == float(np.mean(x))
            else:
                assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
    _report(capsys, 4, "1000 vectors x k_fraction {0.1, 0.5, 1.0} match the sort oracle")


def test_acceptance_05_stft_loss_identities(capsys):
    """Spectral losses hit their closed-form values on constructed pairs."""
    rng = np.random.default_rng(0)
    cfg = MultiStftConfig()
    x = rng.normal(0.0, 1.0, 4096)
    same = losses.multi_resolution_stft(Tensor(x), Tensor(x.copy()), cfg).item()
    assert same <= 1e-9
    sc = losses.spectral_convergence(Tensor(x), Tensor(np.zeros(4096)), cfg.configs[0]).item()
    assert sc == 1.0
    loud = rng.normal(0.0, 4.0, 4096)  # all magnitudes far above the log floor
    mag = losses.log_stft_magnitude(Tensor(loud), Tensor(math.e * loud), cfg.configs[0]).item()
    assert abs(mag - 1.0) <= 1e-6
    _report(
        capsys,
        5,
        f"L(x,x)={same:.1e}, L_sc(x,0)={sc}, L_mag(x,e*x)-1={mag - 1.0:.1e}",
    )


def test_acceptance_06_metric_identities(capsys):
    """MCD/FFE identities, the closed-form distortion, and pitch recovery."""
    rng = np.random.default_rng(1)
    x = AudioClip(np.clip(0.3 * rng.standard_normal(22050), -1, 1))
    assert mcd(x, AudioClip(x.samples.copy())) == 0.0
    assert ffe(x, AudioClip(x.samples.copy())) == 0.0

    c_ref = rng.normal(size=(13, 30))
    delta = 0.73
    c_syn = c_ref.copy()
    c_syn[4] += delta
    closed_form = (10.0 / math.log(10.0)) * math.sqrt(2.0) * delta
    assert abs(mcd_from_cepstra(c_ref, c_syn) - closed_form) <= 1e-9

    t = np.arange(22050) / 22050.0
    f0, voiced = estimate_f0(0.5 * np.sin(2 * np.pi * 220.0 * t), F0Config())
    interior = slice(2, -2)
    v = voiced[interior]
    hit = np.abs(f0[interior][v] - 220.0) <= 2.0
    assert v.mean() >= 0.9 and hit.mean() >= 0.9
    _report(
        capsys,
        6,
        f"identities exact, closed form {closed_form:.4f} dB, "
        f"220 Hz within 2 Hz on {100 * hit.mean():.0f}% of interior frames",
    )


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """The full default desk-scale training run (shared by criterion 7)."""
    corpus = synth_corpus(0)
    cfg = desk_config("melgan")
    out = tmp_path_factory.mktemp("deskrun")
    start = time.perf_counter()
    result = train(cfg, corpus, out)
    elapsed = time.perf_counter() - start
    return cfg, result, elapsed


def test_acceptance_07_desk_scale_training_trend(capsys, desk_run):
    """Default config: pretraining halves the held-out spectral loss, the
    adversarial phase stays finite with real scores in range, under 30 min."""
    cfg, result, elapsed = desk_run
    records = result.records
    by_iter = {r["iteration"]: r for r in records}
    h10 = by_iter[10]["heldout_stft"]
    h_pretrained = by_iter[cfg.d_start_iteration]["heldout_stft"]
    assert h_pretrained < 0.5 * h10, (
        f"held-out STFT after pretraining {h_pretrained:.4f} not below "
        f"half of iteration-10 value {h10:.4f}"
    )
    for r in records:
        for key, value in r.items():
            if isinstance(value, float):
                assert np.isfinite(value), f"non-finite {key} at iteration {r['iteration']}"
    last_100 = [
        r["mean_real_score"]
        for r in records
        if r["iteration"] > cfg.total_iterations - 100 and "mean_real_score" in r
    ]
    mean_real = float(np.mean(last_100))
    assert 0.0 <= mean_real <= 2.0
    assert elapsed < 1800.0
    _report(
        capsys,
        7,
        f"heldout {h10:.3f} -> {h_pretrained:.3f} (< {0.5 * h10:.3f}), "
        f"mean real score {mean_real:.3f}, no NaN, {elapsed / 60:.1f} min",
    )


def test_acceptance_08_baseline_differential(capsys, tmp_path):
    """Same seed: pretraining is bit-identical across adversarial modes, and
    the discriminator losses differ from the first post-warm-start iteration."""
    corpus = synth_corpus(1, n_clips=6, duration_s=0.3, n_test=2)
    logs = {}
    for mode in ("prls", "lsgan"):
        cfg = desk_config(
            "melgan",
            total_iterations=7,
            d_start_iteration=4,
            batch_size=2,
            segment_length=2048,
            adv_mode=mode,
            dtype="float64",
            log_interval=1,
            checkpoint_interval=0,
        )
        result = train(cfg, corpus, tmp_path / mode)
        logs[mode] = {r["iteration"]: r for r in result.records}
    for it in range(1, 5):
        a, b = logs["prls"][it], logs["lsgan"][it]
        assert a["stft_loss"] == b["stft_loss"]
        assert a["g_loss"] == b["g_loss"]
    first_adv = 5
    assert logs["prls"][first_adv]["d_loss"] != logs["lsgan"][first_adv]["d_loss"]
    _report(
        capsys,
        8,
        "pretraining bit-identical; d losses differ from iteration "
        f"{first_adv}: {logs['prls'][first_adv]['d_loss']:.4f} vs "
        f"{logs['lsgan'][first_adv]['d_loss']:.4f}",
    )


def test_acceptance_09_determinism_and_resume(capsys, tmp_path):
    """Seeded runs repeat bit-exactly; checkpoint resume stays within 1e-12."""
    corpus = synth_corpus(2, n_clips=6, duration_s=0.3, n_test=2)

    def run(out, total, ckpt, resume=None):
        cfg = desk_config(
            "melgan",
            total_iterations=total,
            d_start_iteration=5,
            batch_size=2,
            segment_length=2048,
            dtype="float64",
            log_interval=1,
            checkpoint_interval=ckpt,
        )
        return train(cfg, corpus, out, resume_from=resume)

    a = run(tmp_path / "a", 10, 0)
    b = run(tmp_path / "b", 10, 0)
    losses_a = [r["g_loss"] for r in a.records]
    losses_b = [r["g_loss"] for r in b.records]
    assert len(losses_a) == 10 and losses_a == losses_b

    full = run(tmp_path / "full", 10, 5)
    resumed = run(tmp_path / "resumed", 10, 5, resume=full.checkpoint_paths[0])
    by_iter = {r["iteration"]: r for r in full.records}
    max_diff = 0.0
    for rec in resumed.records:
        ref = by_iter[rec["iteration"]]
        for key in ("stft_loss", "g_loss", "d_loss"):
            if key in ref:
                max_diff = max(max_diff, abs(rec[key] - ref[key]))
    assert max_diff <= 1e-12
    _report(
        capsys, 9, f"first-10 losses identical; resume max deviation {max_diff:.2e}"
    )


def test_acceptance_10_wav_round_trip(capsys, tmp_path):
    """PCM-16 write/read error stays under one quantization step, and a
    hand-assembled RIFF file decodes to the exact expected floats."""
    rng = np.random.default_rng(3)
    x = np.clip(rng.normal(0.0, 0.4, 8000), -1.0, 32767 / 32768)
    p = tmp_path / "rt.wav"
    write_wav(p, AudioClip(x))
    err = np.max(np.abs(read_wav(p).samples - x))
    assert err <= 1.0 / 32768

    payload = struct.pack("<4h", 0, 16384, -16384, 32767)
    header = (
        b"RIFF"
        + struct.pack("<I", 36 + len(payload))
        + b"WAVEfmt "
        + struct.pack("<IHHIIHH", 16, 1, 1, 22050, 44100, 2, 16)
        + b"data"
        + struct.pack("<I", len(payload))
    )
    fx = tmp_path / "fixture.wav"
    fx.write_bytes(header + payload)
    clip = read_wav(fx)
    assert clip.samples.tolist() == [0.0, 0.5, -0.5, 32767 / 32768]
    _report(capsys, 10, f"round-trip error {err * 32768:.3f} LSB; fixture decodes exactly")
