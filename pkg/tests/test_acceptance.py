"""End-to-end acceptance checks, one test per criterion.

Each test records PASS/FAIL through ``conftest.criterion``; the terminal
summary prints one line per criterion with the measured values.
"""

import copy
import csv
import time

import numpy as np
import pytest
import torch

from conftest import criterion
from oracles import direct_stft_magnitude
from se_melgan.datasynth import (
    NOISE_GAIN,
    NoiseAlignPolicy,
    align_noise,
    build_manifest,
    realize_mixture,
    realize_pair,
)
from se_melgan.dsp import AudioBuffer, MelConfig, MelSpectrogram, StftConfig, stft_magnitude, stft_magnitude_tensor
from se_melgan.inference import benchmark
from se_melgan.losses import (
    feature_matching_loss,
    hinge_discriminator_loss,
    hinge_generator_loss,
    mel_l2_loss,
)
from se_melgan.model import build_generator, count_parameters, generator_forward, scaled_configs
from se_melgan.trainer import TrainConfig, checkpoint_path, init_state, lr_at_step, run_training, train_step

STFT_TOL = 1e-4
PARAM_RANGE = (4_050_000, 4_470_000)
GRAD_TOL = 1e-2
GRAD_SAMPLES = 100
FD_STEP = 1e-3
OVERFIT_STEPS = 500
OVERFIT_RATIO = 0.5
RTF_GATE, RTF_TARGET = 1.0, 2.0


def test_c01_stft_oracle():
    with criterion(1, "conv-STFT equals direct windowed DFT on 100 random 1 s signals") as rec:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        err64 = err32 = 0.0
        for _ in range(100):
            x = rng.uniform(-1, 1, 22050)
            ref = direct_stft_magnitude(x)
            err64 = max(err64, float(np.max(np.abs(stft_magnitude(AudioBuffer(x, 22050)) - ref))))
            got32 = stft_magnitude_tensor(torch.tensor(x, dtype=torch.float32), StftConfig())[0].double().numpy()
            err32 = max(err32, float(np.max(np.abs(got32 - ref))))
        elapsed = time.perf_counter() - t0
        rec["text"] = f"max err float64 {err64:.2e}, float32 {err32:.2e} (tol {STFT_TOL:g}); {elapsed:.1f} s"
        assert err64 < STFT_TOL and err32 < STFT_TOL
        assert elapsed < 60


def test_c02_length_law():
    with criterion(2, "generator output length = 256 x frames for {1, 7, 64, 128}") as rec:
        gen = build_generator(scaled_configs(8)[0]).eval()
        lengths = {}
        for frames in (1, 7, 64, 128):
            mel = MelSpectrogram(np.random.default_rng(frames).uniform(-11, 1, (80, frames)), MelConfig())
            lengths[frames] = len(generator_forward(gen, mel))
        rec["text"] = str(lengths)
        assert all(n == 256 * f for f, n in lengths.items())


def test_c03_parameter_budget():
    with criterion(3, "full-size generator parameter count within [4.05M, 4.47M]") as rec:
        n = count_parameters(build_generator())
        rec["text"] = f"{n:,} parameters"
        assert PARAM_RANGE[0] <= n <= PARAM_RANGE[1]


def _leaky_signs(model, record):
    handles = []
    for m in model.modules():
        if isinstance(m, torch.nn.LeakyReLU):
            handles.append(m.register_forward_hook(lambda mod, inp, out: record.append(inp[0] > 0)))
    return handles


def test_c04_gradient_check():
    with criterion(4, "channels/8 generator: analytic vs central-FD gradients, >=100 params, rel err < 1e-2") as rec:
        t0 = time.perf_counter()
        gen = build_generator(scaled_configs(8)[0], seed=0)
        rng = np.random.default_rng(0)
        mel = torch.tensor(rng.normal(-4, 2, (1, 80, 2)), dtype=torch.float32)
        (gen(mel) ** 2).sum().backward()
        analytic_params = [p for _, p in gen.named_parameters()]

        # identical weights, evaluated in double precision for the difference quotient
        ref = copy.deepcopy(gen).double()
        ref_params = [p for _, p in ref.named_parameters()]
        mel64 = mel.double()
        signs: list = []
        _leaky_signs(ref, signs)

        def evaluate():
            signs.clear()
            with torch.no_grad():
                value = float((ref(mel64) ** 2).sum())
            return value, [s.clone() for s in signs]

        sizes = np.array([p.numel() for p in analytic_params])
        bounds = np.cumsum(sizes)
        analytic, numeric, picks, kinks = [], [], [], 0
        while len(analytic) < GRAD_SAMPLES:
            flat_index = int(rng.integers(bounds[-1]))
            j = int(np.searchsorted(bounds, flat_index, side="right"))
            k = flat_index - int(bounds[j] - sizes[j])
            flat = ref_params[j].data.view(-1)
            old = flat[k].clone()
            flat[k] = old + FD_STEP
            plus, s_plus = evaluate()
            flat[k] = old - FD_STEP
            minus, s_minus = evaluate()
            flat[k] = old
            # a LeakyReLU input changing sign inside [-h, h] makes the quotient straddle a kink
            if any(bool((a != b).any()) for a, b in zip(s_plus, s_minus)):
                kinks += 1
                continue
            analytic.append(float(analytic_params[j].grad.view(-1)[k]))
            numeric.append((plus - minus) / (2 * FD_STEP))
            picks.append((j, k))
        a, n = np.array(analytic), np.array(numeric)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-30)
        # informational: the same quotient taken in float32 is dominated by rounding noise
        fp32 = []
        with torch.no_grad():
            for j, k in picks:
                flat = analytic_params[j].data.view(-1)
                old = flat[k].clone()
                flat[k] = old + FD_STEP
                plus = float((gen(mel) ** 2).sum())
                flat[k] = old - FD_STEP
                minus = float((gen(mel) ** 2).sum())
                flat[k] = old
                fp32.append((plus - minus) / (2 * FD_STEP))
        fp32 = np.array(fp32)
        rel32 = np.abs(a - fp32) / np.maximum(np.maximum(np.abs(a), np.abs(fp32)), 1e-30)
        elapsed = time.perf_counter() - t0
        rec["text"] = (f"{len(a)} params, max rel err {rel.max():.2e}, median {np.median(rel):.2e}; "
                       f"{kinks} kink-straddling draws resampled; float32 quotient within tol for "
                       f"{np.mean(rel32 < GRAD_TOL):.0%} (info); {elapsed:.1f} s")
        assert len(a) >= GRAD_SAMPLES
        assert rel.max() < GRAD_TOL
        assert elapsed < 300


def test_c05_loss_identities():
    with criterion(5, "loss identities and hand-computed hinge examples") as rec:
        g = torch.Generator().manual_seed(0)
        maps = [[torch.randn(1, 4, n, generator=g) for n in (32, 16, 8)] for _ in range(3)]
        x = AudioBuffer(np.random.default_rng(0).uniform(-0.5, 0.5, 8192), 22050)
        t = lambda *v: torch.tensor(v, dtype=torch.float64)
        values = {
            "fm(x,x)": feature_matching_loss(maps, maps).item(),
            "mel_l2(x,x)": mel_l2_loss(x, x).item(),
            "hinge_d(1,-1)": hinge_discriminator_loss([t(1.0)], [t(-1.0)]).item(),
            "hinge_d(0,0)": hinge_discriminator_loss([t(0.0)], [t(0.0)]).item(),
            "hinge_d([2,0],[0])": hinge_discriminator_loss([t(2.0, 0.0)], [t(0.0)]).item(),
            "hinge_g(0)": hinge_generator_loss([t(0.0)]).item(),
            "hinge_g(1 x3)": hinge_generator_loss([t(1.0)] * 3).item(),
            "hinge_g([1,-1])": hinge_generator_loss([t(1.0, -1.0)]).item(),
        }
        expected = {"fm(x,x)": 0.0, "mel_l2(x,x)": 0.0, "hinge_d(1,-1)": 0.0, "hinge_d(0,0)": 2.0,
                    "hinge_d([2,0],[0])": 1.5, "hinge_g(0)": 0.0, "hinge_g(1 x3)": -3.0, "hinge_g([1,-1])": 0.0}
        rec["text"] = ", ".join(f"{k}={v:g}" for k, v in values.items())
        assert values == expected


def test_c06_dataset_rules(toy_corpus):
    with criterion(6, "10 clean/5 noise -> 40 mixed + 5 pass-through; exact align length; gain 0.7") as rec:
        clean, noise = toy_corpus
        manifest = build_manifest(clean, [noise], seed=0)
        counts = manifest.counts()
        rng = np.random.default_rng(6)
        wrong = 0
        for _ in range(1000):
            n, target, w = int(rng.integers(1, 5000)), int(rng.integers(1, 40000)), int(rng.integers(1, 2000))
            out = align_noise(AudioBuffer(rng.normal(size=n), 22050), target, NoiseAlignPolicy(w))
            wrong += len(out) != target
        mixed = [e for e in manifest.entries if not e.is_passthrough]
        gains = {e.noise_gain for e in mixed}
        worst = 0.0
        for e in mixed[:10]:
            noisy, c, aligned, post = realize_mixture(e)
            worst = max(worst, float(np.max(np.abs(noisy.samples / post - (c.samples + 0.7 * aligned.samples)))))
        rec["text"] = f"counts {counts}; {wrong}/1000 align length errors; gains {sorted(gains)}; recompose err {worst:.1e}"
        assert counts == {"mixed": 40, "clean": 5, "total": 45}
        assert wrong == 0
        assert gains == {NOISE_GAIN} == {0.7}
        assert worst < 1e-6


def test_c07_schedule():
    with criterion(7, "lr 1e-4 at step 0, 1e-5 at 1.5M, one discontinuity") as rec:
        cfg = TrainConfig()
        probe = sorted({0, 1, 1_499_998, 1_499_999, 1_500_000, 1_500_001, 2_999_999, 3_000_000,
                        *range(0, 3_000_001, 50_000)})
        values = [lr_at_step(s, cfg) for s in probe]
        jumps = [probe[i] for i in range(1, len(probe)) if values[i] != values[i - 1]]
        rec["text"] = f"lr(0)={lr_at_step(0, cfg):g}, lr(1.5M)={lr_at_step(1_500_000, cfg):g}, jumps at {jumps}"
        assert lr_at_step(0, cfg) == 1e-4 and lr_at_step(1_500_000, cfg) == 1e-5
        assert jumps == [1_500_000]


@pytest.mark.slow
def test_c08_overfit(toy_corpus):
    with criterion(8, "overfit one pass-through pair: g_mel(500) < 0.5 g_mel(10)") as rec:
        t0 = time.perf_counter()
        clean, noise = toy_corpus
        manifest = build_manifest(clean, [noise], seed=0)
        pair = realize_pair(next(e for e in manifest.entries if e.is_passthrough))
        g8, d8 = scaled_configs(8)
        cfg = TrainConfig(batch_size=1, total_steps=OVERFIT_STEPS, phase_boundary=OVERFIT_STEPS - 1, seed=0)
        state = init_state(cfg, g8, d8)
        curve = {}
        for _ in range(OVERFIT_STEPS):
            _, m = train_step(state, [pair], cfg)
            curve[m.step] = m.g_mel
        elapsed = time.perf_counter() - t0
        ratio = curve[500] / curve[10]
        rec["text"] = (f"g_mel step 10 {curve[10]:.3f}, 100 {curve[100]:.3f}, 250 {curve[250]:.3f}, "
                       f"500 {curve[500]:.3f} (ratio {ratio:.3f}); {elapsed:.0f} s")
        assert ratio < OVERFIT_RATIO
        assert elapsed < 900


def test_c09_resume(toy_corpus, tmp_path):
    with criterion(9, "resume at step 10 reproduces steps 11-20 bit-identically") as rec:
        clean, noise = toy_corpus
        manifest = build_manifest(clean, [noise], seed=0, segment_length=8192)
        g8, d8 = scaled_configs(8)
        cfg = TrainConfig(batch_size=2, total_steps=20, phase_boundary=15, checkpoint_interval=10, seed=3)
        full, split = tmp_path / "full", tmp_path / "split"
        run_training(manifest, cfg, full, g8, d8)
        run_training(manifest, cfg, split, g8, d8, max_steps=10)
        run_training(manifest, cfg, split, g8, d8, resume=checkpoint_path(split, 10))

        def rows(d):
            with open(d / "metrics.csv") as fh:
                return [r[:-1] for r in list(csv.reader(fh))[1:]]  # drop wall_ms

        a, b = rows(full), rows(split)
        same = sum(x == y for x, y in zip(a[10:], b[10:]))
        final_equal = (checkpoint_path(full, 20).read_bytes() == checkpoint_path(split, 20).read_bytes())
        rec["text"] = f"{same}/10 resumed rows identical; final checkpoints byte-identical: {final_equal}"
        assert len(a) == len(b) == 20
        assert a == b
        assert final_equal


def test_c10_speed():
    with criterion(10, "full-size generator RTF on CPU (gate >= 1.0, target >= 2.0)") as rec:
        report = benchmark(build_generator().eval(), 10.0, repeats=5)
        verdict = "meets" if report.rtf >= RTF_TARGET else "misses"
        rec["text"] = f"RTF {report.rtf:.2f}x ({verdict} the {RTF_TARGET:g}x target) on {report.device_label}"
        if torch.cuda.is_available():
            gpu = benchmark(build_generator().eval(), 10.0, repeats=5, device="cuda")
            rec["text"] += f"; GPU RTF {gpu.rtf:.1f}x on {gpu.device_label}"
        assert report.rtf >= RTF_GATE
