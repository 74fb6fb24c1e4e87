import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import window_rms
from se_melgan.datasynth import (
    CorpusManifest,
    MixtureManifestEntry,
    NoiseAlignPolicy,
    align_noise,
    build_manifest,
    mix,
    rank_windows_by_energy,
    realize_mixture,
    realize_pair,
)
from se_melgan.dsp import AudioBuffer, log_mel
from se_melgan.toydata import noise_clip, write_toy_corpus

SMALL = NoiseAlignPolicy(window_length=4)


def stepped(levels, w=4):
    return AudioBuffer(np.repeat(levels, w).astype(float), 22050)


# --- ranking -------------------------------------------------------------------


def test_rank_example():
    assert rank_windows_by_energy(stepped([0.1, 0.9, 0.5]), SMALL) == [1, 2, 0]


def test_rank_ties_by_index():
    assert rank_windows_by_energy(AudioBuffer(np.full(20, 0.3), 22050), SMALL) == [0, 1, 2, 3, 4]


def test_rank_partial_window_uses_its_own_length():
    # last window holds 2 samples of 0.8 -> RMS 0.8, loudest
    x = np.concatenate([np.full(4, 0.5), np.full(4, 0.7), np.full(2, 0.8)])
    assert rank_windows_by_energy(AudioBuffer(x, 22050), SMALL) == [2, 1, 0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 200), st.integers(1, 17))
def test_rank_first_is_bruteforce_max(seed, n, w):
    x = np.random.default_rng(seed).normal(size=n)
    order = rank_windows_by_energy(AudioBuffer(x, 22050), NoiseAlignPolicy(w))
    rms = window_rms(x, w)
    assert sorted(order) == list(range(len(rms)))
    assert rms[order[0]] == pytest.approx(max(rms), rel=1e-12)
    vals = [rms[i] for i in order]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_rank_empty():
    with pytest.raises(ValueError):
        rank_windows_by_energy(AudioBuffer(np.zeros(0), 22050))


def test_policy_validation():
    with pytest.raises(ValueError):
        NoiseAlignPolicy(0)


# --- alignment -----------------------------------------------------------------


def test_align_same_length_is_identity(rng):
    x = AudioBuffer(rng.normal(size=16384) * 0.1, 22050)
    np.testing.assert_array_equal(align_noise(x, 16384).samples, x.samples)


def test_align_short_noise_to_16384():
    out = align_noise(noise_clip(8000 / 22050, seed=3), 16384)
    assert len(out) == 16384


def test_align_long_noise_selects_loud_windows_in_order(rng):
    w = 1000
    levels = rng.uniform(0.05, 1.0, 40)
    x = np.concatenate([lv * rng.uniform(-1, 1, w) for lv in levels])
    out = align_noise(AudioBuffer(x, 22050), 16384, NoiseAlignPolicy(w)).samples
    assert len(out) == 16384
    picked = []
    for k in range(-(-16384 // w)):
        piece = out[k * w : (k + 1) * w]
        hits = [i for i in range(40) if np.array_equal(x[i * w : i * w + len(piece)], piece)]
        assert len(hits) == 1
        picked.append(hits[0])
    assert picked == sorted(picked)
    rms = window_rms(x, w)
    others = set(range(40)) - set(picked)
    assert min(rms[i] for i in picked) >= max(rms[i] for i in others)


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 400), st.integers(1, 4000), st.integers(1, 60), st.integers(0, 2**31))
def test_align_exact_length_property(n, target, w, seed):
    x = AudioBuffer(np.random.default_rng(seed).normal(size=n), 22050)
    assert len(align_noise(x, target, NoiseAlignPolicy(w))) == target


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 60), st.integers(1, 20), st.integers(0, 2**31), st.data())
def test_align_energy_dominance(n_win, w, seed, data):
    # window-aligned lengths: no tail trim, so the kept windows are whole
    k = data.draw(st.integers(1, n_win - 1))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n_win * w) * np.repeat(rng.uniform(0.05, 1.0, n_win), w)
    out = align_noise(AudioBuffer(x, 22050), k * w, NoiseAlignPolicy(w)).samples
    assert np.sqrt(np.mean(out**2)) >= np.sqrt(np.mean(x**2)) - 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_align_energy_dominance_default_windows(seed):
    noise = noise_clip(3.0, seed=seed)
    out = align_noise(noise, 16384).samples
    assert np.sqrt(np.mean(out**2)) >= np.sqrt(np.mean(noise.samples**2))


def test_align_errors():
    with pytest.raises(ValueError):
        align_noise(AudioBuffer(np.zeros(0), 22050), 10)
    with pytest.raises(ValueError):
        align_noise(AudioBuffer(np.ones(4), 22050), 0)


# --- mixing --------------------------------------------------------------------


def test_mix_silence_scales_noise(rng):
    n = rng.uniform(-1, 1, 50)
    out, g = mix(AudioBuffer(np.zeros(50), 22050), AudioBuffer(n, 22050), 0.7)
    np.testing.assert_allclose(out.samples, 0.7 * n, atol=1e-15)
    assert g == 1.0


def test_mix_arithmetic():
    out, g = mix(AudioBuffer([0.5], 22050), AudioBuffer([0.5], 22050), 0.7)
    assert out.samples[0] == pytest.approx(0.85, abs=1e-15) and g == 1.0


def test_mix_peak_normalization():
    out, g = mix(AudioBuffer([0.8], 22050), AudioBuffer([0.8], 22050), 0.7)
    assert out.samples[0] == 1.0
    assert g == pytest.approx(1 / 1.36, abs=1e-12)
    assert g == pytest.approx(0.735294117647, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_mix_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    c = np.clip(rng.normal(size=64) * scale, -1, 1)
    n = np.clip(rng.normal(size=64) * scale, -1, 1)
    out, g = mix(AudioBuffer(c, 22050), AudioBuffer(n, 22050))
    assert np.all(np.abs(out.samples) <= 1.0)
    assert 0 < g <= 1


def test_mix_length_mismatch():
    with pytest.raises(ValueError):
        mix(AudioBuffer([0.0, 0.0], 22050), AudioBuffer([0.0], 22050))


# --- manifests -----------------------------------------------------------------


def test_manifest_counts(toy_corpus):
    clean, noise = toy_corpus
    m = build_manifest(clean, [noise], seed=0)
    assert m.counts() == {"mixed": 40, "clean": 5, "total": 45}
    for e in m.entries:
        if e.is_passthrough:
            assert e.noise_gain == 0.0 and e.post_gain == 1.0
        else:
            assert e.noise_gain == 0.7 and 0 < e.post_gain <= 1
    per_clean = {}
    for e in m.entries:
        if not e.is_passthrough:
            per_clean[e.clean_path] = per_clean.get(e.clean_path, 0) + 1
    assert set(per_clean.values()) == {4} and len(per_clean) == 10


def test_manifest_deterministic(toy_corpus, tmp_path):
    clean, noise = toy_corpus
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    build_manifest(clean, [noise], seed=7).save(a)
    build_manifest(clean, [noise], seed=7).save(b)
    assert a.read_bytes() == b.read_bytes()


def test_manifest_seeds_differ(tmp_path):
    clean, noise = write_toy_corpus(tmp_path, n_clean=3, n_noise=10, clean_seconds=0.8, noise_seconds=0.3)
    a = build_manifest(clean, [noise], seed=1)
    b = build_manifest(clean, [noise], seed=2)
    assert [e.noise_path for e in a.entries] != [e.noise_path for e in b.entries]


def test_manifest_roundtrip(toy_corpus, tmp_path):
    clean, noise = toy_corpus
    m = build_manifest(clean, [noise], seed=3)
    m.save(tmp_path / "m.jsonl")
    back = CorpusManifest.load(tmp_path / "m.jsonl")
    assert back.dumps() == m.dumps()
    assert back.dsp == m.dsp


def test_manifest_empty_dirs(tmp_path, toy_corpus):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        build_manifest(tmp_path / "empty", [toy_corpus[1]])
    with pytest.raises(ValueError):
        build_manifest(toy_corpus[0], [tmp_path / "empty"])
    with pytest.raises(FileNotFoundError):
        build_manifest(toy_corpus[0], [tmp_path / "missing"])


# --- realization ---------------------------------------------------------------


@pytest.fixture(scope="module")
def manifest(toy_corpus):
    clean, noise = toy_corpus
    return build_manifest(clean, [noise], seed=0)


def test_realize_shapes(manifest):
    for e in (manifest.entries[0], manifest.entries[-1]):
        mel, clean = realize_pair(e)
        assert mel.values.shape == (80, 64)
        assert len(clean) == 16384 and clean.sample_rate == 22050


def test_realize_passthrough(manifest):
    e = next(e for e in manifest.entries if e.is_passthrough)
    mel, clean = realize_pair(e)
    np.testing.assert_array_equal(mel.values, log_mel(clean).values)


def test_realize_recomposition(manifest):
    for e in [e for e in manifest.entries if not e.is_passthrough][:8]:
        noisy, clean, aligned, g = realize_mixture(e)
        assert g == pytest.approx(e.post_gain, abs=1e-12)
        recomposed = noisy.samples / g
        assert np.max(np.abs(recomposed - (clean.samples + 0.7 * aligned.samples))) < 1e-6


def test_realize_deterministic(manifest):
    e = manifest.entries[3]
    assert np.array_equal(realize_pair(e)[0].values, realize_pair(e)[0].values)


def test_realize_short_clip_zero_padded(tmp_path):
    clean, noise = write_toy_corpus(tmp_path, n_clean=1, n_noise=1, clean_seconds=0.2, noise_seconds=0.2)
    m = build_manifest(clean, [noise], factor=1, clean_fraction=0.0)
    assert m.entries[0].segment_offset == 0
    _, c, _, _ = realize_mixture(m.entries[0])
    assert len(c) == 16384 and not np.any(c.samples[4500:])


def test_realize_corrupt_entry(manifest):
    e = manifest.entries[0]
    bad = MixtureManifestEntry(e.clean_path, e.noise_path, 0.7, 1.0, 0, -5)
    with pytest.raises(ValueError):
        realize_pair(bad)
    missing = MixtureManifestEntry("/nope.wav", None, 0.0, 1.0, 0, 0)
    with pytest.raises(FileNotFoundError):
        realize_pair(missing)
