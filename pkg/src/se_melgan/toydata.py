"""Synthetic speech-like and noise clips for smoke runs and tests.

Not a substitute for a real corpus; just enough harmonic structure and
energy variation for the pipeline to have something to learn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import CANONICAL_RATE, AudioBuffer, save_wav


def voiced_clip(seconds: float, rate: int = CANONICAL_RATE, seed: int = 0) -> AudioBuffer:
    """Glottal-pulse-like harmonic series with a wandering pitch and syllable envelope."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    f0 = rng.uniform(100, 220) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    x = np.zeros(n)
    for h in range(1, 25):
        if h * f0.max() > 0.45 * rate:
            break
        formant = np.exp(-((h * f0.mean() - 700) / 500) ** 2) + 0.5 * np.exp(-((h * f0.mean() - 2200) / 700) ** 2)
        x += (formant + 0.05) / h * np.sin(h * phase)
    envelope = np.clip(np.sin(2 * np.pi * rng.uniform(2, 4) * t + rng.uniform(0, np.pi)), 0, None) ** 0.5
    x *= envelope
    return AudioBuffer(0.5 * x / (np.abs(x).max() + 1e-12), rate)


def noise_clip(seconds: float, rate: int = CANONICAL_RATE, seed: int = 0) -> AudioBuffer:
    """Colored noise with random bursts so window energies differ."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    white = rng.normal(size=n)
    colored = np.convolve(white, np.ones(rng.integers(1, 8)) / 4, mode="same")
    bursts = np.repeat(rng.uniform(0.1, 1.0, n // 2048 + 1), 2048)[:n]
    x = colored * bursts
    return AudioBuffer(0.4 * x / (np.abs(x).max() + 1e-12), rate)


def write_toy_corpus(root, n_clean: int = 10, n_noise: int = 5, clean_seconds: float = 1.5,
                     noise_seconds: float = 1.0, clean_rate: int = 16000, noise_rate: int = CANONICAL_RATE,
                     seed: int = 0) -> tuple[Path, Path]:
    """Write ``root/clean/*.wav`` and ``root/noise/*.wav``; returns both directories."""
    root = Path(root)
    clean_dir, noise_dir = root / "clean", root / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_clean):
        save_wav(clean_dir / f"speaker{i:03d}.wav", voiced_clip(clean_seconds, clean_rate, seed + i))
    for i in range(n_noise):
        save_wav(noise_dir / f"noise{i:03d}.wav", noise_clip(noise_seconds, noise_rate, seed + 1000 + i))
    return clean_dir, noise_dir
