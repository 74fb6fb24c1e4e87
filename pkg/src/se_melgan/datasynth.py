"""Synthetic noisy-speech corpus: noise alignment, mixing and manifests."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import (
    CANONICAL_RATE,
    AudioBuffer,
    MelConfig,
    MelSpectrogram,
    load_wav,
    log_mel,
    read_wav_info,
    resample,
)

log = logging.getLogger(__name__)

NOISE_GAIN = 0.7
SEGMENT_LENGTH = 16384
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class NoiseAlignPolicy:
    window_length: int = CANONICAL_RATE // 2

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")


@dataclass
class MixtureManifestEntry:
    clean_path: str
    noise_path: str | None
    noise_gain: float
    post_gain: float
    seed: int
    segment_offset: int

    @property
    def is_passthrough(self) -> bool:
        return self.noise_path is None


@dataclass
class CorpusManifest:
    entries: list[MixtureManifestEntry]
    augmentation_factor: int = 4
    clean_fraction: float = 0.5
    global_seed: int = 0
    dsp: MelConfig = field(default_factory=MelConfig)
    segment_length: int = SEGMENT_LENGTH

    def counts(self) -> dict[str, int]:
        passthrough = sum(e.is_passthrough for e in self.entries)
        return {"mixed": len(self.entries) - passthrough, "clean": passthrough, "total": len(self.entries)}

    def header(self) -> dict:
        return {
            "manifest_version": MANIFEST_VERSION,
            "global_seed": self.global_seed,
            "factor": self.augmentation_factor,
            "clean_fraction": self.clean_fraction,
            "segment_length": self.segment_length,
            "dsp": self.dsp.to_dict(),
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(asdict(e), sort_keys=True) for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        """Atomic write: either the complete manifest lands at ``path`` or nothing does."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.dumps())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty manifest")
        head = json.loads(lines[0])
        if head.get("manifest_version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {head.get('manifest_version')}")
        entries = [MixtureManifestEntry(**json.loads(ln)) for ln in lines[1:]]
        return cls(
            entries=entries,
            augmentation_factor=head["factor"],
            clean_fraction=head["clean_fraction"],
            global_seed=head["global_seed"],
            dsp=MelConfig.from_dict(head["dsp"]),
            segment_length=head.get("segment_length", SEGMENT_LENGTH),
        )


def _window_rms(x: np.ndarray, window: int) -> np.ndarray:
    n_win = -(-len(x) // window)
    padded = np.zeros(n_win * window)
    padded[: len(x)] = x
    energy = (padded.reshape(n_win, window) ** 2).sum(axis=1)
    lengths = np.full(n_win, window)
    lengths[-1] = len(x) - (n_win - 1) * window
    return np.sqrt(energy / lengths)


def rank_windows_by_energy(noise: AudioBuffer, policy: NoiseAlignPolicy = NoiseAlignPolicy()) -> list[int]:
    """Window indices by descending RMS, ties broken by ascending index.

    The trailing partial window takes part, with its RMS measured over its
    actual length.
    """
    if len(noise) < 1:
        raise ValueError("noise buffer is empty")
    rms = _window_rms(noise.samples, policy.window_length)
    # lexsort sorts by the last key first
    return np.lexsort((np.arange(len(rms)), -rms)).tolist()


def align_noise(noise: AudioBuffer, target_length: int, policy: NoiseAlignPolicy = NoiseAlignPolicy()) -> AudioBuffer:
    """Cut and re-concatenate the loudest noise windows to exactly ``target_length`` samples.

    Whole copies of the noise fill the target while it is longer than the
    source. The remainder is covered by taking windows in energy order until
    enough material is collected, putting them back in temporal order and
    trimming the tail.
    """
    if len(noise) < 1:
        raise ValueError("noise buffer is empty")
    if target_length < 1:
        raise ValueError("target_length must be >= 1")
    x, w = noise.samples, policy.window_length
    repeats, remainder = divmod(target_length, len(x))
    parts = [x] * repeats
    if remainder:
        chosen, total = [], 0
        for idx in rank_windows_by_energy(noise, policy):
            chosen.append(idx)
            total += min(w, len(x) - idx * w)
            if total >= remainder:
                break
        parts += [x[i * w : (i + 1) * w] for i in sorted(chosen)]
    out = np.concatenate(parts)[:target_length]
    return AudioBuffer(out, noise.sample_rate)


def mix(clean: AudioBuffer, aligned_noise: AudioBuffer, noise_gain: float = NOISE_GAIN) -> tuple[AudioBuffer, float]:
    """Return ``clean + noise_gain * noise``, peak-normalized into [-1, 1], and the gain applied."""
    if len(clean) != len(aligned_noise):
        raise ValueError(f"length mismatch: clean {len(clean)} vs noise {len(aligned_noise)}")
    if clean.sample_rate != aligned_noise.sample_rate:
        raise ValueError("sample rate mismatch between clean and noise")
    m = clean.samples + noise_gain * aligned_noise.samples
    peak = float(np.max(np.abs(m))) if len(m) else 0.0
    post_gain = 1.0 / peak if peak > 1.0 else 1.0
    if post_gain != 1.0:
        m = np.clip(m * post_gain, -1.0, 1.0)
    return AudioBuffer(m, clean.sample_rate), post_gain


def _list_wavs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.rglob("*") if p.suffix.lower() == ".wav" and p.is_file())


def _resampled_length(path: Path, rate: int) -> int:
    info = read_wav_info(path)
    return int(round(info.frames * rate / info.sample_rate))


def build_manifest(
    clean_dir,
    noise_dirs,
    factor: int = 4,
    clean_fraction: float = 0.5,
    seed: int = 0,
    mel: MelConfig = MelConfig(),
    segment_length: int = SEGMENT_LENGTH,
    noise_gain: float = NOISE_GAIN,
) -> CorpusManifest:
    """Pair every clean file with ``factor`` random noises and add a clean pass-through subset.

    Deterministic for a fixed ``seed``: files are enumerated in sorted order
    and all draws come from a single RNG stream.
    """
    clean = _list_wavs(clean_dir)
    noises = sorted({p for d in noise_dirs for p in _list_wavs(d)})
    if not clean:
        raise ValueError(f"no clean WAV files under {clean_dir}")
    if not noises:
        raise ValueError(f"no noise WAV files under {list(map(str, noise_dirs))}")
    rng = np.random.default_rng(seed)
    policy = NoiseAlignPolicy()
    max_seed = np.iinfo(np.int32).max

    def offset_for(path: Path) -> int:
        n = _resampled_length(path, mel.sample_rate)
        return int(rng.integers(0, max(0, n - segment_length) + 1))

    entries = []
    for path in clean:
        for _ in range(factor):
            noise_path = noises[int(rng.integers(len(noises)))]
            entry = MixtureManifestEntry(
                clean_path=str(path),
                noise_path=str(noise_path),
                noise_gain=noise_gain,
                post_gain=1.0,
                seed=int(rng.integers(max_seed)),
                segment_offset=offset_for(path),
            )
            entry.post_gain = realize_mixture(entry, segment_length, mel.sample_rate, policy)[3]
            entries.append(entry)
    n_pass = int(round(clean_fraction * len(clean)))
    for i in sorted(rng.choice(len(clean), size=n_pass, replace=False).tolist()):
        entries.append(
            MixtureManifestEntry(
                clean_path=str(clean[i]),
                noise_path=None,
                noise_gain=0.0,
                post_gain=1.0,
                seed=int(rng.integers(max_seed)),
                segment_offset=offset_for(clean[i]),
            )
        )
    return CorpusManifest(entries, factor, clean_fraction, seed, mel, segment_length)


def _load_at(path, rate: int) -> AudioBuffer:
    audio = load_wav(path)
    return resample(audio, rate) if audio.sample_rate != rate else audio


def crop_segment(audio: AudioBuffer, offset: int, length: int) -> AudioBuffer:
    """Slice ``length`` samples at ``offset``, zero-padding the end of short clips."""
    out = np.zeros(length)
    piece = audio.samples[offset : offset + length]
    out[: len(piece)] = piece
    return AudioBuffer(out, audio.sample_rate)


def realize_mixture(
    entry: MixtureManifestEntry,
    segment_length: int = SEGMENT_LENGTH,
    sample_rate: int = CANONICAL_RATE,
    policy: NoiseAlignPolicy = NoiseAlignPolicy(),
) -> tuple[AudioBuffer, AudioBuffer, AudioBuffer | None, float]:
    """Waveform-level realization: (noisy, clean_segment, aligned_noise, post_gain)."""
    if entry.segment_offset < 0:
        raise ValueError(f"corrupt manifest entry: negative offset {entry.segment_offset}")
    clean = crop_segment(_load_at(entry.clean_path, sample_rate), entry.segment_offset, segment_length)
    if entry.is_passthrough:
        return clean, clean, None, 1.0
    noise = _load_at(entry.noise_path, sample_rate)
    if len(noise) == 0:
        raise ValueError(f"empty noise file {entry.noise_path}")
    aligned = align_noise(noise, segment_length, policy)
    noisy, post_gain = mix(clean, aligned, entry.noise_gain)
    return noisy, clean, aligned, post_gain


def realize_pair(
    entry: MixtureManifestEntry,
    segment_length: int = SEGMENT_LENGTH,
    mel: MelConfig = MelConfig(),
) -> tuple[MelSpectrogram, AudioBuffer]:
    noisy, clean, _, _ = realize_mixture(entry, segment_length, mel.sample_rate)
    return log_mel(noisy, mel), clean
