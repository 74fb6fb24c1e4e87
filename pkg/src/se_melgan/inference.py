"""Whole-file and chunked enhancement, and real-time-factor measurement."""

from __future__ import annotations

import math
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .dsp import AudioBuffer, MelConfig, log_mel, log_mel_tensor, resample
from .model import Generator

CHUNK_OVERLAP_FRAMES = 8


def enhance_mel(gen: Generator, mel: np.ndarray, chunk_frames: int | None = None,
                overlap: int = CHUNK_OVERLAP_FRAMES) -> np.ndarray:
    """Run the generator over an (n_mels, frames) log-mel, optionally in cross-faded chunks."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] != gen.config.mel_channels:
        raise ValueError(f"expected {gen.config.mel_channels} mel channels, got shape {mel.shape}")
    n_frames, hop = mel.shape[1], gen.config.hop_length
    if n_frames < 1:
        raise ValueError("mel has no frames")
    x = torch.as_tensor(mel, dtype=torch.float32)[None]

    def run(lo, hi):
        with torch.inference_mode():
            return gen(x[:, :, lo:hi])[0, 0].double().numpy()

    if chunk_frames is None or chunk_frames >= n_frames:
        return run(0, n_frames)
    if chunk_frames <= overlap:
        raise ValueError(f"chunk_frames must exceed the {overlap}-frame overlap")
    out = np.zeros(n_frames * hop)
    fade_len = overlap * hop
    ramp = (np.arange(fade_len) + 0.5) / fade_len
    start, end = 0, min(chunk_frames, n_frames)
    out[: end * hop] = run(start, end)
    while end < n_frames:
        start = end - overlap
        new_end = min(start + chunk_frames, n_frames)
        y = run(start, new_end)
        seam = slice(start * hop, end * hop)
        out[seam] = out[seam] * (1.0 - ramp) + y[:fade_len] * ramp
        out[end * hop : new_end * hop] = y[fade_len:]
        end = new_end
    return out


def enhance_audio(gen: Generator, audio: AudioBuffer, mel: MelConfig = MelConfig(),
                  chunk_frames: int | None = None) -> AudioBuffer:
    if len(audio) == 0:
        raise ValueError("input audio is empty")
    if gen.config.mel_channels != mel.n_mels:
        raise ValueError(f"checkpoint expects {gen.config.mel_channels} mel channels, dsp config gives {mel.n_mels}")
    if audio.sample_rate != mel.sample_rate:
        audio = resample(audio, mel.sample_rate)
    spec = log_mel(audio, mel)
    return AudioBuffer(enhance_mel(gen, spec.values, chunk_frames), mel.sample_rate)


@dataclass
class RtfReport:
    audio_seconds: float
    wall_seconds: float
    rtf: float
    device_label: str
    include_dsp: bool
    wall_times: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        scope = "mel+generator" if self.include_dsp else "generator"
        return (f"{self.audio_seconds:.3f} s audio in {self.wall_seconds:.4f} s ({scope}, median of "
                f"{len(self.wall_times)}) -> RTF {self.rtf:.2f}x on {self.device_label}")


def rtf_report(audio_seconds: float, wall_times, device_label: str, include_dsp: bool = False) -> RtfReport:
    wall = statistics.median(wall_times)
    return RtfReport(audio_seconds, wall, audio_seconds / wall, device_label, include_dsp, list(wall_times))


def device_label(device: str = "cpu") -> str:
    if device.startswith("cuda"):
        return f"cuda:{torch.cuda.get_device_name(torch.device(device))}"
    name = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    name = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"cpu:{name} ({torch.get_num_threads()} threads)"


def benchmark(gen: Generator, duration_seconds: float, repeats: int = 5, include_dsp: bool = False,
              seed: int = 0, device: str = "cpu", mel: MelConfig = MelConfig()) -> RtfReport:
    """Median wall time of ``repeats`` generator passes over a random mel, after one warm-up."""
    if duration_seconds <= 0:
        raise ValueError("duration_seconds must be positive")
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    hop = gen.config.hop_length
    frames = math.ceil(duration_seconds * mel.sample_rate / hop)
    rng = np.random.default_rng(seed)
    gen = gen.to(device).eval()
    x = torch.as_tensor(rng.normal(-5.0, 2.0, (1, gen.config.mel_channels, frames)), dtype=torch.float32, device=device)
    wave = torch.as_tensor(rng.uniform(-0.5, 0.5, (1, frames * hop)), dtype=torch.float32, device=device)

    def once():
        sync = torch.cuda.synchronize if device.startswith("cuda") else (lambda: None)
        sync()
        t0 = time.perf_counter()
        with torch.inference_mode():
            inp = log_mel_tensor(wave, mel) if include_dsp else x
            gen(inp)
        sync()
        return time.perf_counter() - t0

    once()
    times = [once() for _ in range(repeats)]
    return rtf_report(frames * hop / mel.sample_rate, times, device_label(device), include_dsp)
