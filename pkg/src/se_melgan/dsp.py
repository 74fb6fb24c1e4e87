"""Audio I/O, resampling and the convolutional STFT -> mel -> log pipeline.

Everything here is a pure function of its inputs. The numpy-facing
functions (``stft_magnitude``, ``log_mel``) run in float64; the ``*_tensor``
variants keep the caller's dtype and stay differentiable so the training
losses can reuse them.
"""

from __future__ import annotations

import functools
import math
import os
import struct
import tempfile
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal
import torch
import torch.nn.functional as F

CANONICAL_RATE = 22050
PCM16_SCALE = 32768.0

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV decoding failures."""


class WavHeaderError(WavError):
    """The RIFF/WAVE container is malformed."""


class UnsupportedEncodingError(WavError):
    """Well-formed WAV file with a sample encoding we do not decode."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    filter_length: int = 1024
    hop_length: int = 256
    win_length: int = 1024

    def __post_init__(self):
        if min(self.filter_length, self.hop_length, self.win_length) < 1:
            raise ValueError("STFT lengths must be positive")
        if self.win_length > self.filter_length:
            raise ValueError("win_length must not exceed filter_length")
        if (self.filter_length - self.hop_length) % 2:
            raise ValueError("filter_length - hop_length must be even for symmetric padding")

    @property
    def n_bins(self) -> int:
        return self.filter_length // 2 + 1

    @property
    def padding(self) -> int:
        return (self.filter_length - self.hop_length) // 2


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    sample_rate: int = CANONICAL_RATE
    stft: StftConfig = field(default_factory=StftConfig)
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ValueError(
                f"need 0 <= f_min < f_max <= sample_rate/2, got {self.f_min}, {self.f_max}, {self.sample_rate}"
            )
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MelConfig":
        d = dict(d)
        stft = StftConfig(**d.pop("stft", {}))
        return cls(stft=stft, **d)


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_mels, frames), natural log
    config: MelConfig

    @property
    def frames(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# WAV I/O


@dataclass(frozen=True)
class WavInfo:
    format_tag: int
    channels: int
    sample_rate: int
    bits_per_sample: int
    frames: int
    data_offset: int
    data_size: int


def read_wav_info(path) -> WavInfo:
    """Parse the RIFF header of ``path`` without decoding the samples."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        while True:
            chunk = fh.read(8)
            if len(chunk) == 0:
                break
            if len(chunk) < 8:
                raise WavHeaderError(f"{path}: truncated chunk header")
            cid, size = chunk[:4], struct.unpack("<I", chunk[4:])[0]
            if cid == b"fmt ":
                body = fh.read(size)
                if size < 16 or len(body) < 16:
                    raise WavHeaderError(f"{path}: fmt chunk too short")
                tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == WAVE_FORMAT_EXTENSIBLE:
                    if size < 40:
                        raise WavHeaderError(f"{path}: extensible fmt chunk too short")
                    tag = struct.unpack("<H", body[24:26])[0]
                if channels < 1 or rate < 1 or block_align != channels * bits // 8:
                    raise WavHeaderError(f"{path}: inconsistent fmt chunk")
                fmt = (tag, channels, rate, bits)
                if size % 2:
                    fh.seek(1, os.SEEK_CUR)
            elif cid == b"data":
                if fmt is None:
                    raise WavHeaderError(f"{path}: data chunk before fmt chunk")
                offset = fh.tell()
                available = path.stat().st_size - offset
                size = min(size, available)
                tag, channels, rate, bits = fmt
                frame_bytes = channels * bits // 8
                return WavInfo(tag, channels, rate, bits, size // frame_bytes, offset, size)
            else:
                fh.seek(size + (size % 2), os.SEEK_CUR)
    raise WavHeaderError(f"{path}: missing {'fmt' if fmt is None else 'data'} chunk")


def load_wav(path) -> AudioBuffer:
    """Read PCM16 or float32 WAV, averaging channels down to mono."""
    info = read_wav_info(path)
    if info.format_tag == WAVE_FORMAT_PCM and info.bits_per_sample == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / PCM16_SCALE
    elif info.format_tag == WAVE_FORMAT_IEEE_FLOAT and info.bits_per_sample == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(
            f"{path}: format tag {info.format_tag:#06x} with {info.bits_per_sample} bits is not supported"
        )
    with open(path, "rb") as fh:
        fh.seek(info.data_offset)
        raw = fh.read(info.frames * info.channels * dtype.itemsize)
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64) * scale
    data = data.reshape(info.frames, info.channels).mean(axis=1)
    if not np.all(np.isfinite(data)):
        raise WavError(f"{path}: non-finite samples")
    return AudioBuffer(data, info.sample_rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype("<i2")


def save_wav(path, audio: AudioBuffer) -> None:
    """Write mono PCM16. The file appears atomically or not at all."""
    path = Path(path)
    pcm = to_pcm16(audio.samples)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".wav", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh, wave.open(fh, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(audio.sample_rate)
            w.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# Resampling

_RESAMPLE_WINDOW = ("kaiser", 8.0)


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase resampling to ``target_rate``; output length is ``round(n * target / source)``."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == audio.sample_rate:
        return AudioBuffer(audio.samples.copy(), audio.sample_rate)
    g = math.gcd(target_rate, audio.sample_rate)
    up, down = target_rate // g, audio.sample_rate // g
    n_out = int(round(len(audio) * up / down))
    if len(audio) == 0:
        return AudioBuffer(np.zeros(0), target_rate)
    out = scipy.signal.resample_poly(audio.samples, up, down, window=_RESAMPLE_WINDOW)
    # resample_poly yields ceil(n * up / down) samples
    return AudioBuffer(out[:n_out], target_rate)


# --------------------------------------------------------------------------
# Convolutional STFT and mel


def _reflect_index(n: int, left: int, right: int) -> np.ndarray:
    idx = np.arange(-left, n + right)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def reflect_pad(x: torch.Tensor, left: int, right: int) -> torch.Tensor:
    """Reflection padding on the last axis; unlike F.pad, pads may exceed the length."""
    n = x.shape[-1]
    if left < n and right < n:
        return F.pad(x, (left, right), mode="reflect")
    idx = torch.from_numpy(_reflect_index(n, left, right)).to(x.device)
    return x.index_select(-1, idx)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)


@functools.lru_cache(maxsize=16)
def _dft_kernels(config: StftConfig) -> np.ndarray:
    n = config.filter_length
    window = np.zeros(n)
    lead = (n - config.win_length) // 2
    window[lead : lead + config.win_length] = hann_window(config.win_length)
    k = np.arange(config.n_bins)[:, None]
    t = np.arange(n)[None, :]
    phase = 2 * np.pi * k * t / n
    basis = np.concatenate([np.cos(phase) * window, -np.sin(phase) * window])
    return basis[:, None, :]  # (2 * n_bins, 1, n)


def stft_magnitude_tensor(x: torch.Tensor, config: StftConfig) -> torch.Tensor:
    """(batch, samples) -> (batch, n_bins, ceil(samples / hop)) magnitude via strided conv1d."""
    if x.dim() == 1:
        x = x[None]
    n = x.shape[-1]
    if n < 1:
        raise ValueError("audio must contain at least one sample")
    frames = -(-n // config.hop_length)
    extra = frames * config.hop_length - n
    padded = reflect_pad(x[:, None, :], config.padding, config.padding + extra)
    kernels = torch.from_numpy(_dft_kernels(config)).to(dtype=x.dtype, device=x.device)
    spec = F.conv1d(padded, kernels, stride=config.hop_length)
    real, imag = spec[:, : config.n_bins], spec[:, config.n_bins :]
    power = real * real + imag * imag
    positive = power > 0
    # double-where keeps gradients finite at exact zeros
    return torch.where(positive, torch.sqrt(torch.where(positive, power, torch.ones_like(power))), torch.zeros_like(power))


def stft_magnitude(audio: AudioBuffer, config: StftConfig = StftConfig()) -> np.ndarray:
    if len(audio) < 1:
        raise ValueError("audio must contain at least one sample")
    x = torch.from_numpy(audio.samples)
    return stft_magnitude_tensor(x, config)[0].numpy()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=16)
def _filterbank(config: MelConfig) -> np.ndarray:
    n_fft = config.stft.filter_length
    fft_hz = np.arange(config.stft.n_bins) * config.sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(config.f_min), hz_to_mel(config.f_max), config.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_hz - lo) / (mid - lo)
    falling = (hi - fft_hz) / (hi - mid)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no FFT bin; lower n_mels or raise filter_length")
    return bank


def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, filter_length // 2 + 1)."""
    return _filterbank(config).copy()


def log_mel_tensor(x: torch.Tensor, config: MelConfig) -> torch.Tensor:
    """(batch, samples) -> (batch, n_mels, frames) natural-log mel magnitudes."""
    mag = stft_magnitude_tensor(x, config.stft)
    bank = torch.from_numpy(_filterbank(config)).to(dtype=mag.dtype, device=mag.device)
    return torch.log(torch.clamp(torch.matmul(bank, mag), min=config.log_floor))


def log_mel(audio: AudioBuffer, config: MelConfig = MelConfig()) -> MelSpectrogram:
    if audio.sample_rate != config.sample_rate:
        raise ValueError(f"audio is {audio.sample_rate} Hz but mel config expects {config.sample_rate} Hz")
    values = log_mel_tensor(torch.from_numpy(audio.samples), config)[0].numpy()
    return MelSpectrogram(values, config)


def frames_for(n_samples: int, hop_length: int = 256) -> int:
    return math.ceil(n_samples / hop_length)
