"""MelGAN generator and multi-scale discriminator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import weight_norm

from .dsp import CANONICAL_RATE, AudioBuffer, MelSpectrogram, reflect_pad

INIT_STD = 0.02
# Row norm of torch's default conv init in expectation. Taken as the weight-norm
# magnitude so the N(0, 0.02) draw only fixes directions; with g = ||v|| the
# 0.02 scale compounds to ~1e-11 output at the default depth.
INIT_GAIN = 3 ** -0.5

FeatureMaps = list[list[torch.Tensor]]


@dataclass(frozen=True)
class GeneratorConfig:
    mel_channels: int = 80
    base_channels: int = 512
    upsample_ratios: tuple[int, ...] = (8, 8, 2, 2)
    resblock_dilations: tuple[int, ...] = (1, 3, 9)
    leaky_slope: float = 0.01
    output_channels: int = 1
    hop_length: int = 256
    # "zeros" only exists for shift-equivariance checks
    padding_mode: str = "reflect"

    def __post_init__(self):
        object.__setattr__(self, "upsample_ratios", tuple(self.upsample_ratios))
        object.__setattr__(self, "resblock_dilations", tuple(self.resblock_dilations))
        if math.prod(self.upsample_ratios) != self.hop_length:
            raise ValueError(
                f"upsample ratios {self.upsample_ratios} multiply to {math.prod(self.upsample_ratios)}, "
                f"not the hop length {self.hop_length}"
            )
        if any(r % 2 for r in self.upsample_ratios):
            raise ValueError("upsample ratios must be even for the exact length law")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.base_channels % 2 ** len(self.upsample_ratios):
            raise ValueError("base_channels must survive one halving per upsampling stage")
        if self.padding_mode not in ("reflect", "zeros"):
            raise ValueError(f"unknown padding_mode {self.padding_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["upsample_ratios"] = list(self.upsample_ratios)
        d["resblock_dilations"] = list(self.resblock_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    num_scales: int = 3
    channels: tuple[int, ...] = (16, 64, 256, 1024, 1024, 1024)
    downsample_stride: int = 4
    group_width: int = 4
    leaky_slope: float = 0.01
    min_input_length: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if len(self.channels) < 3:
            raise ValueError("channel schedule needs an input, at least one strided and one output layer")
        for c_in, c_out in zip(self.channels[:-2], self.channels[1:-1]):
            g = max(1, c_in // self.group_width)
            if c_in % g or c_out % g:
                raise ValueError(f"grouped conv {c_in}->{c_out} with {g} groups is not divisible")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**d)


def scaled_configs(divisor: int) -> tuple[GeneratorConfig, DiscriminatorConfig]:
    """Default topology with every channel width divided by ``divisor`` (smoke-scale models)."""
    g = GeneratorConfig(base_channels=512 // divisor)
    d = DiscriminatorConfig(channels=tuple(max(1, c // divisor) for c in DiscriminatorConfig().channels))
    return g, d


def _conv(*args, **kwargs) -> nn.Module:
    # weight norm is applied after seeded init, see _init_and_normalize
    return nn.Conv1d(*args, **kwargs)


def _init_and_normalize(model: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    convs = [m for m in model.modules() if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d))]
    with torch.no_grad():
        for m in convs:
            m.weight.normal_(0.0, INIT_STD, generator=gen)
            m.bias.zero_()
    for m in convs:
        weight_norm(m)
        with torch.no_grad():
            m.parametrizations.weight.original0.fill_(INIT_GAIN)


class _Pad(nn.Module):
    def __init__(self, amount: int, mode: str):
        super().__init__()
        self.amount, self.mode = amount, mode

    def forward(self, x):
        if self.mode == "reflect":
            return reflect_pad(x, self.amount, self.amount)
        return F.pad(x, (self.amount, self.amount))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, slope: float, padding_mode: str):
        super().__init__()
        self.block = nn.Sequential(
            nn.LeakyReLU(slope),
            _Pad(dilation, padding_mode),
            _conv(channels, channels, 3, dilation=dilation),
            nn.LeakyReLU(slope),
            _conv(channels, channels, 1),
        )
        self.shortcut = _conv(channels, channels, 1)

    def forward(self, x):
        return self.shortcut(x) + self.block(x)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig, seed: int = 0):
        super().__init__()
        self.config = config
        slope, mode = config.leaky_slope, config.padding_mode
        ch = config.base_channels
        layers = [_Pad(3, mode), _conv(config.mel_channels, ch, 7)]
        for r in config.upsample_ratios:
            layers += [
                nn.LeakyReLU(slope),
                nn.ConvTranspose1d(ch, ch // 2, 2 * r, stride=r, padding=r // 2),
            ]
            ch //= 2
            layers += [ResidualBlock(ch, d, slope, mode) for d in config.resblock_dilations]
        layers += [nn.LeakyReLU(slope), _Pad(3, mode), _conv(ch, config.output_channels, 7), nn.Tanh()]
        self.layers = nn.Sequential(*layers)
        _init_and_normalize(self, seed)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """(batch, mel_channels, frames) -> (batch, 1, frames * hop)."""
        return self.layers(mel)


class SubDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        ch, stride = config.channels, config.downsample_stride
        layers = [nn.Sequential(_Pad(7, "reflect"), _conv(1, ch[0], 15))]
        for c_in, c_out in zip(ch[:-2], ch[1:-1]):
            layers.append(
                _conv(c_in, c_out, 10 * stride + 1, stride=stride, padding=5 * stride,
                      groups=max(1, c_in // config.group_width))
            )
        layers.append(_conv(ch[-2], ch[-1], 5, padding=2))
        layers.append(_conv(ch[-1], 1, 3, padding=1))
        self.layers = nn.ModuleList(layers)
        self.act = nn.LeakyReLU(config.leaky_slope)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """All layer outputs; the last one is the patch-logit map."""
        maps = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
            maps.append(x)
        return maps


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.scales = nn.ModuleList(SubDiscriminator(config) for _ in range(config.num_scales))
        self.pool = nn.AvgPool1d(4, stride=2, padding=1, count_include_pad=False)
        _init_and_normalize(self, seed)

    def forward(self, audio: torch.Tensor) -> tuple[list[torch.Tensor], FeatureMaps]:
        """(batch, 1, samples) -> (per-scale logits, per-scale feature maps)."""
        if audio.shape[-1] < self.config.min_input_length:
            raise ValueError(
                f"discriminator input has {audio.shape[-1]} samples; at least {self.config.min_input_length} required"
            )
        logits, maps = [], []
        x = audio
        for k, sub in enumerate(self.scales):
            if k:
                x = self.pool(x)
            m = sub(x)
            maps.append(m)
            logits.append(m[-1])
        return logits, maps


def build_generator(config: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> Generator:
    return Generator(config, seed)


def build_discriminator(config: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0) -> Discriminator:
    return Discriminator(config, seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def generator_forward(gen: Generator, mel: MelSpectrogram) -> AudioBuffer:
    values = np.asarray(mel.values)
    if values.ndim != 2 or values.shape[0] != gen.config.mel_channels:
        raise ValueError(f"expected a mel with {gen.config.mel_channels} rows, got shape {values.shape}")
    x = torch.as_tensor(values, dtype=torch.float32)[None]
    with torch.inference_mode():
        y = gen(x)[0, 0].double().numpy()
    rate = getattr(mel.config, "sample_rate", CANONICAL_RATE)
    return AudioBuffer(y, rate)


def discriminator_forward(disc: Discriminator, audio: AudioBuffer) -> tuple[list[np.ndarray], FeatureMaps]:
    x = torch.as_tensor(audio.samples, dtype=torch.float32)[None, None]
    with torch.inference_mode():
        logits, maps = disc(x)
    return [l[0, 0].numpy() for l in logits], maps
