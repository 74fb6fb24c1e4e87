"""MelGAN-topology speech enhancement: noisy log-mel in, clean waveform out."""

from .dsp import AudioBuffer, MelConfig, MelSpectrogram, StftConfig, load_wav, log_mel, save_wav
from .model import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "MelConfig",
    "MelSpectrogram",
    "StftConfig",
    "load_wav",
    "log_mel",
    "save_wav",
    "GeneratorConfig",
    "DiscriminatorConfig",
    "build_generator",
    "build_discriminator",
]
