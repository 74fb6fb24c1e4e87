"""Experiment config file: one YAML document with dsp / model / losses / trainer sections."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .datasynth import SEGMENT_LENGTH
from .dsp import MelConfig
from .losses import LossWeights
from .model import DiscriminatorConfig, GeneratorConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    dsp: MelConfig = field(default_factory=MelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    segment_length: int = SEGMENT_LENGTH

    def __post_init__(self):
        if self.segment_length % self.dsp.stft.hop_length:
            raise ValueError("segment_length must be a multiple of hop_length")
        if self.generator.mel_channels != self.dsp.n_mels:
            raise ValueError("generator mel_channels must equal dsp n_mels")
        if self.generator.hop_length != self.dsp.stft.hop_length:
            raise ValueError("generator upsampling must invert the STFT hop")

    def to_dict(self) -> dict:
        trainer = self.trainer.to_dict()
        losses = trainer.pop("weights")
        return {
            "dsp": self.dsp.to_dict(),
            "model": {"generator": self.generator.to_dict(), "discriminator": self.discriminator.to_dict()},
            "losses": losses,
            "trainer": trainer,
            "segment_length": self.segment_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        model = d.get("model", {})
        trainer = TrainConfig(**{k: v for k, v in d.get("trainer", {}).items()}, weights=LossWeights(**d.get("losses", {})))
        return cls(
            dsp=MelConfig.from_dict(d.get("dsp", {})),
            generator=GeneratorConfig.from_dict(model.get("generator", {})),
            discriminator=DiscriminatorConfig.from_dict(model.get("discriminator", {})),
            trainer=trainer,
            segment_length=d.get("segment_length", SEGMENT_LENGTH),
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, trainer=replace(self.trainer, seed=seed))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh) or {})


def dump_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
