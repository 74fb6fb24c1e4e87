"""Hinge adversarial, feature-matching and mel-domain L2 objectives."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .dsp import AudioBuffer, MelConfig, log_mel_tensor


@dataclass(frozen=True)
class LossWeights:
    feature_matching: float = 10.0
    mel_l2: float = 1.0
    adversarial: float = 1.0
    # "l2" switches feature matching to squared distance
    feature_matching_distance: str = "l1"

    def __post_init__(self):
        if min(self.feature_matching, self.mel_l2, self.adversarial) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.feature_matching_distance not in ("l1", "l2"):
            raise ValueError(f"unknown feature matching distance {self.feature_matching_distance!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    if isinstance(x, AudioBuffer):
        return torch.from_numpy(x.samples)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def hinge_discriminator_loss(real_logits: Sequence, fake_logits: Sequence) -> torch.Tensor:
    if len(real_logits) != len(fake_logits):
        raise ValueError(f"scale count mismatch: {len(real_logits)} real vs {len(fake_logits)} fake")
    total = 0.0
    for real, fake in zip(real_logits, fake_logits):
        total = total + F.relu(1 - _t(real)).mean() + F.relu(1 + _t(fake)).mean()
    return _t(total)


def hinge_generator_loss(fake_logits: Sequence) -> torch.Tensor:
    if len(fake_logits) == 0:
        raise ValueError("no discriminator scales given")
    return sum(-_t(fake).mean() for fake in fake_logits)


def feature_matching_loss(real: Sequence[Sequence], fake: Sequence[Sequence], distance: str = "l1") -> torch.Tensor:
    """Per-layer mean distance, averaged over layers, summed over scales.

    Real features are treated as constants.
    """
    if len(real) != len(fake):
        raise ValueError("scale count mismatch")
    total = torch.zeros(())
    for real_layers, fake_layers in zip(real, fake):
        if len(real_layers) != len(fake_layers):
            raise ValueError("layer count mismatch")
        per_scale = 0.0
        for r, f in zip(real_layers, fake_layers):
            r, f = _t(r), _t(f)
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch {tuple(r.shape)} vs {tuple(f.shape)}")
            diff = f - r.detach()
            per_scale = per_scale + (diff.abs().mean() if distance == "l1" else (diff * diff).mean())
        total = total + per_scale / len(real_layers)
    return total


def mel_l2_loss(enhanced, clean, mel: MelConfig = MelConfig()) -> torch.Tensor:
    """Mean squared difference of log-mels; accepts AudioBuffers or (batch, samples) tensors."""
    enhanced, clean = _t(enhanced), _t(clean)
    if enhanced.shape[-1] != clean.shape[-1]:
        raise ValueError(f"length mismatch: {enhanced.shape[-1]} vs {clean.shape[-1]}")
    if enhanced.dim() == 3:
        enhanced, clean = enhanced[:, 0], clean[:, 0]
    target = log_mel_tensor(clean.to(enhanced.dtype), mel).detach()
    return F.mse_loss(log_mel_tensor(enhanced, mel), target)


def total_generator_loss(adv, fm, mel, w: LossWeights = LossWeights()):
    for name, value in (("adversarial", adv), ("feature matching", fm), ("mel", mel)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss: {v}")
    return w.adversarial * adv + w.feature_matching * fm + w.mel_l2 * mel
