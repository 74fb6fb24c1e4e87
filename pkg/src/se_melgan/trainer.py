"""Alternating GAN optimization, checkpointing and validation."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .datasynth import SEGMENT_LENGTH, CorpusManifest, MixtureManifestEntry, realize_mixture
from .dsp import AudioBuffer, MelConfig, WavError, log_mel, log_mel_tensor
from .losses import (
    LossWeights,
    feature_matching_loss,
    hinge_discriminator_loss,
    hinge_generator_loss,
    mel_l2_loss,
    total_generator_loss,
)
from .model import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "d_loss", "g_adv", "g_fm", "g_mel", "lr", "wall_ms")
SNR_CAP_DB = 99.0
MAX_SKIP_RATE = 0.01
# skip rate is judged over at least this many attempts
SKIP_RATE_MIN_ATTEMPTS = 100


class NonFiniteLossError(FloatingPointError):
    pass


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    adam_betas: tuple[float, float] = (0.5, 0.9)
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-5
    phase_boundary: int = 1_500_000
    total_steps: int = 3_000_000
    checkpoint_interval: int = 10_000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip: float | None = None
    num_workers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.phase_boundary < self.total_steps:
            raise ValueError("phase_boundary must lie in [0, total_steps)")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weights = LossWeights(**d.pop("weights", {}))
        return cls(weights=weights, **d)


@dataclass
class StepMetrics:
    step: int
    d_loss: float
    g_adv: float
    g_fm: float
    g_mel: float
    lr: float
    wall_ms: float

    def row(self) -> list:
        return [self.step] + [repr(float(getattr(self, k))) for k in METRIC_FIELDS[1:]]


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    queue: list[int] = field(default_factory=list)


def lr_at_step(step: int, config: TrainConfig) -> float:
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    return config.lr_phase1 if step < config.phase_boundary else config.lr_phase2


def _adam(module: torch.nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=config.lr_phase1, betas=config.adam_betas, foreach=False)


def init_state(
    config: TrainConfig,
    generator_config: GeneratorConfig = GeneratorConfig(),
    discriminator_config: DiscriminatorConfig = DiscriminatorConfig(),
) -> TrainState:
    gen = build_generator(generator_config, seed=config.seed)
    disc = build_discriminator(discriminator_config, seed=config.seed + 1)
    return TrainState(gen, disc, _adam(gen, config), _adam(disc, config), 0, np.random.default_rng(config.seed))


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def collate(batch: Sequence) -> tuple[torch.Tensor, torch.Tensor]:
    """[(noisy_mel, clean_segment), ...] -> (B, n_mels, frames), (B, 1, samples) float32."""
    mels = np.stack([np.asarray(getattr(m, "values", m)) for m, _ in batch])
    clean = np.stack([np.asarray(getattr(c, "samples", c)) for _, c in batch])
    return torch.from_numpy(mels).float(), torch.from_numpy(clean).float()[:, None]


def train_step(state: TrainState, batch: Sequence, config: TrainConfig, mel: MelConfig = MelConfig()):
    """One discriminator update followed by one generator update."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    t0 = time.perf_counter()
    noisy_mel, clean = collate(batch)
    if noisy_mel.shape[1] != state.generator.config.mel_channels:
        raise ValueError(f"batch mels have {noisy_mel.shape[1]} channels")
    lr = lr_at_step(state.step, config)
    gen, disc = state.generator, state.discriminator
    _set_lr(state.opt_g, lr)
    _set_lr(state.opt_d, lr)

    fake = gen(noisy_mel)

    real_logits, real_maps = disc(clean)
    fake_logits, _ = disc(fake.detach())
    d_loss = hinge_discriminator_loss(real_logits, fake_logits)
    if not torch.isfinite(d_loss):
        raise NonFiniteLossError(f"discriminator loss is {d_loss.item()} at step {state.step}")
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(disc.parameters(), config.grad_clip)
    state.opt_d.step()

    disc.requires_grad_(False)
    try:
        fake_logits, fake_maps = disc(fake)
        g_adv = hinge_generator_loss(fake_logits)
        real_feats = [[f.detach() for f in m[:-1]] for m in real_maps]
        g_fm = feature_matching_loss(real_feats, [m[:-1] for m in fake_maps], config.weights.feature_matching_distance)
        g_mel = mel_l2_loss(fake[:, 0], clean[:, 0], mel)
        try:
            g_total = total_generator_loss(g_adv, g_fm, g_mel, config.weights)
        except FloatingPointError as exc:
            raise NonFiniteLossError(f"{exc} at step {state.step}") from exc
        state.opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(gen.parameters(), config.grad_clip)
        state.opt_g.step()
    finally:
        disc.requires_grad_(True)

    state.step += 1
    metrics = StepMetrics(
        step=state.step,
        d_loss=d_loss.item(),
        g_adv=g_adv.item(),
        g_fm=g_fm.item(),
        g_mel=g_mel.item(),
        lr=lr,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    return state, metrics


# --------------------------------------------------------------------------
# checkpoints


def _adam_arrays(prefix: str, module: torch.nn.Module, opt: torch.optim.Adam) -> tuple[dict, int]:
    arrays, step = {}, 0
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        step = int(st["step"])
        arrays[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().numpy()
        arrays[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().numpy()
    return arrays, step


def _restore_adam(prefix: str, module: torch.nn.Module, opt: torch.optim.Adam, arrays: dict, step: int) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}/{name}/exp_avg"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step), dtype=torch.float32),
            "exp_avg": torch.from_numpy(arrays[key].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }


def save_checkpoint(path, state: TrainState, config: TrainConfig | None = None, mel: MelConfig | None = None) -> Path:
    arrays = {}
    for name, p in state.generator.named_parameters():
        arrays[f"generator/{name}"] = p.detach().numpy()
    for name, p in state.discriminator.named_parameters():
        arrays[f"discriminator/{name}"] = p.detach().numpy()
    adam_g, step_g = _adam_arrays("adam_g", state.generator, state.opt_g)
    adam_d, step_d = _adam_arrays("adam_d", state.discriminator, state.opt_d)
    arrays.update(adam_g)
    arrays.update(adam_d)
    arrays["data/queue"] = np.asarray(state.queue, dtype=np.int64)
    header = {
        "generator_config": state.generator.config.to_dict(),
        "discriminator_config": state.discriminator.config.to_dict(),
        "train_config": config.to_dict() if config else None,
        "mel_config": mel.to_dict() if mel else None,
        "step": state.step,
        "adam_steps": {"generator": step_g, "discriminator": step_d},
        "rng_state": state.rng.bit_generator.state,
    }
    return ckpt.save(path, header, arrays)


def load_checkpoint(path, config: TrainConfig | None = None) -> tuple[TrainState, dict]:
    """Rebuild a TrainState from a checkpoint; returns the state and the raw header."""
    header, arrays = ckpt.load(path)
    if config is None:
        config = TrainConfig.from_dict(header["train_config"]) if header.get("train_config") else TrainConfig()
    gcfg = GeneratorConfig.from_dict(header["generator_config"])
    dcfg = DiscriminatorConfig.from_dict(header["discriminator_config"])
    gen, disc = build_generator(gcfg), build_discriminator(dcfg)
    for prefix, module in (("generator", gen), ("discriminator", disc)):
        with torch.no_grad():
            for name, p in module.named_parameters():
                p.copy_(torch.from_numpy(arrays[f"{prefix}/{name}"]))
    opt_g, opt_d = _adam(gen, config), _adam(disc, config)
    _restore_adam("adam_g", gen, opt_g, arrays, header["adam_steps"]["generator"])
    _restore_adam("adam_d", disc, opt_d, arrays, header["adam_steps"]["discriminator"])
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    state = TrainState(gen, disc, opt_g, opt_d, header["step"], rng, arrays["data/queue"].tolist())
    return state, header


def load_generator(path) -> Generator:
    header, arrays = ckpt.load(path)
    gen = build_generator(GeneratorConfig.from_dict(header["generator_config"]))
    with torch.no_grad():
        for name, p in gen.named_parameters():
            p.copy_(torch.from_numpy(arrays[f"generator/{name}"]))
    gen.eval()
    return gen


# --------------------------------------------------------------------------
# training loop


class _Batcher:
    """Draws batches from seeded per-epoch shuffles, skipping unreadable entries."""

    def __init__(self, manifest: CorpusManifest, state: TrainState, config: TrainConfig, mel: MelConfig):
        self.manifest, self.state, self.config, self.mel = manifest, state, config, mel
        self.attempted = 0
        self.skipped = 0
        self.pool = ThreadPoolExecutor(config.num_workers) if config.num_workers > 0 else None

    def _realize(self, entry: MixtureManifestEntry):
        try:
            noisy, clean, _, _ = realize_mixture(entry, self.manifest.segment_length, self.mel.sample_rate)
            return log_mel(noisy, self.mel), clean
        except (OSError, WavError, ValueError) as exc:
            return exc

    def _take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if not self.state.queue:
                self.state.queue = self.state.rng.permutation(len(self.manifest.entries)).tolist()
            out.append(self.state.queue.pop(0))
        return out

    def next_batch(self) -> list:
        batch = []
        while len(batch) < self.config.batch_size:
            idx = self._take(self.config.batch_size - len(batch))
            entries = [self.manifest.entries[i] for i in idx]
            results = list(self.pool.map(self._realize, entries)) if self.pool else [self._realize(e) for e in entries]
            for entry, res in zip(entries, results):
                self.attempted += 1
                if isinstance(res, Exception):
                    self.skipped += 1
                    log.warning("skipping unreadable entry %s: %s", entry.clean_path, res)
                    if self.skipped > MAX_SKIP_RATE * max(self.attempted, SKIP_RATE_MIN_ATTEMPTS):
                        raise DataError(f"{self.skipped} of {self.attempted} manifest entries unreadable")
                else:
                    batch.append(res)
        return batch

    def close(self):
        if self.pool:
            self.pool.shutdown()


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:08d}.semg"


def _open_metrics(path: Path, resume_step: int):
    if path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        rows = [r for r in rows if int(r[0]) <= resume_step]
    else:
        rows = []
    fh = open(path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(METRIC_FIELDS)
    writer.writerows(rows)
    return fh, writer


def run_training(
    manifest: CorpusManifest,
    config: TrainConfig,
    out_dir,
    generator_config: GeneratorConfig = GeneratorConfig(),
    discriminator_config: DiscriminatorConfig = DiscriminatorConfig(),
    resume=None,
    max_steps: int | None = None,
) -> Path:
    """Train until ``config.total_steps`` (or ``max_steps`` for interrupted runs); return the last checkpoint."""
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mel = manifest.dsp
    if resume is not None:
        state, header = load_checkpoint(resume, config)
        if (state.generator.config, state.discriminator.config) != (generator_config, discriminator_config):
            raise ValueError(f"checkpoint {resume} was trained with a different model config")
        last_ckpt = Path(resume)
    else:
        state = init_state(config, generator_config, discriminator_config)
        last_ckpt = None
    stop = config.total_steps if max_steps is None else min(max_steps, config.total_steps)
    batcher = _Batcher(manifest, state, config, mel)
    fh, writer = _open_metrics(out_dir / "metrics.csv", state.step)
    try:
        while state.step < stop:
            batch = batcher.next_batch()
            try:
                _, metrics = train_step(state, batch, config, mel)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"{exc}; last good checkpoint: {last_ckpt}") from exc
            writer.writerow(metrics.row())
            fh.flush()
            s = state.step
            if s % config.checkpoint_interval == 0 or s == config.phase_boundary or s == config.total_steps:
                last_ckpt = save_checkpoint(checkpoint_path(out_dir, s), state, config, mel)
                log.info("step %d: checkpoint %s", s, last_ckpt)
    finally:
        fh.close()
        batcher.close()
    if last_ckpt is None or int(last_ckpt.stem.split("_")[-1]) != state.step:
        last_ckpt = save_checkpoint(checkpoint_path(out_dir, state.step), state, config, mel)
    return last_ckpt


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationSummary:
    count: int
    mean_mel_l2: float
    mean_snr_db: float
    baseline_snr_db: float

    @property
    def improvement_db(self) -> float:
        return self.mean_snr_db - self.baseline_snr_db


def snr_db(estimate, clean) -> float:
    """10 log10(sum clean^2 / sum (estimate - clean)^2), capped at 99 dB."""
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(clean, "samples", clean), dtype=np.float64)
    err = float(np.sum((est - ref) ** 2))
    sig = float(np.sum(ref**2))
    if err == 0.0:
        return SNR_CAP_DB
    if sig == 0.0:
        return -SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(sig / err))


def summarize(triples: Sequence[tuple], mel: MelConfig = MelConfig()) -> ValidationSummary:
    """``triples`` of (enhanced, clean, noisy) audio."""
    if not triples:
        raise ValueError("nothing to validate")
    mel_l2 = [float(mel_l2_loss(e, c, mel)) for e, c, _ in triples]
    snr = [snr_db(e, c) for e, c, _ in triples]
    base = [snr_db(n, c) for _, c, n in triples]
    return ValidationSummary(len(triples), float(np.mean(mel_l2)), float(np.mean(snr)), float(np.mean(base)))


def validate(checkpoint, entries: Sequence[MixtureManifestEntry], mel: MelConfig = MelConfig(),
             segment_length: int = SEGMENT_LENGTH) -> ValidationSummary:
    if not entries:
        raise ValueError("validation subset is empty")
    gen = load_generator(checkpoint)
    triples = []
    for entry in entries:
        noisy, clean, _, _ = realize_mixture(entry, segment_length, mel.sample_rate)
        with torch.inference_mode():
            x = log_mel_tensor(torch.from_numpy(noisy.samples)[None], mel).float()
            enhanced = gen(x)[0, 0].double().numpy()
        triples.append((AudioBuffer(enhanced, mel.sample_rate), clean, noisy))
    return summarize(triples, mel)
