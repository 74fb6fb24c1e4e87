"""``se-enhance {synth|train|enhance|bench}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .config import ExperimentConfig, load_config
from .datasynth import CorpusManifest, build_manifest
from .dsp import MelConfig, WavError, load_wav, save_wav
from .inference import benchmark, enhance_audio
from .model import build_generator
from .trainer import DataError, NonFiniteLossError, load_generator, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("se_melgan")


class UsageError(Exception):
    pass


def cmd_synth(args) -> Path:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for d in [args.clean, *args.noise]:
        if not Path(d).is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    manifest = build_manifest(args.clean, args.noise, factor=args.factor, clean_fraction=args.clean_fraction,
                              seed=args.seed, mel=cfg.dsp, segment_length=cfg.segment_length)
    out = Path(args.out)
    manifest.save(out)
    summary = manifest.counts()
    Path(str(out) + ".summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    print(f"{out}: {summary['mixed']} mixed, {summary['clean']} clean pass-through, {summary['total']} total")
    return out


def cmd_train(args) -> Path:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    manifest = CorpusManifest.load(args.manifest)
    if manifest.dsp != cfg.dsp:
        raise UsageError("manifest dsp settings differ from the experiment config")
    if manifest.segment_length != cfg.segment_length:
        raise UsageError(f"manifest segment_length {manifest.segment_length} != config {cfg.segment_length}")
    if args.resume:
        header, _ = ckpt.load(args.resume)
        if (header["generator_config"], header["discriminator_config"]) != (
            cfg.generator.to_dict(), cfg.discriminator.to_dict()
        ):
            raise UsageError(f"refusing to resume: {args.resume} was trained with a different model config")
    path = run_training(manifest, cfg.trainer, args.out, cfg.generator, cfg.discriminator, resume=args.resume)
    print(path)
    return path


def _mel_from_checkpoint(path) -> MelConfig:
    header, _ = ckpt.load(path)
    return MelConfig.from_dict(header["mel_config"]) if header.get("mel_config") else MelConfig()


def cmd_enhance(args) -> None:
    inputs = sorted({p for pattern in args.input for p in (glob.glob(pattern) or [pattern])})
    gen = load_generator(args.checkpoint)
    mel = _mel_from_checkpoint(args.checkpoint)
    if gen.config.mel_channels != mel.n_mels or mel.n_mels != 80:
        raise UsageError(f"checkpoint generator expects {gen.config.mel_channels} mel channels; 80 required")
    if len(inputs) > 1:
        out_dir = Path(args.output)
        if not out_dir.is_dir():
            raise UsageError("--output must be an existing directory when enhancing several files")
        targets = [out_dir / Path(p).name for p in inputs]
    else:
        targets = [Path(args.output)]

    def one(pair):
        src, dst = pair
        enhanced = enhance_audio(gen, load_wav(src), mel, args.chunk_frames)
        save_wav(dst, enhanced)
        return dst

    pairs = list(zip(inputs, targets))
    if args.workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            written = list(pool.map(one, pairs))
    else:
        written = [one(p) for p in pairs]
    for w in written:
        print(w)


def cmd_bench(args):
    if args.repeats < 3:
        raise UsageError("--repeats must be >= 3")
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    gen = load_generator(args.checkpoint) if args.checkpoint else build_generator(seed=args.seed).eval()
    reports = [benchmark(gen, args.duration, args.repeats, args.include_dsp, args.seed, "cpu")]
    if torch.cuda.is_available() and not args.cpu_only:
        reports.append(benchmark(gen, args.duration, args.repeats, args.include_dsp, args.seed, "cuda"))
    for r in reports:
        print(json.dumps(r.to_dict(), sort_keys=True) if args.json else str(r))
    return reports[0]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="se-enhance", description="MelGAN speech enhancement toolkit")
    p.add_argument("--threads", type=int, default=None, help="torch intra-op threads (1 for bit-reproducible runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a noisy-speech corpus manifest")
    s.add_argument("--clean", required=True)
    s.add_argument("--noise", required=True, nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--factor", type=int, default=4)
    s.add_argument("--clean-fraction", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train generator and discriminator")
    t.add_argument("--config", required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance WAV files with a trained checkpoint")
    e.add_argument("--input", required=True, nargs="+", help="WAV paths or glob patterns")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--output", required=True, help="output WAV, or a directory for several inputs")
    e.add_argument("--chunk-frames", type=int, default=None)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_enhance)

    b = sub.add_parser("bench", help="measure generator real-time factor")
    b.add_argument("--checkpoint", default=None, help="defaults to an untrained full-size generator")
    b.add_argument("--duration", type=float, default=10.0)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--include-dsp", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--cpu-only", action="store_true")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, WavError, DataError, ckpt.CheckpointError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
