"""Write a small synthetic clean/noise corpus and its manifest.

    python3 scripts/make_toy_corpus.py --out runs/toy --config configs/tiny.yaml
"""

import argparse
from pathlib import Path

from se_melgan.config import ExperimentConfig, load_config
from se_melgan.datasynth import build_manifest
from se_melgan.toydata import write_toy_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--config", default=None)
    p.add_argument("--clean", type=int, default=10)
    p.add_argument("--noise", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    root = Path(args.out)
    clean, noise = write_toy_corpus(root, args.clean, args.noise, seed=args.seed)
    manifest = build_manifest(clean, [noise], seed=args.seed, mel=cfg.dsp, segment_length=cfg.segment_length)
    manifest.save(root / "manifest.jsonl")
    print(root / "manifest.jsonl", manifest.counts())


if __name__ == "__main__":
    main()
