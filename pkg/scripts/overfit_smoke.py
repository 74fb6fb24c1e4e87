"""Overfit a channels/8 model on one clean pair and print the g_mel curve.

The curve is the quickest sign that the generator, the mel loss and the
optimizer are wired together correctly.
"""

import argparse
import csv
import sys

import numpy as np
import torch

from se_melgan.dsp import log_mel
from se_melgan.model import scaled_configs
from se_melgan.toydata import voiced_clip
from se_melgan.trainer import METRIC_FIELDS, TrainConfig, init_state, train_step


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--divisor", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="also write every step's metrics here")
    args = p.parse_args()
    torch.set_num_threads(1)

    clean = voiced_clip(16384 / 22050, seed=args.seed)
    pair = (log_mel(clean), clean)
    g, d = scaled_configs(args.divisor)
    cfg = TrainConfig(batch_size=1, total_steps=args.steps, phase_boundary=args.steps - 1, seed=args.seed)
    state = init_state(cfg, g, d)
    rows = []
    for _ in range(args.steps):
        _, m = train_step(state, [pair], cfg)
        rows.append(m)
        if m.step in (1, 10) or m.step % 50 == 0:
            print(f"step {m.step:4d}  g_mel {m.g_mel:8.4f}  d_loss {m.d_loss:7.4f}  {m.wall_ms:6.1f} ms")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_FIELDS)
            w.writerows(r.row() for r in rows)
    if args.steps >= 10:
        ratio = rows[-1].g_mel / rows[9].g_mel
        print(f"g_mel ratio last/step10 = {ratio:.3f}  median step {np.median([r.wall_ms for r in rows]):.0f} ms")
        sys.exit(0 if ratio < 0.5 else 1)


if __name__ == "__main__":
    main()
