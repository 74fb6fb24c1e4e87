"""Real-time factor of the full-size generator across durations and thread counts."""

import argparse
import json

import torch

from se_melgan.inference import benchmark
from se_melgan.model import build_generator


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--durations", type=float, nargs="+", default=[1.0, 10.0])
    p.add_argument("--threads", type=int, nargs="+", default=[1])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--include-dsp", action="store_true")
    args = p.parse_args()

    gen = build_generator().eval()
    for n in args.threads:
        torch.set_num_threads(n)
        for seconds in args.durations:
            r = benchmark(gen, seconds, args.repeats, args.include_dsp)
            print(json.dumps({"threads": n, "seconds": seconds, "rtf": round(r.rtf, 3),
                              "median_wall": round(r.wall_seconds, 4), "device": r.device_label}))


if __name__ == "__main__":
    main()
