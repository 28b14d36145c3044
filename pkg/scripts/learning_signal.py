"""Tagger reward after A2C training against the seed-matched random baseline.

    python scripts/learning_signal.py --config configs/learning.json --seeds 0 1 2 --out runs/learning

Writes one row per seed (baseline, trained, trained-vs-random-runners and the
per-iteration training curve) to ``<out>/learning_signal.{csv,json}``.
"""

import argparse
import dataclasses
import json

from warpsim.harness.config import load_config
from warpsim.harness.train import learning_signal
from warpsim.report import MetricsReport


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/learning.json")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/learning")
    parser.add_argument("--episode-length", type=int, default=None, help="override env.episode_length")
    parser.add_argument("--iterations", type=int, default=None, help="override trainer.iterations")
    args = parser.parse_args()

    rc = load_config(args.config)
    if args.episode_length:
        rc = rc.replace(env=dataclasses.replace(rc.env, episode_length=args.episode_length))
    if args.iterations:
        rc = rc.replace(trainer=dataclasses.replace(rc.trainer, iterations=args.iterations))
    report = MetricsReport.new("learning-signal", rc.hash(), rc.env.seed,
                               episode_length=rc.env.episode_length, iterations=rc.trainer.iterations)
    for seed in args.seeds:
        res = learning_signal(rc, seed)
        curve = res.pop("curve")
        res["curve"] = json.dumps([None if c != c else round(c, 4) for c in curve])
        report.add(**res)
        print(f"seed {seed}: baseline {res['baseline']:.3f} trained {res['trained']:.3f} "
              f"({res['ratio']:.2f}x) vs random runners {res['vs_uniform_runners']:.3f} "
              f"({res['ratio_vs_uniform_runners']:.2f}x)", flush=True)
    report.write(args.out, "learning_signal")


if __name__ == "__main__":
    main()
