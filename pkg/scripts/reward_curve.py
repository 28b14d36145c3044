"""Train Tag and print the per-iteration mean episode reward of each policy.

    python scripts/reward_curve.py --config configs/train.json --seed 0 --out runs/curve

The full metrics table lands in ``<out>/train.csv``; the printout smooths each
curve with a trailing window because many iterations finish no episode.
"""

import argparse

import numpy as np

from warpsim.harness.config import load_config
from warpsim.harness.train import run_training


def smooth(values, window):
    out = []
    for i in range(len(values)):
        chunk = [v for v in values[max(0, i - window + 1): i + 1] if np.isfinite(v)]
        out.append(float(np.mean(chunk)) if chunk else float("nan"))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/train.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/curve")
    parser.add_argument("--window", type=int, default=20)
    parser.add_argument("--every", type=int, default=10, help="print every n-th iteration")
    args = parser.parse_args()

    rc = load_config(args.config).with_seed(args.seed)
    report, trainer = run_training(rc, args.out)
    tags = list(trainer.policy_map)
    curves = {tag: smooth(report.column(f"{tag}_mean_episode_reward"), args.window) for tag in tags}
    print("iteration " + " ".join(f"{tag:>10}" for tag in tags))
    for i in range(0, len(report.rows), args.every):
        print(f"{report.rows[i]['iteration']:>9} " + " ".join(f"{curves[t][i]:>10.3f}" for t in tags))


if __name__ == "__main__":
    main()
