"""Environment-count and agent-count scaling sweeps.

    python scripts/scaling.py --workers 4 --out runs/scaling

Runs the two throughput benchmarks with the given worker count, writes
``bench_envs`` and ``bench_agents`` reports to ``--out`` and prints a table
per sweep with the fitted log-log slopes of the agent sweep.
"""

import argparse
import os

from warpsim.harness.bench import bench_agents, bench_envs
from warpsim.harness.config import load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--envs-config", default="configs/bench_envs.json")
    parser.add_argument("--agents-config", default="configs/bench_agents.json")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--out", default="runs/scaling")
    parser.add_argument("--no-train", action="store_true", help="skip training throughput in the env sweep")
    args = parser.parse_args()

    rc = load_config(args.envs_config).with_workers(args.workers)
    report = bench_envs(rc, train=not args.no_train)
    report.write(args.out, "bench_envs")
    print(f"{'envs':>6} {'steps/s':>12} {'speedup':>8} {'train steps/s':>14}")
    for row in report.rows:
        if not row["ok"]:
            print(f"{row['num_envs']:>6} {row['error']}")
            continue
        print(f"{row['num_envs']:>6} {row['steps_per_sec']:>12.0f} {row['speedup']:>8.2f} "
              f"{row.get('train_steps_per_sec', float('nan')):>14.0f}")

    rc = load_config(args.agents_config).with_workers(args.workers)
    report = bench_agents(rc)
    report.write(args.out, "bench_agents")
    print(f"\n{'mode':>8} {'agents':>7} {'envs':>6} {'us/env-step':>12}")
    for row in report.rows:
        if row["ok"]:
            print(f"{row['obs_mode']:>8} {row['num_agents']:>7} {row['num_envs']:>6} "
                  f"{row['per_env_step_seconds'] * 1e6:>12.1f}")
    for mode, slope in report.meta["slopes"].items():
        print(f"log-log slope ({mode}): {slope:.3f}")


if __name__ == "__main__":
    main()
