"""``warp`` command line: check, bench-envs, bench-agents and train.

Exit status is 0 on success, 1 when a consistency check fails and 2 for
configuration errors.  ``WARP_WORKERS`` overrides the worker count from both
the config file and ``--workers``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from ..report import core_count
from .bench import bench_agents, bench_envs
from .config import ConfigError, RunConfig, load_config
from .consistency import run_check
from .train import run_training

COMMANDS = ("check", "bench-envs", "bench-agents", "train")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warp", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override env and trainer seed")
    parser.add_argument("--out", default=None, help="output directory (default: run.out_dir)")
    parser.add_argument("--workers", type=int, default=None, help="engine worker threads")
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    rc = load_config(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    workers = args.workers
    if environ.get("WARP_WORKERS"):
        try:
            workers = int(environ["WARP_WORKERS"])
        except ValueError as exc:
            raise ConfigError(f"WARP_WORKERS={environ['WARP_WORKERS']!r} is not an integer") from exc
    if workers is not None:
        if workers < 1:
            raise ConfigError("worker count must be >= 1")
        rc = rc.with_workers(workers)
    return rc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"warp: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or rc.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "check":
        report = run_check(rc, cores=core_count())
        report.write(out, "check")
        for row in report.rows:
            status = "PASS" if row["passed"] else "FAIL"
            where = "" if row["passed"] else (
                f"  first divergence: step={row['div_step']} env={row['div_env']} "
                f"agent={row['div_agent']} array={row['div_array']} index=({row['div_index']})"
            )
            print(f"{status} {row['variant']}/{row['obs_mode']} workers={row['workers']} "
                  f"{row['seconds']:.2f}s{where}")
        return 0 if report.meta["passed"] else 1
    if args.command == "bench-envs":
        report = bench_envs(rc)
        report.write(out, "bench_envs")
        for row in report.rows:
            if row["ok"]:
                print(f"envs={row['num_envs']:>5} steps/s={row['steps_per_sec']:.0f} "
                      f"speedup={row['speedup']:.2f} train steps/s={row.get('train_steps_per_sec', 0):.0f}")
            else:
                print(f"envs={row['num_envs']:>5} failed: {row['error']}")
        return 0
    if args.command == "bench-agents":
        report = bench_agents(rc)
        report.write(out, "bench_agents")
        for row in report.rows:
            if row["ok"]:
                print(f"{row['obs_mode']:>7} agents={row['num_agents']:>5} "
                      f"per-env step={row['per_env_step_seconds'] * 1e6:.1f}us")
        for mode, slope in report.meta["slopes"].items():
            print(f"{mode} log-log slope {slope:.3f}")
        return 0
    report, _ = run_training(rc, out)
    last = report.rows[-1] if report.rows else {}
    print(f"trained {len(report.rows)} iterations; "
          + " ".join(f"{k}={v:.3f}" for k, v in last.items() if k.endswith("mean_episode_reward")))
    return 0


if __name__ == "__main__":
    sys.exit(main())
