"""Command-line interface.

Subcommands:
  power      print the power model at a given speed
  simulate   run one experiment (one mode)
  compare    paired unguarded-vs-safeguarded comparison
  audit      run safeguarded episodes and print the override class table
  train      run the learning loop, write the log CSV and a checkpoint

Every command accepts --config for a JSON config file; flags override the
file. Exit code 0 on success, 1 with a diagnostic on any failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .energy import AircraftParams, hover_power_terms, propulsion_power_terms
from .harness import (
    ExperimentConfig,
    aggregate,
    desk_preset,
    load_config,
    run_comparison,
    run_experiment,
    run_mode,
)
from .runner import SAFEGUARDED
from .safety import CONSTRAINTS
from .training import train
from .world import World


class CliError(Exception):
    pass


def _base_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    elif getattr(args, "preset", "desk") == "desk":
        config = desk_preset()
    else:
        config = ExperimentConfig()
    updates = {}
    for name in ("mode", "episodes", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "out", None):
        updates["output_dir"] = args.out
    if getattr(args, "trajectory", False):
        updates["write_trajectory"] = True
    return replace(config, **updates) if updates else config


def _add_common(parser: argparse.ArgumentParser, with_mode: bool = False) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", choices=["desk", "catalogue"], default="desk",
                        help="built-in parameter preset when no config file is given")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--episodes", type=int, help="episode count")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--trajectory", action="store_true",
                        help="also write per-step trajectory logs")
    if with_mode:
        parser.add_argument("--mode", choices=["planner_only", "safeguarded"])


def _cmd_power(args) -> int:
    params = AircraftParams()
    blade, induced = hover_power_terms(params)
    print(f"hover power: {blade + induced:.6g} W "
          f"(blade {blade:.6g} W, induced {induced:.6g} W)")
    if args.speed > 0:
        ind, bl, par = propulsion_power_terms(args.speed, params)
        print(
            f"propulsion power at {args.speed:g} m/s: {ind + bl + par:.6g} W "
            f"(induced {ind:.6g} W, blade {bl:.6g} W, parasite {par:.6g} W)"
        )
    return 0


def _cmd_simulate(args) -> int:
    config = _base_config(args)
    bundle = run_experiment(config)
    stats = bundle.summary[config.mode]
    print(
        f"{config.mode}: {stats['episodes']} episodes, "
        f"success_rate mean {stats['success_rate']['mean']:.4f}, "
        f"battery mean {stats['battery_mean']['mean']:.4f}, "
        f"distance mean {stats['distance_total']['mean']:.1f} m"
    )
    print(f"outputs in {config.output_dir}/")
    return 0


def _cmd_compare(args) -> int:
    config = _base_config(args)
    bundle = run_comparison(config)
    for mode in ("planner_only", "safeguarded"):
        stats = bundle.summary[mode]
        print(
            f"{mode:13s} success {stats['success_rate']['mean']:.4f} "
            f"battery {stats['battery_mean']['mean']:.4f} "
            f"distance {stats['distance_total']['mean']:.1f} m "
            f"overrides {stats['overrides']['mean']:.2f}"
        )
    print(f"outputs in {config.output_dir}/")
    return 0


def _cmd_audit(args) -> int:
    config = _base_config(args)
    metrics, _ = run_mode(config, SAFEGUARDED)
    stats = aggregate(metrics)
    counts = stats["hallucination_counts"]
    shares = stats["hallucination_shares"]
    print(f"{'class':16s} {'count':>8s} {'share':>8s}")
    for name in sorted(set(counts) | set(CONSTRAINTS)):
        print(f"{name:16s} {counts.get(name, 0):8d} {shares.get(name, 0.0):8.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "audit.json"
        path.write_text(json.dumps(
            {"counts": counts, "shares": shares}, indent=2, sort_keys=True) + "\n")
        print(f"written {path}")
    return 0


def _cmd_train(args) -> int:
    config = _base_config(args)
    world = World(config.grid, config.aircraft, config.battery, config.rewards)

    def planner_factory(episode: int):
        from .harness import _make_planner

        return _make_planner(config, world, episode)

    episodes = config.episodes if args.episodes is None else args.episodes
    result = train(world, planner_factory, config.constraints, config.rl, episodes, config.seed)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "training_log.csv"
    result.log.to_csv(log_path)
    from .rl import save_checkpoint

    ckpt_path = out / "checkpoint.npz"
    save_checkpoint(ckpt_path, result.policy, result.critics, result.lagrange)
    if result.log.rows:
        first = result.log.rows[0].reward_ma
        last = result.log.rows[-1].reward_ma
        print(f"trained {episodes} episodes: reward_ma {first:.2f} -> {last:.2f}")
    print(f"written {log_path} and {ckpt_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safefleet",
        description="Deterministic drone delivery simulator with a planner override layer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_power = sub.add_parser("power", help="print the power model at a given speed")
    p_power.add_argument("--speed", type=float, default=0.0, help="forward speed in m/s")
    p_power.set_defaults(func=_cmd_power)

    p_sim = sub.add_parser("simulate", help="run one experiment")
    _add_common(p_sim, with_mode=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_cmp = sub.add_parser("compare", help="paired comparison of both modes")
    _add_common(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_audit = sub.add_parser("audit", help="override class table for safeguarded runs")
    _add_common(p_audit)
    p_audit.set_defaults(func=_cmd_audit)

    p_train = sub.add_parser("train", help="run the learning loop")
    _add_common(p_train)
    p_train.set_defaults(func=_cmd_train)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
