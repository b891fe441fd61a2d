"""Experiment orchestration, configuration files, metrics and export.

An experiment runs (seed, episode) pairs of one mode — ``planner_only``
(proposals execute untouched, margins only audited) or ``safeguarded``
(proposals pass the override filter) — and aggregates per-episode metrics
into a CSV plus a summary JSON. ``compare`` runs both modes on identical
episode seeds so customer layouts pair exactly (verified by layout hash).

Mock-planner experiments are fully deterministic: re-running the same config
reproduces every output file byte for byte. Output files carry no clocks or
environment-dependent fields for that reason.

Config files are JSON with ``schema_version`` 1; every section mirrors one
of the dataclasses below and unknown keys are rejected loudly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from . import kernels
from .energy import AircraftParams, BatteryModel
from .llm import EndpointConfig, LlmPlanner
from .planner import FAULT_CLASSES, FaultConfig, MockPlanner
from .replay import PlannerRecord, ReplayBuffer
from .runner import MODES, PLANNER_ONLY, SAFEGUARDED, EpisodeResult, run_episode
from .safety import CONSTRAINTS, ConstraintConfig
from .training import RlConfig
from .world import GridConfig, RewardWeights, World

SCHEMA_VERSION = 1

MOCK = "mock"
LLM = "llm"


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = SAFEGUARDED
    planner: str = MOCK
    episodes: int = 10
    seed: int = 7
    output_dir: str = "out"
    write_trajectory: bool = False
    grid: GridConfig = field(default_factory=GridConfig)
    aircraft: AircraftParams = field(default_factory=AircraftParams)
    battery: BatteryModel = field(default_factory=BatteryModel)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    faults: FaultConfig = field(default_factory=FaultConfig)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.planner not in (MOCK, LLM):
            raise ValueError(f"planner must be one of ({MOCK!r}, {LLM!r})")
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")


def desk_preset(**overrides) -> ExperimentConfig:
    """Desk-scale setup: a 2 kWh battery on the default 1 km grid.

    The battery is sized so margins actually bind: one battery covers a bit
    more than half an episode's workload and the charger keeps the
    catalogue's time profile (one 20% cycle per 5 minutes), so within an
    episode charge is nearly a fixed budget. Customer counts are pinned at 5
    per sector to keep the workload draw narrow. The catalogue-scale default
    (150 kWh) barely registers depletion on a grid this size.
    """
    battery = BatteryModel(
        capacity_kwh=2.0,
        max_charge_per_journey_kwh=0.4,
        charger_power_kw=4.8,
        reserve_fraction=0.10,
    )
    grid = GridConfig(customers_per_sector=(5, 5))
    cfg = ExperimentConfig(battery=battery, grid=grid)
    return replace(cfg, **overrides) if overrides else cfg


def episode_seed(base_seed: int, episode: int) -> str:
    """Derived per-episode seed; identical across modes for exact pairing."""
    return f"{base_seed}:{episode}"


# ----------------------------------------------------------------------
# config file handling


_SECTIONS = {
    "grid": GridConfig,
    "aircraft": AircraftParams,
    "battery": BatteryModel,
    "rewards": RewardWeights,
    "faults": FaultConfig,
    "constraints": ConstraintConfig,
    "rl": RlConfig,
    "endpoint": EndpointConfig,
}
_TOP_KEYS = {
    "schema_version", "preset", "mode", "planner", "episodes", "seed",
    "output_dir", "write_trajectory", *_SECTIONS,
}

_TUPLE_FIELDS = {
    "customers_per_sector", "warehouse", "enabled", "hidden",
    "lagrange_thresholds",
}


def _build_section(cls, data: dict):
    valid = {f.name for f in fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
        for k, v in data.items()
    }
    return cls(**coerced)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema_version {version}")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    preset = data.pop("preset", None)
    base = desk_preset() if preset == "desk" else ExperimentConfig()
    if preset not in (None, "desk", "catalogue"):
        raise ValueError(f"unknown preset {preset!r}")
    kwargs: dict = {}
    for key, value in data.items():
        if key in _SECTIONS:
            base_section = getattr(base, key)
            merged = {**asdict(base_section), **value}
            kwargs[key] = _build_section(_SECTIONS[key], merged)
        else:
            kwargs[key] = value
    return replace(base, **kwargs)


def config_to_dict(config: ExperimentConfig) -> dict:
    out: dict = {"schema_version": SCHEMA_VERSION}
    for key in ("mode", "planner", "episodes", "seed", "output_dir", "write_trajectory"):
        out[key] = getattr(config, key)
    for key in _SECTIONS:
        section = asdict(getattr(config, key))
        out[key] = {
            k: list(v) if isinstance(v, tuple) else v for k, v in section.items()
        }
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    with open(p) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


# ----------------------------------------------------------------------
# metrics


@dataclass
class EpisodeMetrics:
    mode: str
    episode: int
    seed: str
    steps: int
    served: int
    spawned: int
    success_rate: float
    battery_mean: float
    battery_std: float
    distance_total: float
    overrides: int
    depleted: int
    reward_total: float
    injected_faults: int
    layout_hash: str
    hallucinations: dict[str, int]

    @staticmethod
    def from_result(result: EpisodeResult, episode: int) -> "EpisodeMetrics":
        mean, std = summarize(result.battery_consumption)
        return EpisodeMetrics(
            mode=result.mode,
            episode=episode,
            seed=result.seed,
            steps=result.steps,
            served=result.served,
            spawned=result.spawned,
            success_rate=result.success_rate,
            battery_mean=mean,
            battery_std=std,
            distance_total=result.distance_total,
            overrides=result.overrides,
            depleted=result.depleted,
            reward_total=result.reward_total,
            injected_faults=sum(result.injected.values()),
            layout_hash=result.layout_hash,
            hallucinations=dict(result.audit.counts),
        )


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    if not values:
        raise ValueError("cannot summarize an empty list")
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, var**0.5


def aggregate(rows: Sequence[EpisodeMetrics]) -> dict:
    """Mean/std aggregates plus hallucination class totals and shares."""
    if not rows:
        return {"episodes": 0}
    halluc_totals: dict[str, int] = {}
    for row in rows:
        for k, v in row.hallucinations.items():
            halluc_totals[k] = halluc_totals.get(k, 0) + v
    total_events = sum(halluc_totals.values())
    out: dict = {"episodes": len(rows)}
    for name in ("success_rate", "battery_mean", "distance_total", "overrides", "steps", "reward_total"):
        values = [float(getattr(r, name)) for r in rows]
        mean, std = summarize(values)
        out[name] = {"mean": mean, "std": std}
    out["hallucination_counts"] = {k: halluc_totals[k] for k in sorted(halluc_totals)}
    out["hallucination_shares"] = {
        k: (halluc_totals[k] / total_events if total_events else 0.0)
        for k in sorted(halluc_totals)
    }
    return out


# ----------------------------------------------------------------------
# experiment execution


def _make_planner(config: ExperimentConfig, world: World, episode: int):
    mock = MockPlanner(
        world,
        constraints=config.constraints,
        faults=config.faults,
        seed=_planner_seed(config.seed, episode),
        memory_window=config.rl.memory_window,
    )
    if config.planner == LLM:
        return LlmPlanner(world, config.endpoint, mock)
    return mock


def _planner_seed(base_seed: int, episode: int) -> int:
    return base_seed * 1_000_003 + episode


def run_mode(
    config: ExperimentConfig, mode: str
) -> tuple[list[EpisodeMetrics], list[EpisodeResult]]:
    world = World(config.grid, config.aircraft, config.battery, config.rewards)
    metrics: list[EpisodeMetrics] = []
    results: list[EpisodeResult] = []
    planner_buffer: ReplayBuffer[PlannerRecord] = ReplayBuffer(
        config.rl.planner_buffer_capacity
    )
    for episode in range(config.episodes):
        planner = _make_planner(config, world, episode)
        result = run_episode(
            world,
            planner,
            config.constraints,
            mode,
            episode_seed(config.seed, episode),
            planner_buffer=planner_buffer,
            memory_window=config.rl.memory_window,
            collect_trajectory=config.write_trajectory,
        )
        results.append(result)
        metrics.append(EpisodeMetrics.from_result(result, episode))
    return metrics, results


@dataclass
class MetricsBundle:
    config: ExperimentConfig
    per_mode: dict[str, list[EpisodeMetrics]]
    summary: dict

    def write(self, out_dir: str | Path, trajectories: dict[str, list[EpisodeResult]] | None = None) -> list[Path]:
        """Write per-episode CSV, summary JSON and optional trajectory logs."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []
        for mode, rows in self.per_mode.items():
            csv_path = out / f"episodes_{mode}.csv"
            _write_episode_csv(csv_path, rows)
            written.append(csv_path)
        summary_path = out / "summary.json"
        payload = {
            "config": config_to_dict(self.config),
            "kernel_backend": kernels.BACKEND,
            "results": self.summary,
        }
        summary_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(summary_path)
        if trajectories:
            for mode, results in trajectories.items():
                rows = [row for r in results for row in r.trajectory]
                if rows:
                    traj_path = out / f"trajectory_{mode}.jsonl"
                    with open(traj_path, "w") as f:
                        for row in rows:
                            f.write(json.dumps(row, sort_keys=True) + "\n")
                    written.append(traj_path)
        return written


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_episode_csv(path: Path, rows: Sequence[EpisodeMetrics]) -> None:
    halluc_keys = sorted({k for r in rows for k in r.hallucinations} | set(CONSTRAINTS))
    header = [
        "mode", "episode", "seed", "steps", "served", "spawned", "success_rate",
        "battery_mean", "battery_std", "distance_total", "overrides", "depleted",
        "reward_total", "injected_faults", "layout_hash",
    ] + [f"halluc_{k}" for k in halluc_keys]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [
                    r.mode, r.episode, r.seed, r.steps, r.served, r.spawned,
                    _fmt(r.success_rate), _fmt(r.battery_mean), _fmt(r.battery_std),
                    _fmt(r.distance_total), r.overrides, r.depleted,
                    _fmt(r.reward_total), r.injected_faults, r.layout_hash,
                ]
                + [r.hallucinations.get(k, 0) for k in halluc_keys]
            )


def run_experiment(config: ExperimentConfig) -> MetricsBundle:
    """Run the configured mode over all episodes and aggregate."""
    metrics, results = run_mode(config, config.mode)
    bundle = MetricsBundle(
        config, {config.mode: metrics}, {config.mode: aggregate(metrics)}
    )
    bundle.write(
        config.output_dir,
        {config.mode: results} if config.write_trajectory else None,
    )
    return bundle


def run_comparison(config: ExperimentConfig) -> MetricsBundle:
    """Paired runs of both modes on identical episode seeds and layouts."""
    per_mode: dict[str, list[EpisodeMetrics]] = {}
    all_results: dict[str, list[EpisodeResult]] = {}
    for mode in (PLANNER_ONLY, SAFEGUARDED):
        per_mode[mode], all_results[mode] = run_mode(config, mode)
    paired = list(zip(per_mode[PLANNER_ONLY], per_mode[SAFEGUARDED]))
    mismatched = [
        (a.episode,) for a, b in paired if a.layout_hash != b.layout_hash
    ]
    if mismatched:
        raise RuntimeError(f"paired layouts diverged on episodes {mismatched}")
    summary = {mode: aggregate(rows) for mode, rows in per_mode.items()}
    summary["paired"] = {
        "episodes": len(paired),
        "layouts_identical": True,
        "success_rate_delta_mean": summarize(
            [b.success_rate - a.success_rate for a, b in paired]
        )[0] if paired else 0.0,
        "battery_mean_delta_mean": summarize(
            [b.battery_mean - a.battery_mean for a, b in paired]
        )[0] if paired else 0.0,
        "distance_delta_mean": summarize(
            [b.distance_total - a.distance_total for a, b in paired]
        )[0] if paired else 0.0,
    }
    bundle = MetricsBundle(config, per_mode, summary)
    bundle.write(config.output_dir, all_results if config.write_trajectory else None)
    return bundle
