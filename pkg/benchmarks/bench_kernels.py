"""Benchmark the compiled kernel backend against the pure-Python fallback.

Run:  python benchmarks/bench_kernels.py

Times each kernel on repeated calls, then a full safeguarded episode under
each backend (everything downstream of the selector reruns identically, so
the episode deltas isolate kernel cost).
"""

import random
import time
from dataclasses import replace

from safefleet import kernels
from safefleet.harness import _make_planner, desk_preset, episode_seed
from safefleet.runner import run_episode
from safefleet.world import World

HOVER_ARGS = (0.045, 1.225, 0.2449, 6.61, 78.0, 1.45, 0.052, 17799.0)


def time_call(fn, repeats: int) -> float:
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(backend: str) -> dict[str, float]:
    kernels.use_backend(backend)
    rng = random.Random(0)
    instances = [
        (
            rng.uniform(-500, 500),
            rng.uniform(-500, 500),
            [rng.uniform(-500, 500) for _ in range(4)],
            [rng.uniform(-500, 500) for _ in range(4)],
        )
        for _ in range(64)
    ]
    p0, pi = kernels.hover_terms(*HOVER_ARGS)

    def routes():
        for sx, sy, xs, ys in instances:
            kernels.best_route(sx, sy, xs, ys, True, 0.0, 0.0)

    def powers():
        for v in range(0, 120, 2):
            kernels.propulsion_terms(float(v), p0, pi, 26.45, 112.776, 0.01, 1.225, 0.2449, 6.61)

    def hovers():
        for _ in range(60):
            kernels.hover_terms(*HOVER_ARGS)

    return {
        "best_route (4 stops) [us]": time_call(routes, 200) / 64 * 1e6,
        "propulsion_terms [us]": time_call(powers, 200) / 60 * 1e6,
        "hover_terms [us]": time_call(hovers, 200) / 60 * 1e6,
    }


def bench_episode(backend: str) -> float:
    kernels.use_backend(backend)
    cfg = replace(desk_preset(), episodes=1, seed=7)
    world = World(cfg.grid, cfg.aircraft, cfg.battery, cfg.rewards)

    def episode():
        planner = _make_planner(cfg, world, 0)
        run_episode(world, planner, cfg.constraints, "safeguarded", episode_seed(7, 0))

    episode()  # warmup
    return time_call(episode, 20) * 1e3


def main() -> None:
    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)}\n")
    rows: dict[str, dict[str, float]] = {b: bench_kernels(b) for b in backends}
    episode_ms = {b: bench_episode(b) for b in backends}
    kernels.use_backend(backends[-1])

    names = list(next(iter(rows.values())).keys())
    width = max(len(n) for n in names + ["safeguarded episode [ms]"])
    header = f"{'benchmark':<{width}}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        line = f"{name:<{width}}" + "".join(f"{rows[b][name]:12.2f}" for b in backends)
        if len(backends) == 2:
            line += f"{rows['pure'][name] / rows['native'][name]:9.1f}x"
        print(line)
    line = f"{'safeguarded episode [ms]':<{width}}" + "".join(
        f"{episode_ms[b]:12.2f}" for b in backends
    )
    if len(backends) == 2:
        line += f"{episode_ms['pure'] / episode_ms['native']:9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
