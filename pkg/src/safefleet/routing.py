"""Exact minimum-cost visit orders over a drone's assigned customers.

Instances are capped at the package limit (4 stops), so exhaustive
enumeration of all orderings (at most 24) is both exact and cheap. Exactness
matters downstream: the route-efficiency constraint compares proposals
against the true optimum.

Routes run start -> stops in order -> optional return point (the warehouse,
when planning from mid-air; equal to the start when planning a round trip
from the pad).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import kernels
from .energy import AircraftParams, kwh_per_meter

DISTANCE = "distance"
ENERGY = "energy"

Point = tuple[float, float]


@dataclass(frozen=True)
class Route:
    """An ordered visit plan. ``total_cost`` includes the return leg when set."""

    stops: tuple[int, ...]
    return_to_base: bool
    total_cost: float
    cost_mode: str = DISTANCE


def _cost_scale(cost_mode: str, params: AircraftParams | None) -> float:
    if cost_mode == DISTANCE:
        return 1.0
    if cost_mode == ENERGY:
        if params is None:
            raise ValueError("energy cost mode needs aircraft parameters")
        return kwh_per_meter(params)
    raise ValueError(f"unknown cost mode {cost_mode!r}")


def route_cost(
    start: Point,
    stops: Sequence[Point],
    cost_mode: str = DISTANCE,
    return_to: Point | None = None,
    params: AircraftParams | None = None,
) -> float:
    """Cost of visiting ``stops`` in the given order from ``start``.

    ``return_to`` of None means the path ends at the last stop.
    """
    scale = _cost_scale(cost_mode, params)
    do_return = return_to is not None
    rx, ry = return_to if do_return else (0.0, 0.0)
    length = kernels.path_cost(
        start[0], start[1],
        [p[0] for p in stops], [p[1] for p in stops],
        do_return, rx, ry,
    )
    return length * scale


def plan_route(
    start: Point,
    customers: Sequence[tuple[int, Point]],
    cost_mode: str = DISTANCE,
    return_to: Point | None = None,
    params: AircraftParams | None = None,
    max_stops: int = 4,
) -> Route:
    """Globally optimal visit order over ``customers`` as (id, position) pairs.

    All orderings are enumerated; cost ties break toward the lexicographically
    smallest id sequence, so the result is independent of input order.
    """
    if len(customers) > max_stops:
        raise ValueError(f"at most {max_stops} customers per route, got {len(customers)}")
    ids = [cid for cid, _ in customers]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate customer ids in route request")
    scale = _cost_scale(cost_mode, params)
    do_return = return_to is not None
    rx, ry = return_to if do_return else (0.0, 0.0)
    if not customers:
        length = kernels.path_cost(start[0], start[1], [], [], do_return, rx, ry)
        return Route((), do_return, length * scale, cost_mode)
    # Sorting by id first makes the enumeration's first-found tie winner the
    # lexicographically smallest id order.
    ordered = sorted(customers, key=lambda c: c[0])
    xs = [p[0] for _, p in ordered]
    ys = [p[1] for _, p in ordered]
    length, order = kernels.best_route(start[0], start[1], xs, ys, do_return, rx, ry)
    stops = tuple(ordered[i][0] for i in order)
    return Route(stops, do_return, length * scale, cost_mode)


def leg_length(a: Point, b: Point) -> float:
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    return math.sqrt(dx * dx + dy * dy)
