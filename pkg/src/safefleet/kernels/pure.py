"""Pure-Python kernel implementations.

These are the reference implementations of the numeric hot path: rotor power
terms, per-leg energies, and exhaustive visit-order search. The compiled
module in ``_native.pyx`` mirrors them expression for expression so that both
backends produce the same IEEE-754 doubles; the parity test suite holds them
to that.
"""

from __future__ import annotations

import itertools
import math

MAX_ROUTE_STOPS = 8


def hover_terms(
    cd: float,
    rho: float,
    sol: float,
    area: float,
    omega: float,
    radius: float,
    k: float,
    weight: float,
) -> tuple[float, float]:
    """Blade-profile and induced power (W) of stationary flight."""
    blade = cd / 8.0 * rho * sol * area * omega**3 * radius**3
    induced = (1.0 + k) * weight**1.5 / math.sqrt(2.0 * rho * area)
    return blade, induced


def propulsion_terms(
    v: float,
    blade_p0: float,
    induced_pi: float,
    v0: float,
    u_tip: float,
    d0: float,
    rho: float,
    sol: float,
    area: float,
) -> tuple[float, float, float]:
    """Induced, blade-profile and parasite power (W) at forward speed v.

    ``blade_p0`` and ``induced_pi`` are the hover terms; at v=0 the factors
    collapse to 1 and the parasite term to 0, so the sum equals hover power.
    """
    ratio2 = v * v / (2.0 * v0 * v0)
    induced = induced_pi * math.sqrt(math.sqrt(1.0 + v**4 / (4.0 * v0**4)) - ratio2)
    blade = blade_p0 * (1.0 + 3.0 * v * v / (u_tip * u_tip))
    parasite = 0.5 * d0 * rho * sol * area * v**3
    return induced, blade, parasite


def path_cost(
    start_x: float,
    start_y: float,
    xs: list[float],
    ys: list[float],
    do_return: bool,
    return_x: float = 0.0,
    return_y: float = 0.0,
) -> float:
    """Euclidean length of start -> stops (in order) [-> return point]."""
    cx, cy = start_x, start_y
    total = 0.0
    for x, y in zip(xs, ys):
        dx = x - cx
        dy = y - cy
        total += math.sqrt(dx * dx + dy * dy)
        cx, cy = x, y
    if do_return:
        dx = return_x - cx
        dy = return_y - cy
        total += math.sqrt(dx * dx + dy * dy)
    return total


def best_route(
    start_x: float,
    start_y: float,
    xs: list[float],
    ys: list[float],
    do_return: bool,
    return_x: float = 0.0,
    return_y: float = 0.0,
) -> tuple[float, tuple[int, ...]]:
    """Exhaustive minimum-cost visit order over at most MAX_ROUTE_STOPS stops.

    Returns (cost, index order). Permutations are scanned in lexicographic
    index order with a strict improvement test, so among cost ties the
    lexicographically smallest order wins.
    """
    n = len(xs)
    if n > MAX_ROUTE_STOPS:
        raise ValueError(f"at most {MAX_ROUTE_STOPS} stops supported, got {n}")
    if n == 0:
        if do_return:
            dx = return_x - start_x
            dy = return_y - start_y
            return math.sqrt(dx * dx + dy * dy), ()
        return 0.0, ()
    best_cost = math.inf
    best_order: tuple[int, ...] = ()
    for order in itertools.permutations(range(n)):
        cost = path_cost(
            start_x,
            start_y,
            [xs[i] for i in order],
            [ys[i] for i in order],
            do_return,
            return_x,
            return_y,
        )
        if cost < best_cost:
            best_cost = cost
            best_order = order
    return best_cost, best_order
