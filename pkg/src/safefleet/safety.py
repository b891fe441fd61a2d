"""Constraint evaluation and the action override filter.

Four dimensionless feasibility margins g_k are evaluated for every proposed
action; any positive margin marks a violation. Violating (or refused)
proposals are replaced by a verified-safe alternative: either the
deterministic fallback ladder or, when a scorer over the trained critics is
supplied, the feasible candidate it ranks highest. An executed action never
leaves this module with a positive margin.

The battery margin is the one inductive guarantee: it reserves enough charge
for the commanded flight, one hover interval and the return leg home, so a
drone that only executes filtered actions can always still reach the pad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .actions import Action, SECTORS, Sector
from .routing import leg_length, plan_route
from .world import CustomerStatus, DroneState, World, WorldState

BATTERY = "battery"
DUPLICATE = "duplicate"
ROUTE = "route"
SECTOR = "sector"
# Tie-break priority when several margins are violated at once.
CONSTRAINTS = (BATTERY, DUPLICATE, ROUTE, SECTOR)

PASS_CLASS = "pass"
PARSE_FAILURE_CLASS = "parse_failure"


@dataclass(frozen=True)
class ConstraintConfig:
    """Thresholds and switches for the constraint set.

    ``battery_reserve`` of None defers to the battery model's reserve
    fraction. ``route_slack`` is the tolerated relative detour; a proposed
    next stop is acceptable while its completed-route cost stays within
    (1 + slack) of the optimum. ``sector_overassign_tolerance`` is how many
    drones past the proportional share a sector may hold.
    """

    battery_reserve: float | None = None
    route_slack: float = 0.05
    sector_overassign_tolerance: int = 1
    enabled: tuple[str, ...] = CONSTRAINTS

    def __post_init__(self) -> None:
        if self.route_slack < 0:
            raise ValueError("route_slack must be nonnegative")
        if self.battery_reserve is not None and not math.isfinite(self.battery_reserve):
            raise ValueError("battery_reserve must be finite")
        for name in self.enabled:
            if name not in CONSTRAINTS:
                raise ValueError(f"unknown constraint {name!r}")

    def reserve(self, world: World) -> float:
        if self.battery_reserve is not None:
            return self.battery_reserve
        return world.battery.reserve_fraction


@dataclass(frozen=True)
class ConstraintReport:
    g_values: Mapping[str, float]
    cost: float
    violated: frozenset[str]

    @property
    def feasible(self) -> bool:
        return not self.violated

    def worst(self) -> str:
        """Violated constraint with the largest margin; ties follow CONSTRAINTS order."""
        best = None
        best_g = -math.inf
        for name in CONSTRAINTS:
            if name in self.violated and self.g_values[name] > best_g:
                best = name
                best_g = self.g_values[name]
        if best is None:
            raise ValueError("no violation recorded")
        return best


@dataclass(frozen=True)
class OverrideOutcome:
    executed: Action
    overridden: bool
    fault_class: str | None = None
    fallback_reason: str | None = None
    report: ConstraintReport | None = None


def battery_gap(
    world: World,
    state: WorldState,
    drone: DroneState,
    action: Action,
    cfg: ConstraintConfig,
) -> float:
    """Reserve minus projected SOC after the action plus the trip home.

    Projections include one hover interval as the airborne-overhead
    allowance. Grounded actions that trigger no flight are vacuously safe:
    the pad is where drones recharge.
    """
    base = world.grid.warehouse
    hover_step = world.hover_kwh_per_s * world.grid.time_step
    if action.is_move:
        customer = state.customer(action.customer_id)
        if customer is None:
            return -1.0  # infeasible reference; the duplicate margin flags it
        need = (
            world.kwh_per_meter
            * (leg_length(drone.position, customer.position)
               + leg_length(customer.position, base))
            + hover_step
        )
    elif action.name == "return_to_base":
        if not drone.airborne:
            return -1.0
        need = world.kwh_per_meter * leg_length(drone.position, base)
    else:
        if not drone.airborne:
            return -1.0
        need = hover_step + world.kwh_per_meter * leg_length(drone.position, base)
    projected = drone.soc - need / world.battery.capacity_kwh
    return cfg.reserve(world) - projected


def _duplicate_gap(state: WorldState, drone_id: int, action: Action) -> float:
    if not action.is_move:
        return -1.0
    customer = state.customer(action.customer_id)
    if customer is None:
        return 1.0
    if customer.status == CustomerStatus.SERVED:
        return 1.0
    if customer.assigned_to not in (None, drone_id):
        return 1.0
    return -1.0


def _route_gap(
    world: World, state: WorldState, drone: DroneState, action: Action, cfg: ConstraintConfig
) -> float:
    if not action.is_move:
        return -1.0
    assigned = state.assigned_unserved(drone.id)
    ids = {c.id for c in assigned}
    if action.customer_id not in ids:
        return -1.0  # foreign target; the duplicate margin owns this case
    base = world.grid.warehouse
    stops = [(c.id, c.position) for c in assigned]
    optimal = plan_route(drone.position, stops, return_to=base).total_cost
    if optimal <= 0.0:
        return -1.0
    target = next(c for c in assigned if c.id == action.customer_id)
    rest = [(c.id, c.position) for c in assigned if c.id != action.customer_id]
    proposed = (
        leg_length(drone.position, target.position)
        + plan_route(target.position, rest, return_to=base).total_cost
    )
    return proposed / ((1.0 + cfg.route_slack) * optimal) - 1.0


def _sector_gap(
    world: World, state: WorldState, drone: DroneState, action: Action, cfg: ConstraintConfig
) -> float:
    if action.tier != "global" or action.sector is None:
        return -1.0
    pending = state.pending_by_sector()
    total = sum(pending.values())
    assigned = state.assigned_drones_by_sector()
    after = assigned[action.sector]
    if drone.sector_assignment is not action.sector:
        after += 1
    n = world.grid.drone_count
    ideal = math.ceil(n * pending[action.sector] / total) if total > 0 else 0
    return float(after - (ideal + cfg.sector_overassign_tolerance))


def evaluate_constraints(
    world: World,
    state: WorldState,
    drone_id: int,
    action: Action,
    cfg: ConstraintConfig,
) -> ConstraintReport:
    """Margins g_k for one proposed action; cost is the hinge sum max(0, g_k)."""
    drone = state.drones[drone_id]
    g: dict[str, float] = dict.fromkeys(CONSTRAINTS, -1.0)
    if action.is_pass:
        # The refusal token carries no physics; the filter replaces it anyway.
        return ConstraintReport(g, 0.0, frozenset())
    if BATTERY in cfg.enabled:
        g[BATTERY] = battery_gap(world, state, drone, action, cfg)
    if DUPLICATE in cfg.enabled:
        g[DUPLICATE] = _duplicate_gap(state, drone_id, action)
    if ROUTE in cfg.enabled:
        g[ROUTE] = _route_gap(world, state, drone, action, cfg)
    if SECTOR in cfg.enabled:
        g[SECTOR] = _sector_gap(world, state, drone, action, cfg)
    violated = frozenset(k for k, v in g.items() if v > 0.0)
    cost = sum(max(0.0, v) for v in g.values())
    return ConstraintReport(g, cost, violated)


def _local_candidates(
    world: World, state: WorldState, drone: DroneState, prefer_move: bool
) -> list[Action]:
    candidates: list[Action] = []
    assigned = state.assigned_unserved(drone.id)
    if prefer_move and assigned:
        route = plan_route(
            drone.position,
            [(c.id, c.position) for c in assigned],
            return_to=world.grid.warehouse,
        )
        candidates.append(Action.move_to_customer(route.stops[0]))
    candidates.append(Action.return_to_base())
    candidates.append(Action.local_idle())
    return candidates


def _global_candidates(world: World, state: WorldState, drone: DroneState) -> list[Action]:
    pending = state.pending_by_sector()
    assigned = state.assigned_drones_by_sector()
    candidates: list[Action] = []
    nonempty = [s for s in SECTORS if pending[s] > 0]
    if nonempty:
        least = min(nonempty, key=lambda s: (assigned[s], SECTORS.index(s)))
        candidates.append(Action.go_to_sector(least))
    candidates.append(Action.global_idle())
    if drone.airborne:
        candidates.append(Action.return_to_base())
    return candidates


def select_fallback(
    world: World,
    state: WorldState,
    drone_id: int,
    report: ConstraintReport | None,
    cfg: ConstraintConfig,
    tier: str,
    scorer: Callable[[Action], float] | None = None,
) -> Action:
    """A verified-feasible substitute action.

    Ladder order depends on the leading violation: battery trouble goes home
    first; anything else tries the best next stop (local) or the least-loaded
    sector with demand (global) before idling. With ``scorer`` set, the
    feasible candidates are re-ranked by it (policy mode) instead.
    """
    drone = state.drones[drone_id]
    fault = None
    if report is not None and report.violated:
        fault = report.worst()
    if tier == "local":
        candidates = _local_candidates(world, state, drone, prefer_move=fault != BATTERY)
    else:
        candidates = _global_candidates(world, state, drone)

    feasible = [
        a
        for a in candidates
        if evaluate_constraints(world, state, drone_id, a, cfg).feasible
    ]
    if not feasible:
        # Reachable only if the reserve invariant was violated externally;
        # going home is still the least-bad move.
        return Action.return_to_base() if tier == "local" else Action.global_idle()
    if scorer is not None:
        best = feasible[0]
        best_score = scorer(best)
        for a in feasible[1:]:
            s = scorer(a)
            if s > best_score:
                best, best_score = a, s
        return best
    return feasible[0]


def filter_action(
    world: World,
    state: WorldState,
    drone_id: int,
    proposal: Action,
    cfg: ConstraintConfig,
    tier: str | None = None,
    scorer: Callable[[Action], float] | None = None,
    parse_failed: bool = False,
) -> OverrideOutcome:
    """Pass a feasible proposal through untouched, otherwise substitute.

    Total: always yields an executable action. The refusal token counts as an
    override of class ``pass`` (or ``parse_failure`` when flagged by the
    response parser).
    """
    tier = tier or proposal.tier
    report = evaluate_constraints(world, state, drone_id, proposal, cfg)
    if not proposal.is_pass and report.feasible:
        return OverrideOutcome(proposal, False, report=report)
    if proposal.is_pass:
        fault_class = PARSE_FAILURE_CLASS if parse_failed else PASS_CLASS
        reason = fault_class
        ladder_report = None
    else:
        fault_class = report.worst()
        reason = f"violated:{fault_class}"
        ladder_report = report
    executed = select_fallback(world, state, drone_id, ladder_report, cfg, tier, scorer)
    return OverrideOutcome(executed, True, fault_class, reason, report)


@dataclass
class HallucinationAudit:
    """Per-class override counts with share normalization."""

    counts: dict[str, int] = field(default_factory=dict)

    def record(self, outcome: OverrideOutcome) -> None:
        if outcome.overridden and outcome.fault_class:
            self.counts[outcome.fault_class] = self.counts.get(outcome.fault_class, 0) + 1

    def record_class(self, fault_class: str, n: int = 1) -> None:
        self.counts[fault_class] = self.counts.get(fault_class, 0) + n

    def merge(self, other: "HallucinationAudit") -> None:
        for k, v in other.counts.items():
            self.counts[k] = self.counts.get(k, 0) + v

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def shares(self) -> dict[str, float]:
        """Normalized class shares; all zero when nothing was overridden."""
        total = self.total
        keys = sorted(set(self.counts) | set(CONSTRAINTS))
        if total == 0:
            return {k: 0.0 for k in keys}
        return {k: self.counts.get(k, 0) / total for k in keys}
