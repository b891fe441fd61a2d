"""Two-tier planner abstraction with a deterministic mock implementation.

The fleet tier assigns drones to sectors, the route tier issues per-drone
movement commands. The mock planner is safe by construction (it applies the
same battery arithmetic as the filter and never targets served customers),
which makes it a clean carrier for configurable fault injection: corrupted
proposals carry a ground-truth label so detection can be scored exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .actions import Action, SECTORS, Sector
from .routing import plan_route
from .safety import ConstraintConfig, battery_gap
from .world import Customer, CustomerStatus, World, WorldState

MOCK = "mock"
LLM = "llm"

DUPLICATE_VISIT = "duplicate_visit"
BATTERY_IGNORE = "battery_ignore"
INEFFICIENT_ROUTE = "inefficient_route"
SECTOR_IMBALANCE = "sector_imbalance"
FAULT_CLASSES = (DUPLICATE_VISIT, BATTERY_IGNORE, INEFFICIENT_ROUTE, SECTOR_IMBALANCE)


@dataclass(frozen=True)
class FaultConfig:
    """Per-class corruption probabilities, applied per proposal.

    Defaults corrupt 25% of proposals overall, split 0.64 : 0.24 : 0.08 :
    0.04 across the classes (the observed hallucination mix); the overall
    rate is calibrated so that unguarded runs visibly degrade at desk scale.
    A drawn class that is inapplicable in context leaves the proposal clean.
    """

    duplicate_visit: float = 0.16
    battery_ignore: float = 0.06
    inefficient_route: float = 0.02
    sector_imbalance: float = 0.01

    def __post_init__(self) -> None:
        total = 0.0
        for name in FAULT_CLASSES:
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} rate must be in [0, 1]")
            total += rate
        if total > 1.0:
            raise ValueError("fault rates must sum to at most 1")

    @staticmethod
    def none() -> "FaultConfig":
        return FaultConfig(0.0, 0.0, 0.0, 0.0)

    def rates(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FAULT_CLASSES)


@dataclass(frozen=True)
class PlannerProposal:
    drone_id: int
    proposed: Action
    tier: str
    source: str = MOCK
    raw_text: str | None = None
    injected_fault: str | None = None
    parse_failure: bool = False


@dataclass(frozen=True)
class FaultContext:
    """Everything fault injection may retarget to, computed by the planner."""

    stale_targets: tuple[int, ...] = ()     # served or foreign-assigned customers
    route_order: tuple[int, ...] = ()       # optimal visit order from here
    reserve_blocked: bool = False           # clean proposal was a reserve return
    crowded_sector: Sector | None = None    # most drone-loaded sector


def inject_fault(
    proposal: PlannerProposal,
    faults: FaultConfig,
    rng: random.Random,
    ctx: FaultContext,
) -> PlannerProposal:
    """Corrupt a proposal with the configured class probabilities.

    One uniform draw selects the class; the corruption applies only when the
    context supports it, so labelled faults are always real ones.
    """
    u = rng.random()
    edge = 0.0
    chosen: str | None = None
    for name, rate in zip(FAULT_CLASSES, faults.rates()):
        edge += rate
        if u < edge:
            chosen = name
            break
    if chosen is None:
        return proposal

    action = proposal.proposed
    if chosen == DUPLICATE_VISIT and action.is_move and ctx.stale_targets:
        target = ctx.stale_targets[rng.randrange(len(ctx.stale_targets))]
        return _corrupt(proposal, Action.move_to_customer(target), chosen)
    if (
        chosen == BATTERY_IGNORE
        and ctx.reserve_blocked
        and action.name == "return_to_base"
        and ctx.route_order
    ):
        return _corrupt(proposal, Action.move_to_customer(ctx.route_order[0]), chosen)
    if chosen == INEFFICIENT_ROUTE and action.is_move and len(ctx.route_order) >= 2:
        return _corrupt(proposal, Action.move_to_customer(ctx.route_order[1]), chosen)
    if (
        chosen == SECTOR_IMBALANCE
        and proposal.tier == "global"
        and ctx.crowded_sector is not None
        and action.sector is not ctx.crowded_sector
    ):
        return _corrupt(proposal, Action.go_to_sector(ctx.crowded_sector), chosen)
    return proposal


def _corrupt(proposal: PlannerProposal, action: Action, fault: str) -> PlannerProposal:
    return PlannerProposal(
        proposal.drone_id, action, proposal.tier, proposal.source,
        proposal.raw_text, fault, proposal.parse_failure,
    )


class MockPlanner:
    """Deterministic planner: demand-balanced sector picks, optimal routes.

    Fault-injection randomness is partitioned per drone so proposals for one
    drone never depend on how many other drones were queried.
    """

    def __init__(
        self,
        world: World,
        constraints: ConstraintConfig | None = None,
        faults: FaultConfig | None = None,
        seed: int = 0,
        memory_window: int = 16,
    ) -> None:
        self.world = world
        self.constraints = constraints or ConstraintConfig()
        self.faults = faults or FaultConfig.none()
        self.seed = seed
        self.memory_window = memory_window
        self._fault_rngs: dict[int, random.Random] = {}
        # Drones whose current journey plan ignores the battery reserve: a
        # battery fault corrupts the remaining plan, not a single step. The
        # flag clears when the drone next touches the pad.
        self._battery_ignorers: set[int] = set()

    def fault_rng(self, drone_id: int) -> random.Random:
        rng = self._fault_rngs.get(drone_id)
        if rng is None:
            rng = random.Random(f"{self.seed}:fault:{drone_id}")
            self._fault_rngs[drone_id] = rng
        return rng

    # ------------------------------------------------------------------

    def tier_for(self, state: WorldState, drone_id: int) -> str:
        drone = state.drones[drone_id]
        if state.assigned_unserved(drone_id) or drone.airborne:
            return "local"
        return "global"

    def propose(self, state: WorldState, drone_id: int, memory=None) -> PlannerProposal:
        """Tier-dispatched proposal with fault injection applied."""
        if not state.drones[drone_id].airborne:
            self._battery_ignorers.discard(drone_id)
        if self.tier_for(state, drone_id) == "local":
            proposal, ctx = self._local(state, drone_id, memory)
        else:
            proposal, ctx = self._global(state, drone_id)
        if any(self.faults.rates()):
            proposal = inject_fault(proposal, self.faults, self.fault_rng(drone_id), ctx)
            if proposal.injected_fault == BATTERY_IGNORE:
                self._battery_ignorers.add(drone_id)
        return proposal

    def propose_global(self, state: WorldState, drone_id: int, memory=None) -> PlannerProposal:
        return self._global(state, drone_id)[0]

    def propose_local(self, state: WorldState, drone_id: int, memory=None) -> PlannerProposal:
        return self._local(state, drone_id, memory)[0]

    # ------------------------------------------------------------------

    def _global(self, state: WorldState, drone_id: int) -> tuple[PlannerProposal, FaultContext]:
        pending = state.pending_by_sector()
        assigned = state.assigned_drones_by_sector()
        best: Sector | None = None
        best_score = 0.0
        for s in SECTORS:
            score = pending[s] / (assigned[s] + 1)
            if score > best_score:
                best, best_score = s, score
        action = Action.go_to_sector(best) if best is not None else Action.global_idle()
        crowded = max(SECTORS, key=lambda s: (assigned[s], -SECTORS.index(s)))
        ctx = FaultContext(
            crowded_sector=crowded if assigned[crowded] > 0 else None,
        )
        return PlannerProposal(drone_id, action, "global"), ctx

    def _local(
        self, state: WorldState, drone_id: int, memory=None
    ) -> tuple[PlannerProposal, FaultContext]:
        drone = state.drones[drone_id]
        assigned = state.assigned_unserved(drone_id)
        stale = tuple(
            c.id for c in state.customers if _is_stale_target(c, drone_id)
        )
        if not assigned:
            action = (
                Action.return_to_base() if drone.airborne else Action.local_idle()
            )
            return (
                PlannerProposal(drone_id, action, "local"),
                FaultContext(stale_targets=stale),
            )
        base = self.world.grid.warehouse
        excluded = set(self._recently_overridden(memory, drone_id))
        pool = [c for c in assigned if c.id not in excluded] or assigned
        route = plan_route(
            drone.position, [(c.id, c.position) for c in pool], return_to=base
        )
        order = route.stops
        move = Action.move_to_customer(order[0])
        gap = battery_gap(self.world, state, drone, move, self.constraints)
        if gap > 0.0 and drone_id in self._battery_ignorers:
            # The journey's corrupted plan presses on past the reserve.
            return (
                PlannerProposal(drone_id, move, "local", injected_fault=BATTERY_IGNORE),
                FaultContext(stale_targets=stale, route_order=order),
            )
        if gap > 0.0:
            # Reserve would be breached: go home (and recharge) instead.
            action = Action.return_to_base()
            reserve_blocked = True
        else:
            action = move
            reserve_blocked = False
        ctx = FaultContext(
            stale_targets=stale,
            route_order=order,
            reserve_blocked=reserve_blocked,
        )
        return PlannerProposal(drone_id, action, "local"), ctx

    def _recently_overridden(self, memory, drone_id: int) -> list[int]:
        """Customer ids whose moves were recently overridden as duplicates.

        Feeding override history back into target choice keeps the planner
        from re-proposing a stale target while the record is still in the
        memory window. Other override classes are not exclusions: a
        battery- or route-overridden target is still a legitimate stop.
        """
        if memory is None:
            return []
        out = []
        for rec in memory:
            if (
                getattr(rec, "drone_id", None) == drone_id
                and getattr(rec, "override_flag", False)
                and getattr(rec, "fault_class", None) == "duplicate"
                and rec.proposed is not None
                and rec.proposed.is_move
            ):
                out.append(rec.proposed.customer_id)
        return out


def _is_stale_target(customer: Customer, drone_id: int) -> bool:
    """Served or committed to another drone: exactly what a duplicate fault hits."""
    if customer.status == CustomerStatus.SERVED:
        return True
    return (
        customer.status == CustomerStatus.ASSIGNED
        and customer.assigned_to != drone_id
    )
