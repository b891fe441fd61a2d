"""Per-step decision pipeline and episode execution.

Each step: every active drone gets a planner proposal against the same
pre-step snapshot; in unguarded mode the proposal executes as-is (margins are
still evaluated, for the audit trail), in safeguarded mode it passes through
the override filter first. A training loop may inject its own candidate
actions while the planner's proposals remain the deviation anchors. All
decisions commit serially into one world step.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .actions import Action
from .planner import PlannerProposal
from .replay import PlannerRecord, ReplayBuffer
from .safety import (
    ConstraintConfig,
    HallucinationAudit,
    OverrideOutcome,
    PARSE_FAILURE_CLASS,
    PASS_CLASS,
    evaluate_constraints,
    filter_action,
)
from .world import CustomerStatus, World, WorldState

PLANNER_ONLY = "planner_only"
SAFEGUARDED = "safeguarded"
MODES = (PLANNER_ONLY, SAFEGUARDED)

# actor_batch: (state, items=(drone_id, tier, proposal, obs_vector)) -> {id: Action}
ActorBatch = Callable[[WorldState, Sequence[tuple]], Mapping[int, Action]]
ScorerFactory = Callable[[WorldState, int, tuple], Callable[[Action], float] | None]


@dataclass
class Decision:
    drone_id: int
    tier: str
    proposal: PlannerProposal
    candidate: Action
    executed: Action
    outcome: OverrideOutcome
    obs: tuple
    would_violate: str | None = None  # unguarded mode: class that a filter would have caught


def _tier_idle(tier: str) -> Action:
    return Action.local_idle() if tier == "local" else Action.global_idle()


def decide_all(
    world: World,
    state: WorldState,
    planner,
    constraints: ConstraintConfig,
    mode: str,
    memory: Sequence[PlannerRecord] | None = None,
    actor_batch: ActorBatch | None = None,
    scorer_factory: ScorerFactory | None = None,
) -> list[Decision]:
    """One decision per active drone against the current snapshot."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    items = []
    for drone in state.drones:
        if not drone.active:
            continue
        tier = planner.tier_for(state, drone.id)
        obs = world.observe(state, drone.id).vector()
        items.append((drone.id, tier, obs))

    propose_many = getattr(planner, "propose_many", None)
    if propose_many is not None:
        proposals = propose_many(state, [(i, t) for i, t, _ in items], memory=memory)
    else:
        proposals = {
            drone_id: planner.propose(state, drone_id, memory=memory)
            for drone_id, _, _ in items
        }

    enriched = [
        (drone_id, tier, proposals[drone_id], obs) for drone_id, tier, obs in items
    ]
    candidates: Mapping[int, Action] = {}
    if actor_batch is not None:
        candidates = actor_batch(state, enriched)

    decisions: list[Decision] = []
    for drone_id, tier, proposal, obs in enriched:
        candidate = candidates.get(drone_id, proposal.proposed)
        if mode == PLANNER_ONLY:
            decisions.append(
                _unguarded_decision(world, state, drone_id, tier, proposal, candidate, obs, constraints)
            )
        else:
            scorer = scorer_factory(state, drone_id, obs) if scorer_factory else None
            outcome = filter_action(
                world,
                state,
                drone_id,
                candidate,
                constraints,
                tier=tier,
                scorer=scorer,
                parse_failed=proposal.parse_failure,
            )
            decisions.append(
                Decision(drone_id, tier, proposal, candidate, outcome.executed, outcome, obs)
            )
    return decisions


def _unguarded_decision(
    world: World,
    state: WorldState,
    drone_id: int,
    tier: str,
    proposal: PlannerProposal,
    candidate: Action,
    obs: tuple,
    constraints: ConstraintConfig,
) -> Decision:
    """Execute the proposal untouched; margins are recorded, not enforced."""
    report = evaluate_constraints(world, state, drone_id, candidate, constraints)
    would: str | None = None
    executed = candidate
    if candidate.is_pass:
        would = PARSE_FAILURE_CLASS if proposal.parse_failure else PASS_CLASS
        executed = _tier_idle(tier)  # the refusal itself is not executable
    elif report.violated:
        would = report.worst()
    outcome = OverrideOutcome(executed, False, report=report)
    return Decision(drone_id, tier, proposal, candidate, executed, outcome, obs, would)


def layout_hash(state: WorldState) -> str:
    """Hash of the episode's customer layout, for paired-run fairness checks."""
    h = hashlib.sha256()
    for c in state.customers:
        h.update(f"{c.id}:{c.position[0]!r}:{c.position[1]!r}:{c.sector.value};".encode())
    return h.hexdigest()


@dataclass
class EpisodeResult:
    seed: str
    mode: str
    steps: int
    served: int
    spawned: int
    battery_consumption: list[float]
    distance_total: float
    overrides: int
    audit: HallucinationAudit
    injected: dict[str, int]
    injected_overridden: dict[str, int]
    layout_hash: str
    reward_total: float
    depleted: int
    trajectory: list[dict] = field(default_factory=list)
    soundness_violations: int = 0

    @property
    def success_rate(self) -> float:
        return self.served / self.spawned if self.spawned else 1.0


def run_episode(
    world: World,
    planner,
    constraints: ConstraintConfig,
    mode: str,
    seed: int | str,
    planner_buffer: ReplayBuffer[PlannerRecord] | None = None,
    memory_window: int = 16,
    collect_trajectory: bool = False,
    scorer_factory: ScorerFactory | None = None,
    check_soundness: bool = False,
) -> EpisodeResult:
    """Run one full episode under the given mode and collect its metrics."""
    state = world.init_episode(seed)
    lhash = layout_hash(state)
    audit = HallucinationAudit()
    injected: dict[str, int] = {}
    injected_overridden: dict[str, int] = {}
    overrides = 0
    reward_total = 0.0
    violations = 0
    trajectory: list[dict] = []

    while not world.is_terminal(state):
        memory = (
            planner_buffer.recent_window(memory_window) if planner_buffer else None
        )
        decisions = decide_all(
            world, state, planner, constraints, mode,
            memory=memory, scorer_factory=scorer_factory,
        )
        actions = {d.drone_id: d.executed for d in decisions}
        outcomes = {d.drone_id: d.outcome for d in decisions}

        for d in decisions:
            if d.proposal.injected_fault:
                injected[d.proposal.injected_fault] = injected.get(d.proposal.injected_fault, 0) + 1
                if d.outcome.overridden:
                    injected_overridden[d.proposal.injected_fault] = (
                        injected_overridden.get(d.proposal.injected_fault, 0) + 1
                    )
            if mode == SAFEGUARDED:
                audit.record(d.outcome)
                if d.outcome.overridden:
                    overrides += 1
            elif d.would_violate:
                audit.record_class(d.would_violate)
            if check_soundness and mode == SAFEGUARDED:
                report = evaluate_constraints(world, state, d.drone_id, d.executed, constraints)
                if report.violated:
                    violations += 1
            if planner_buffer is not None:
                planner_buffer.push(
                    PlannerRecord(
                        drone_id=d.drone_id,
                        t=state.t,
                        state_summary=d.proposal.raw_text or "",
                        proposed=d.proposal.proposed,
                        executed=d.executed,
                        override_flag=d.outcome.overridden,
                        fault_class=d.outcome.fault_class if d.outcome.overridden else None,
                    )
                )

        state, records, events = world.step(state, actions, outcomes)
        for rec in records:
            reward_total += rec.reward
            if collect_trajectory:
                trajectory.append(rec.log_row())

    capacity = world.battery.capacity_kwh
    battery = [min(1.0, d.kwh_consumed / capacity) for d in state.drones]
    return EpisodeResult(
        seed=str(seed),
        mode=mode,
        steps=state.t,
        served=sum(1 for c in state.customers if c.status == CustomerStatus.SERVED),
        spawned=state.total_spawned,
        battery_consumption=battery,
        distance_total=sum(d.cumulative_distance for d in state.drones),
        overrides=overrides,
        audit=audit,
        injected=injected,
        injected_overridden=injected_overridden,
        layout_hash=lhash,
        reward_total=reward_total,
        depleted=sum(1 for d in state.drones if not d.active),
        trajectory=trajectory,
        soundness_violations=violations,
    )
