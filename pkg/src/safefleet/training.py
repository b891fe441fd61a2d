"""Integrated training loop: planner proposes, the policy acts, the filter
guards, the world steps, both buffers fill, parameters update periodically.

During training the policy is the acting decision-maker (its pre-filter picks
are what the constraint heads and multipliers learn from) while the planner's
proposals anchor the deviation penalty. Evaluation-time behavior — proposals
filtered with the trained critics ranking the fallback — is what the harness
runs; this module only produces the parameters.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .actions import Action, CATEGORIES, category_index
from .replay import PlannerRecord, ReplayBuffer, RlTransition
from .routing import plan_route
from .runner import SAFEGUARDED, decide_all
from .safety import CONSTRAINTS, ConstraintConfig
from .world import World, WorldState

from . import rl


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.99
    eta: float = 0.1
    policy_lr: float = 1e-3
    critic_lr: float = 1e-3
    # Dual ascent fast enough for the multipliers to bind within a few
    # hundred episodes of desk-scale training. The thresholds are the
    # tolerated per-decision cost budget: multipliers grow above it and decay
    # back once the policy is inside it (a zero budget never decays, so the
    # multipliers would integrate without bound and eventually drown the
    # reward signal).
    lagrange_step: float = 0.3
    lagrange_thresholds: tuple[float, float, float, float] = (0.02, 0.02, 0.02, 0.02)
    # Ceiling sized against the reward scale: the largest per-decision hinge
    # (a few units) times the ceiling must stay below a delivery journey's
    # return, or the penalized optimum degenerates to blanket idling.
    lagrange_ceiling: float = 3.0
    # Exploration floor; without it the softmax saturates once a behavior
    # dominates and the policy cannot escape penalty-induced fixed points.
    entropy_weight: float = 0.01
    batch_size: int = 64
    update_period: int = 16         # decisions between gradient updates
    warmup_episodes: int = 50       # ladder fallback until the critics warm up
    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    planner_buffer_capacity: int = 10_000
    memory_window: int = 16

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.batch_size < 1 or self.update_period < 1:
            raise ValueError("batch_size and update_period must be >= 1")


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    served: int
    spawned: int
    reward: float
    reward_ma: float
    mean_costs: tuple[float, float, float, float]
    overrides: int
    battery_mean: float
    distance_total: float
    lagrange: tuple[float, float, float, float]


@dataclass
class TrainingLog:
    rows: list[EpisodeRow] = field(default_factory=list)
    nan_rejections: int = 0
    lambda_min: float = 0.0

    def reward_ma(self, window: int = 100) -> list[float]:
        return [r.reward_ma for r in self.rows][-window:]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["episode", "steps", "served", "spawned", "reward", "reward_ma"]
                + [f"mean_cost_{k}" for k in CONSTRAINTS]
                + ["overrides", "battery_mean", "distance_total"]
                + [f"lambda_{k}" for k in CONSTRAINTS]
            )
            for r in self.rows:
                writer.writerow(
                    [r.episode, r.steps, r.served, r.spawned, repr(r.reward), repr(r.reward_ma)]
                    + [repr(c) for c in r.mean_costs]
                    + [r.overrides, repr(r.battery_mean), repr(r.distance_total)]
                    + [repr(v) for v in r.lagrange]
                )


@dataclass
class TrainingResult:
    policy: rl.PolicyParams
    critics: rl.Critics
    lagrange: rl.LagrangeState
    log: TrainingLog
    rl_buffer: ReplayBuffer[RlTransition]
    planner_buffer: ReplayBuffer[PlannerRecord]


def concretize(world: World, state: WorldState, drone_id: int, index: int) -> Action:
    """Map a category index to a concrete command in the current context."""
    tier, name = CATEGORIES[index]
    if tier == "global":
        if name == "idle":
            return Action.global_idle()
        sector = name.removeprefix("go_to_sector_")
        from .actions import Sector

        return Action.go_to_sector(Sector(sector))
    if name == "return_to_base":
        return Action.return_to_base()
    if name == "idle":
        return Action.local_idle()
    assigned = state.assigned_unserved(drone_id)
    if not assigned:
        return Action.return_to_base()
    route = plan_route(
        state.drones[drone_id].position,
        [(c.id, c.position) for c in assigned],
        return_to=world.grid.warehouse,
    )
    return Action.move_to_customer(route.stops[0])


def _proposal_anchor_index(proposal_action: Action, fallback: int) -> int:
    if proposal_action.is_pass:
        return fallback
    return category_index(proposal_action)


def train(
    world: World,
    planner_factory,
    constraints: ConstraintConfig,
    config: RlConfig,
    episodes: int,
    seed: int,
) -> TrainingResult:
    """Train the policy/critics/multipliers over full safeguarded episodes.

    ``planner_factory(episode_index)`` builds the proposal source for each
    episode so fault-injection streams stay reproducible per episode.
    """
    policy = rl.policy_init(hidden=config.hidden, seed=seed)
    critics = rl.critics_init(hidden=config.hidden, seed=seed + 1)
    lagrange = rl.LagrangeState(
        np.zeros(len(CONSTRAINTS)), config.lagrange_step, config.lagrange_ceiling
    )
    log = TrainingLog()
    rl_buffer: ReplayBuffer[RlTransition] = ReplayBuffer(config.buffer_capacity)
    planner_buffer: ReplayBuffer[PlannerRecord] = ReplayBuffer(config.planner_buffer_capacity)

    sample_rng = random.Random(f"{seed}:sample")
    action_rng = np.random.default_rng(seed + 2)
    critic_rng = np.random.default_rng(seed + 3)
    decision_count = 0
    reward_history: list[float] = []
    lambda_min = 0.0

    for episode in range(episodes):
        planner = planner_factory(episode)
        state = world.init_episode(f"{seed}:{episode}")
        episode_costs = np.zeros(len(CONSTRAINTS))
        episode_cost_n = 0
        episode_reward = 0.0
        overrides = 0

        def actor_batch(state: WorldState, items: Sequence[tuple]) -> dict[int, Action]:
            obs = np.array([row[3] for row in items], dtype=float)
            masks = np.array([rl.tier_mask(row[1]) for row in items], dtype=bool)
            indices = rl.act_batch(policy, obs, masks, action_rng)
            return {
                row[0]: concretize(world, state, row[0], int(idx))
                for row, idx in zip(items, indices)
            }

        scorer_factory = None
        if episode >= config.warmup_episodes:

            def scorer_factory(state: WorldState, drone_id: int, obs: tuple):
                obs_arr = np.asarray(obs, dtype=float).reshape(1, -1)

                def score(action: Action) -> float:
                    feat = np.array(
                        [rl.concrete_action_features(world, state, drone_id, action)]
                    )
                    q, qc = rl.q_values(critics, obs_arr, feat)
                    return float(q[0] - qc[0] @ lagrange.lam)

                return score

        while not world.is_terminal(state):
            memory = planner_buffer.recent_window(config.memory_window)
            decisions = decide_all(
                world, state, planner, constraints, SAFEGUARDED,
                memory=memory, actor_batch=actor_batch, scorer_factory=scorer_factory,
            )
            actions = {d.drone_id: d.executed for d in decisions}
            outcomes = {d.drone_id: d.outcome for d in decisions}
            pre_features = {}
            for d in decisions:
                exec_feat = rl.concrete_action_features(world, state, d.drone_id, d.executed)
                cand_feat = (
                    exec_feat
                    if d.executed == d.candidate
                    else rl.concrete_action_features(world, state, d.drone_id, d.candidate)
                )
                pre_features[d.drone_id] = (exec_feat, cand_feat)

            state, records, _events = world.step(state, actions, outcomes)
            rewards = {r.drone_id: r.reward for r in records}
            terminal = world.is_terminal(state)

            for d in decisions:
                exec_feat, cand_feat = pre_features[d.drone_id]
                report = d.outcome.report
                costs = tuple(
                    max(0.0, report.g_values[k]) if report else 0.0 for k in CONSTRAINTS
                )
                exec_idx = category_index(d.executed)
                cand_idx = (
                    exec_idx if d.candidate.is_pass else category_index(d.candidate)
                )
                next_obs = world.observe(state, d.drone_id).vector()
                drone_done = terminal or not state.drones[d.drone_id].active
                rl_buffer.push(
                    RlTransition(
                        obs=d.obs,
                        action_index=exec_idx,
                        reward=rewards.get(d.drone_id, 0.0),
                        next_obs=next_obs,
                        costs=costs,
                        done=drone_done,
                        proposed_index=_proposal_anchor_index(d.proposal.proposed, cand_idx),
                        action_features=exec_feat,
                        candidate_index=cand_idx,
                        candidate_features=cand_feat,
                        tier=d.tier,
                    )
                )
                planner_buffer.push(
                    PlannerRecord(
                        drone_id=d.drone_id,
                        t=state.t - 1,
                        state_summary=d.proposal.raw_text or "",
                        proposed=d.proposal.proposed,
                        executed=d.executed,
                        override_flag=d.outcome.overridden,
                        fault_class=d.outcome.fault_class if d.outcome.overridden else None,
                    )
                )
                episode_costs += np.asarray(costs)
                episode_cost_n += 1
                episode_reward += rewards.get(d.drone_id, 0.0)
                if d.outcome.overridden:
                    overrides += 1
                decision_count += 1

            if (
                decision_count % config.update_period == 0
                and len(rl_buffer) >= config.batch_size
            ):
                batch = rl_buffer.sample_minibatch(config.batch_size, sample_rng)
                rl.critic_update(
                    critics, batch, config.gamma, config.critic_lr, policy, critic_rng
                )
                if not rl.policy_gradient_step(
                    policy, critics, lagrange, batch,
                    config.policy_lr, config.eta, config.gamma, critic_rng,
                    entropy_weight=config.entropy_weight,
                ):
                    log.nan_rejections += 1

        mean_costs = (
            tuple(episode_costs / episode_cost_n) if episode_cost_n else (0.0,) * 4
        )
        lagrange = rl.lagrange_update(lagrange, mean_costs, config.lagrange_thresholds)
        lambda_min = min(lambda_min, float(lagrange.lam.min()))
        reward_history.append(episode_reward)
        window = reward_history[-100:]
        capacity = world.battery.capacity_kwh
        battery_mean = sum(
            min(1.0, d.kwh_consumed / capacity) for d in state.drones
        ) / len(state.drones)
        served = sum(1 for c in state.customers if c.status.value == "served")
        log.rows.append(
            EpisodeRow(
                episode=episode,
                steps=state.t,
                served=served,
                spawned=state.total_spawned,
                reward=episode_reward,
                reward_ma=sum(window) / len(window),
                mean_costs=mean_costs,
                overrides=overrides,
                battery_mean=battery_mean,
                distance_total=sum(d.cumulative_distance for d in state.drones),
                lagrange=tuple(lagrange.lam),
            )
        )

    log.lambda_min = lambda_min
    return TrainingResult(policy, critics, lagrange, log, rl_buffer, planner_buffer)
