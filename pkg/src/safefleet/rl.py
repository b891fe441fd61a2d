"""Lagrangian actor-critic over the delivery environment.

Small dense networks with explicit forward/backward passes (no learning
framework): a masked-softmax policy over the action categories, a reward
critic and a four-head constraint critic over (observation, action features).
Multipliers follow projected dual ascent. The deviation term that keeps the
learned policy close to the planner's suggestions is rendered as an indicator
penalty, since the action set is categorical.

Everything is float64 and seeded; the analytic policy gradient is held to a
finite-difference check in the test suite.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .actions import (
    Action,
    GLOBAL_CATEGORY_INDICES,
    LOCAL_CATEGORY_INDICES,
    N_CATEGORIES,
    category_index,
)
from .replay import ReplayBuffer, RlTransition
from .world import OBSERVATION_DIM, World, WorldState

logger = logging.getLogger(__name__)

TARGET_FEATURE_DIM = 3
ACTION_FEATURE_DIM = N_CATEGORIES + TARGET_FEATURE_DIM

CHECKPOINT_VERSION = 1


# ----------------------------------------------------------------------
# dense network primitives


@dataclass
class Mlp:
    """Fully connected net, tanh hidden activations, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def load_flat(self, theta: np.ndarray) -> None:
        i = 0
        for w in self.weights:
            w[...] = theta[i : i + w.size].reshape(w.shape)
            i += w.size
        for b in self.biases:
            b[...] = theta[i : i + b.size].reshape(b.shape)
            i += b.size


def mlp_init(sizes: Sequence[int], rng: np.random.Generator) -> Mlp:
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (output, activations). x has shape (batch, in_dim)."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return h, acts


def mlp_backward(net: Mlp, acts: list[np.ndarray], dout: np.ndarray) -> Mlp:
    """Gradients of a scalar objective given d(objective)/d(output)."""
    grads_w: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(net.biases)
    delta = dout
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    return Mlp(grads_w, grads_b)


def _finite(net: Mlp) -> bool:
    return all(np.isfinite(w).all() for w in net.weights) and all(
        np.isfinite(b).all() for b in net.biases
    )


def _apply(net: Mlp, grads: Mlp, lr: float, sign: float) -> None:
    for w, g in zip(net.weights, grads.weights):
        w += sign * lr * g
    for b, g in zip(net.biases, grads.biases):
        b += sign * lr * g


# ----------------------------------------------------------------------
# policy


@dataclass
class PolicyParams:
    net: Mlp
    n_actions: int

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.net.copy(), self.n_actions)


def policy_init(
    obs_dim: int = OBSERVATION_DIM,
    n_actions: int = N_CATEGORIES,
    hidden: Sequence[int] = (64, 64),
    seed: int = 0,
) -> PolicyParams:
    rng = np.random.default_rng(seed)
    return PolicyParams(mlp_init([obs_dim, *hidden, n_actions], rng), n_actions)


def tier_mask(tier: str, n_actions: int = N_CATEGORIES) -> np.ndarray:
    mask = np.zeros(n_actions, dtype=bool)
    indices = GLOBAL_CATEGORY_INDICES if tier == "global" else LOCAL_CATEGORY_INDICES
    mask[list(indices)] = True
    return mask


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities restricted to the masked subset (batched)."""
    neg = np.where(mask, logits, -np.inf)
    zmax = neg.max(axis=-1, keepdims=True)
    shifted = neg - zmax
    expd = np.where(mask, np.exp(shifted), 0.0)
    total = expd.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.where(mask, shifted - np.log(total), -np.inf)


def act(
    policy: PolicyParams,
    obs: Sequence[float],
    rng: np.random.Generator,
    mask: np.ndarray | None = None,
    greedy: bool = False,
) -> tuple[int, float]:
    """Sample an action index from the (masked) softmax; returns (index, log p).

    Greedy mode takes the argmax, lowest index first on ties.
    """
    x = np.asarray(obs, dtype=float).reshape(1, -1)
    logits, _ = mlp_forward(policy.net, x)
    if mask is None:
        mask = np.ones(policy.n_actions, dtype=bool)
    logp = masked_log_softmax(logits, mask.reshape(1, -1))[0]
    probs = np.exp(logp)
    if greedy:
        idx = int(np.argmax(probs))
    else:
        u = rng.random()
        cum = np.cumsum(probs)
        idx = int(np.searchsorted(cum, u, side="right"))
        idx = min(idx, policy.n_actions - 1)
        while not mask[idx]:  # numerical guard at the cumsum tail
            idx -= 1
    return idx, float(logp[idx])


def act_batch(
    policy: PolicyParams,
    obs_batch: np.ndarray,
    masks: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One sampled action index per row; one uniform draw per row."""
    logits, _ = mlp_forward(policy.net, obs_batch)
    logp = masked_log_softmax(logits, masks)
    probs = np.exp(logp)
    cum = np.cumsum(probs, axis=1)
    u = rng.random((len(obs_batch), 1))
    out = (cum < u).sum(axis=1)
    np.minimum(out, policy.n_actions - 1, out=out)
    # Float-tail guard: never land on a masked index.
    for i in np.nonzero(~masks[np.arange(len(out)), out])[0]:
        j = int(out[i])
        while not masks[i, j]:
            j -= 1
        out[i] = j
    return out


# ----------------------------------------------------------------------
# critics


@dataclass
class Critics:
    """Reward head and one head per constraint, same input featurization."""

    reward: Mlp
    safety: Mlp
    obs_dim: int
    feature_dim: int

    def copy(self) -> "Critics":
        return Critics(self.reward.copy(), self.safety.copy(), self.obs_dim, self.feature_dim)


def critics_init(
    obs_dim: int = OBSERVATION_DIM,
    feature_dim: int = ACTION_FEATURE_DIM,
    hidden: Sequence[int] = (64, 64),
    seed: int = 0,
    n_constraints: int = 4,
) -> Critics:
    rng = np.random.default_rng(seed)
    reward = mlp_init([obs_dim + feature_dim, *hidden, 1], rng)
    safety = mlp_init([obs_dim + feature_dim, *hidden, n_constraints], rng)
    return Critics(reward, safety, obs_dim, feature_dim)


def action_feature_vector(
    index: int, target: tuple[float, float, float] = (0.0, 0.0, 0.0)
) -> tuple[float, ...]:
    onehot = [0.0] * N_CATEGORIES
    onehot[index] = 1.0
    return (*onehot, *target)


def concrete_action_features(
    world: World, state: WorldState, drone_id: int, action: Action
) -> tuple[float, ...]:
    """Category one-hot plus normalized target geometry for movement actions."""
    he = world.grid.half_extent
    drone = state.drones[drone_id]
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dest = None
    if action.is_move:
        customer = state.customer(action.customer_id)
        if customer is not None:
            dest = customer.position
    elif action.name == "return_to_base":
        dest = world.grid.warehouse
    if dest is not None:
        dx = (dest[0] - drone.position[0]) / he
        dy = (dest[1] - drone.position[1]) / he
        target = (dx, dy, math.sqrt(dx * dx + dy * dy) / (2.0 * math.sqrt(2.0)))
    return action_feature_vector(category_index(action), target)


def q_values(
    critics: Critics, obs: np.ndarray, features: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([obs, features], axis=1)
    q, _ = mlp_forward(critics.reward, x)
    qc, _ = mlp_forward(critics.safety, x)
    return q[:, 0], qc


# ----------------------------------------------------------------------
# multipliers


@dataclass
class LagrangeState:
    """Nonnegative multipliers, one per constraint, with their ascent step.

    ``ceiling`` bounds the multipliers: above it the penalty term's bootstrap
    noise dwarfs reward differentials and destabilizes the policy update, so
    the projection is onto [0, ceiling] rather than [0, inf).
    """

    lam: np.ndarray = field(default_factory=lambda: np.zeros(4))
    step_size: float = 1e-2
    ceiling: float = 10.0

    def copy(self) -> "LagrangeState":
        return LagrangeState(self.lam.copy(), self.step_size, self.ceiling)


def lagrange_update(
    state: LagrangeState,
    mean_costs: Sequence[float],
    thresholds: Sequence[float] | None = None,
) -> LagrangeState:
    """Projected dual ascent: lam_k <- clip(lam_k + a*(cost_k - b_k), 0, max)."""
    b = np.zeros_like(state.lam) if thresholds is None else np.asarray(thresholds, dtype=float)
    lam = np.clip(
        state.lam + state.step_size * (np.asarray(mean_costs, dtype=float) - b),
        0.0,
        state.ceiling,
    )
    return LagrangeState(lam, state.step_size, state.ceiling)


# ----------------------------------------------------------------------
# gradient machinery


def _masked_entropy(logp: np.ndarray, probs: np.ndarray) -> np.ndarray:
    plogp = np.zeros_like(probs)
    valid = probs > 0.0
    plogp[valid] = probs[valid] * logp[valid]
    return -plogp.sum(axis=1)


def policy_objective(
    policy: PolicyParams,
    obs: np.ndarray,
    action_idx: np.ndarray,
    advantages: np.ndarray,
    masks: np.ndarray,
    entropy_weight: float = 0.0,
) -> float:
    """Mean of log pi(a|s) * advantage (plus an optional entropy bonus);
    the quantity the update ascends."""
    logits, _ = mlp_forward(policy.net, obs)
    logp = masked_log_softmax(logits, masks)
    rows = np.arange(len(obs))
    value = np.mean(logp[rows, action_idx] * advantages)
    if entropy_weight:
        value += entropy_weight * float(np.mean(_masked_entropy(logp, np.exp(logp))))
    return float(value)


def policy_gradient(
    policy: PolicyParams,
    obs: np.ndarray,
    action_idx: np.ndarray,
    advantages: np.ndarray,
    masks: np.ndarray,
    entropy_weight: float = 0.0,
) -> Mlp:
    """Analytic gradient of ``policy_objective`` with respect to the net."""
    logits, acts = mlp_forward(policy.net, obs)
    logp = masked_log_softmax(logits, masks)
    probs = np.exp(logp)
    batch = len(obs)
    dlogits = -probs * advantages[:, None]
    rows = np.arange(batch)
    dlogits[rows, action_idx] += advantages
    if entropy_weight:
        entropy = _masked_entropy(logp, probs)
        safe_logp = np.where(probs > 0.0, logp, 0.0)
        dlogits += entropy_weight * (-probs * (safe_logp + entropy[:, None]))
    dlogits /= batch
    dlogits[~masks] = 0.0
    return mlp_backward(policy.net, acts, dlogits)


def batch_arrays(
    batch: Sequence[RlTransition],
) -> dict[str, np.ndarray]:
    return {
        "obs": np.array([t.obs for t in batch], dtype=float),
        "next_obs": np.array([t.next_obs for t in batch], dtype=float),
        "exec_idx": np.array([t.action_index for t in batch], dtype=int),
        "exec_feat": np.array([t.action_features for t in batch], dtype=float),
        "cand_idx": np.array(
            [t.candidate_index if t.candidate_index >= 0 else t.action_index for t in batch],
            dtype=int,
        ),
        "cand_feat": np.array(
            [t.candidate_features or t.action_features for t in batch], dtype=float
        ),
        "proposed_idx": np.array([t.proposed_index for t in batch], dtype=int),
        "costs": np.array([t.costs for t in batch], dtype=float),
        "reward": np.array([t.reward for t in batch], dtype=float),
        "done": np.array([t.done for t in batch], dtype=float),
        "masks": np.array([tier_mask(t.tier) for t in batch], dtype=bool),
    }


def _state_value_baseline(
    policy: PolicyParams,
    critics: Critics,
    lagrange: LagrangeState,
    arrays: dict[str, np.ndarray],
) -> np.ndarray:
    """Policy-weighted critic value per state: V(s) = sum_a pi(a|s) (Q - lam.Qc).

    A function of the state (and tier mask) only, so subtracting it leaves
    the gradient estimator unbiased while cancelling per-state value offsets.
    """
    obs = arrays["obs"]
    masks = arrays["masks"]
    batch_n, _ = obs.shape
    logits, _ = mlp_forward(policy.net, obs)
    probs = np.exp(masked_log_softmax(logits, masks))
    all_feats = np.array([action_feature_vector(a) for a in range(N_CATEGORIES)])
    wide_obs = np.repeat(obs, N_CATEGORIES, axis=0)
    wide_feats = np.tile(all_feats, (batch_n, 1))
    q_all, qc_all = q_values(critics, wide_obs, wide_feats)
    value = (q_all - qc_all @ lagrange.lam).reshape(batch_n, N_CATEGORIES)
    return (probs * value).sum(axis=1)


def policy_gradient_step(
    policy: PolicyParams,
    critics: Critics,
    lagrange: LagrangeState,
    batch: Sequence[RlTransition],
    lr: float,
    eta: float,
    gamma: float = 0.99,
    rng: np.random.Generator | None = None,
    entropy_weight: float = 0.0,
) -> bool:
    """One ascent step on the penalized objective. Returns False on rejection.

    The gradient sample is the policy's own pre-filter pick (on-policy). Its
    advantage is the reward critic's value minus the multiplier-weighted
    constraint value — estimated as the hinge cost plus the discounted
    bootstrap, i.e. the same quantity the constraint heads regress toward —
    minus the deviation penalty when the pick departed from the planner's
    suggestion, all against a policy-weighted state-value baseline. An
    entropy bonus keeps the distribution from saturating. Non-finite
    gradients reject the step and leave the parameters untouched.
    """
    arrays = batch_arrays(batch)
    q, _ = q_values(critics, arrays["obs"], arrays["cand_feat"])
    next_idx = act_batch(
        policy, arrays["next_obs"], arrays["masks"], rng or np.random.default_rng(0)
    )
    next_feat = np.array([action_feature_vector(int(i)) for i in next_idx])
    _, next_qc = q_values(critics, arrays["next_obs"], next_feat)
    not_done = 1.0 - arrays["done"]
    qc_estimate = arrays["costs"] + gamma * not_done[:, None] * next_qc
    deviation = (arrays["cand_idx"] != arrays["proposed_idx"]).astype(float)
    adv = q - qc_estimate @ lagrange.lam - eta * deviation
    adv = adv - _state_value_baseline(policy, critics, lagrange, arrays)
    grads = policy_gradient(
        policy, arrays["obs"], arrays["cand_idx"], adv, arrays["masks"],
        entropy_weight=entropy_weight,
    )
    if not _finite(grads):
        logger.warning("policy update rejected: non-finite gradient")
        return False
    _apply(policy.net, grads, lr, sign=+1.0)
    return True


def critic_update(
    critics: Critics,
    batch: Sequence[RlTransition],
    gamma: float,
    lr: float,
    policy: PolicyParams | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """One TD(0) regression step for both heads. Returns the two MSE losses.

    Targets bootstrap on the current nets (no target network): the next
    action is drawn from the policy when given, else the stored tier's idle
    stand-in; its features carry no target geometry.
    """
    arrays = batch_arrays(batch)
    batch_n = len(batch)
    if policy is not None:
        next_idx = act_batch(
            policy, arrays["next_obs"], arrays["masks"], rng or np.random.default_rng(0)
        )
    else:
        next_idx = arrays["exec_idx"]
    next_feat = np.array([action_feature_vector(int(i)) for i in next_idx])
    next_q, next_qc = q_values(critics, arrays["next_obs"], next_feat)
    not_done = 1.0 - arrays["done"]
    target_q = arrays["reward"] + gamma * not_done * next_q
    target_qc = arrays["costs"] + gamma * not_done[:, None] * next_qc

    x_r = np.concatenate([arrays["obs"], arrays["exec_feat"]], axis=1)
    pred_r, acts_r = mlp_forward(critics.reward, x_r)
    err_r = pred_r[:, 0] - target_q
    grads_r = mlp_backward(critics.reward, acts_r, (err_r[:, None]) * (2.0 / batch_n))

    x_c = np.concatenate([arrays["obs"], arrays["cand_feat"]], axis=1)
    pred_c, acts_c = mlp_forward(critics.safety, x_c)
    err_c = pred_c - target_qc
    grads_c = mlp_backward(critics.safety, acts_c, err_c * (2.0 / (batch_n * err_c.shape[1])))

    if not (_finite(grads_r) and _finite(grads_c)):
        logger.warning("critic update rejected: non-finite gradient")
        return float("nan"), float("nan")
    _apply(critics.reward, grads_r, lr, sign=-1.0)
    _apply(critics.safety, grads_c, lr, sign=-1.0)
    return float(np.mean(err_r**2)), float(np.mean(err_c**2))


# ----------------------------------------------------------------------
# Monte-Carlo constraint value estimation


class CostEnv(Protocol):
    """Minimal rollout surface for constraint-cost estimation."""

    def reset(self, rng: random.Random) -> object: ...

    def step(self, action: object) -> tuple[object, float, bool]: ...


def estimate_safety_value(
    env: CostEnv,
    policy_fn: Callable[[object, random.Random], object],
    gamma: float,
    n_rollouts: int,
    horizon: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean discounted rollout cost and its standard error."""
    returns = []
    for i in range(n_rollouts):
        rng = random.Random(f"{seed}:{i}")
        obs = env.reset(rng)
        total = 0.0
        discount = 1.0
        for _ in range(horizon):
            obs, cost, done = env.step(policy_fn(obs, rng))
            total += discount * cost
            discount *= gamma
            if done:
                break
        returns.append(total)
    arr = np.asarray(returns)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return mean, stderr


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: str | Path,
    policy: PolicyParams,
    critics: Critics,
    lagrange: LagrangeState,
) -> None:
    """Versioned npz: every weight/bias array plus the multiplier vector."""
    arrays: dict[str, np.ndarray] = {"version": np.array([CHECKPOINT_VERSION])}
    for tag, net in (("policy", policy.net), ("reward", critics.reward), ("safety", critics.safety)):
        for i, w in enumerate(net.weights):
            arrays[f"{tag}_w{i}"] = w
        for i, b in enumerate(net.biases):
            arrays[f"{tag}_b{i}"] = b
    arrays["lambda"] = lagrange.lam
    arrays["meta"] = np.array(
        [policy.n_actions, critics.obs_dim, critics.feature_dim, lagrange.step_size]
    )
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, Critics, LagrangeState]:
    data = np.load(path)
    if int(data["version"][0]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data['version'][0]}")

    def read(tag: str) -> Mlp:
        weights = []
        biases = []
        i = 0
        while f"{tag}_w{i}" in data:
            weights.append(data[f"{tag}_w{i}"])
            biases.append(data[f"{tag}_b{i}"])
            i += 1
        return Mlp(weights, biases)

    n_actions, obs_dim, feature_dim, lam_step = data["meta"]
    policy = PolicyParams(read("policy"), int(n_actions))
    critics = Critics(read("reward"), read("safety"), int(obs_dim), int(feature_dim))
    lagrange = LagrangeState(data["lambda"], float(lam_step))
    return policy, critics, lagrange
