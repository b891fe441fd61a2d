"""Dual replay storage: learning transitions and planner decision memory.

``ReplayBuffer`` is a bounded FIFO ring used for both streams. The learning
buffer stores full transitions including the per-constraint hinge costs and
the planner's suggested action (both are needed by the critic and deviation
terms of the update rule). The planner buffer stores proposal/override
records that feed back into prompting and mock-planner target exclusion.
"""

from __future__ import annotations

import pickle
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Generic, Iterator, Sequence, TypeVar

from .actions import Action

T = TypeVar("T")

SNAPSHOT_MAGIC = b"SFRB"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class RlTransition:
    """One (s, a, r, s') tuple extended for the constrained update rule.

    ``costs`` are the hinge margins of the pre-filter candidate action (the
    constraint critic learns what proposals would cost, not just what safe
    executions did), ``proposed_index`` is the planner's suggestion (anchor of
    the deviation penalty), and ``tier`` selects the action subset the policy
    distribution was masked to.
    """

    obs: tuple[float, ...]
    action_index: int
    reward: float
    next_obs: tuple[float, ...]
    costs: tuple[float, float, float, float]
    done: bool
    proposed_index: int
    action_features: tuple[float, ...] = ()
    candidate_index: int = -1
    candidate_features: tuple[float, ...] = ()
    tier: str = "local"


@dataclass(frozen=True)
class PlannerRecord:
    """Proposal bookkeeping: what was suggested, and whether it survived."""

    drone_id: int
    t: int
    state_summary: str
    proposed: Action
    executed: Action
    override_flag: bool
    fault_class: str | None = None

    def __post_init__(self) -> None:
        if self.override_flag and self.fault_class is None:
            raise ValueError("overridden records must carry a fault class")
        if not self.override_flag and self.fault_class is not None:
            raise ValueError("fault class only accompanies overrides")


class ReplayBuffer(Generic[T]):
    """Bounded FIFO ring; eviction is strictly oldest-first."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._slots: list[T] = []
        self._head = 0  # index of the oldest entry once the ring is full

    def __len__(self) -> int:
        return len(self._slots)

    def push(self, entry: T) -> None:
        if len(self._slots) < self.capacity:
            self._slots.append(entry)
        else:
            self._slots[self._head] = entry
            self._head = (self._head + 1) % self.capacity

    def entries(self) -> list[T]:
        """Oldest to newest."""
        return self._slots[self._head:] + self._slots[: self._head]

    def __iter__(self) -> Iterator[T]:
        return iter(self.entries())

    def sample_minibatch(self, n: int, rng: random.Random) -> list[T]:
        """Uniform sample without replacement; deterministic given rng state."""
        if n > len(self._slots):
            raise ValueError(f"cannot sample {n} from {len(self._slots)} entries")
        return rng.sample(self.entries(), n)

    def recent_window(self, k: int) -> list[T]:
        """The newest min(k, len) entries, newest-last."""
        if k <= 0:
            return []
        entries = self.entries()
        return entries[-k:]

    # ------------------------------------------------------------------
    # snapshot format: magic, version u32, capacity u64, count u64, then a
    # pickle of the entry list (oldest-first).

    def save(self, path: str | Path) -> None:
        entries = self.entries()
        payload = pickle.dumps(entries, protocol=4)
        with open(path, "wb") as f:
            f.write(SNAPSHOT_MAGIC)
            f.write(struct.pack("<IQQ", SNAPSHOT_VERSION, self.capacity, len(entries)))
            f.write(payload)

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer[T]":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != SNAPSHOT_MAGIC:
                raise ValueError(f"not a replay snapshot: bad magic {magic!r}")
            version, capacity, count = struct.unpack("<IQQ", f.read(20))
            if version != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            entries: Sequence[T] = pickle.loads(f.read())
        if len(entries) != count:
            raise ValueError("snapshot count mismatch")
        buf: ReplayBuffer[T] = cls(capacity)
        for e in entries:
            buf.push(e)
        return buf
