"""Sectored delivery grid: spawning, drone kinematics, rewards, episodes.

The environment advances in fixed decision intervals. Per step each active
drone executes one command: sector assignments take effect instantly (and
load packages when the drone sits at the warehouse), movement commands fly
the drone at cruise speed toward the target, idling airborne burns hover
power, idling on the warehouse pad is free. Battery state is debited through
the energy model; a drone whose charge hits zero is inactive for the rest of
the episode and its unserved customers return to the pending pool.

Determinism contract: identical (seed, config, action sequence) produces an
identical trajectory, bit for bit.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .actions import Action, SECTORS, Sector, sector_of
from .energy import AircraftParams, BatteryModel, hover_power, kwh_per_meter
from .routing import leg_length, plan_route

Point = tuple[float, float]


@dataclass(frozen=True)
class GridConfig:
    half_extent: float = 500.0
    warehouse: Point = (0.0, 0.0)
    time_step: float = 1.0
    max_steps: int = 300
    drone_count: int = 10
    customers_per_sector: tuple[int, int] = (3, 7)
    # Divisor for the per-sector pending counts in observations; None means
    # the episode's total spawn count.
    pending_normalizer: float | None = None

    def __post_init__(self) -> None:
        if not self.half_extent > 0:
            raise ValueError("half_extent must be strictly positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.drone_count < 1:
            raise ValueError("drone_count must be >= 1")
        if not self.time_step > 0:
            raise ValueError("time_step must be strictly positive")
        lo, hi = self.customers_per_sector
        if not (0 <= lo <= hi):
            raise ValueError("customers_per_sector must satisfy 0 <= lo <= hi")


@dataclass(frozen=True)
class RewardWeights:
    """r = delivery*(served) - distance*(meters flown) - battery*(kWh used)."""

    delivery: float = 10.0
    distance: float = 0.01
    battery: float = 0.05


class CustomerStatus(Enum):
    PENDING = "pending"
    ASSIGNED = "assigned"
    SERVED = "served"


@dataclass
class Customer:
    id: int
    position: Point
    sector: Sector
    status: CustomerStatus = CustomerStatus.PENDING
    assigned_to: int | None = None

    @property
    def sector_index(self) -> int:
        return SECTORS.index(self.sector)


class DroneMode(Enum):
    GROUNDED = "grounded"
    DELIVERING = "delivering"   # airborne, heading to (or holding at) a customer
    TRANSIT = "transit"         # airborne, heading back to the warehouse
    CHARGING = "charging"
    DEPLETED = "depleted"


@dataclass
class DroneState:
    id: int
    position: Point
    soc: float = 1.0
    carried_packages: int = 0
    mode: DroneMode = DroneMode.GROUNDED
    target: Point | None = None
    target_customer: int | None = None
    sector_assignment: Sector | None = None
    cumulative_distance: float = 0.0
    kwh_consumed: float = 0.0
    kwh_charged: float = 0.0

    @property
    def airborne(self) -> bool:
        if self.mode in (DroneMode.DELIVERING, DroneMode.TRANSIT):
            return True
        if self.mode == DroneMode.DEPLETED:
            return self.target is not None
        return False

    @property
    def active(self) -> bool:
        return self.mode != DroneMode.DEPLETED


@dataclass
class WorldState:
    t: int
    drones: list[DroneState]
    customers: list[Customer]
    rng: random.Random
    total_spawned: int
    spawned_per_sector: dict[Sector, int]
    # Incrementally maintained views of the customer list; every status
    # transition below keeps them in sync (the invariant tests recompute them
    # from scratch and compare).
    pending_counts: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    assignments: dict[int, list[int]] = field(default_factory=dict)

    def customer(self, customer_id: int) -> Customer | None:
        if isinstance(customer_id, int) and 0 <= customer_id < len(self.customers):
            return self.customers[customer_id]
        return None

    def pending_by_sector(self) -> dict[Sector, int]:
        return {s: self.pending_counts[i] for i, s in enumerate(SECTORS)}

    def assigned_drones_by_sector(self) -> dict[Sector, int]:
        counts = {s: 0 for s in SECTORS}
        for d in self.drones:
            if d.active and d.sector_assignment is not None:
                counts[d.sector_assignment] += 1
        return counts

    def assigned_unserved(self, drone_id: int) -> list[Customer]:
        ids = self.assignments.get(drone_id)
        if not ids:
            return []
        return [self.customers[i] for i in ids]

    def assign(self, customer: Customer, drone_id: int) -> None:
        customer.status = CustomerStatus.ASSIGNED
        customer.assigned_to = drone_id
        self.pending_counts[customer.sector_index] -= 1
        self.assignments.setdefault(drone_id, []).append(customer.id)

    def release(self, customer: Customer) -> None:
        drone_id = customer.assigned_to
        customer.status = CustomerStatus.PENDING
        customer.assigned_to = None
        self.pending_counts[customer.sector_index] += 1
        if drone_id is not None:
            self.assignments[drone_id].remove(customer.id)

    def mark_served(self, customer: Customer, drone_id: int) -> None:
        if customer.status == CustomerStatus.PENDING:
            self.pending_counts[customer.sector_index] -= 1
        elif customer.assigned_to is not None:
            self.assignments[customer.assigned_to].remove(customer.id)
        customer.status = CustomerStatus.SERVED
        customer.assigned_to = drone_id

    def release_all(self, drone_id: int) -> int:
        ids = self.assignments.get(drone_id, [])
        released = len(ids)
        for cid in list(ids):
            self.release(self.customers[cid])
        return released

    def snapshot(self) -> dict:
        """Canonical, JSON-able rendering used by the determinism tests."""
        return {
            "t": self.t,
            "rng": list(map(repr, self.rng.getstate()[1])),
            "total_spawned": self.total_spawned,
            "drones": [
                {
                    "id": d.id,
                    "pos": [repr(d.position[0]), repr(d.position[1])],
                    "soc": repr(d.soc),
                    "carried": d.carried_packages,
                    "mode": d.mode.value,
                    "target": None if d.target is None else [repr(d.target[0]), repr(d.target[1])],
                    "target_customer": d.target_customer,
                    "sector": None if d.sector_assignment is None else d.sector_assignment.value,
                    "dist": repr(d.cumulative_distance),
                }
                for d in self.drones
            ],
            "customers": [
                {
                    "id": c.id,
                    "pos": [repr(c.position[0]), repr(c.position[1])],
                    "sector": c.sector.value,
                    "status": c.status.value,
                    "assigned_to": c.assigned_to,
                }
                for c in self.customers
            ],
        }


@dataclass(frozen=True)
class Observation:
    """Per-drone view: everything the planners and the policy see.

    ``sector_drone_counts`` is the fleet's current per-sector assignment
    load (fraction of the fleet); without it the constraint critic cannot
    tell a crowded sector command from a balanced one.
    """

    normalized_position: tuple[float, float]
    battery: float
    sector_pending_counts: tuple[float, float, float, float]
    sector_assignment_onehot: tuple[float, float, float, float, float]
    sector_drone_counts: tuple[float, float, float, float]
    normalized_cumulative_distance: float

    def vector(self) -> tuple[float, ...]:
        return (
            *self.normalized_position,
            self.battery,
            *self.sector_pending_counts,
            *self.sector_assignment_onehot,
            *self.sector_drone_counts,
            self.normalized_cumulative_distance,
        )


OBSERVATION_DIM = 17


@dataclass(frozen=True)
class Event:
    kind: str
    t: int
    drone_id: int | None = None
    customer_id: int | None = None
    detail: str | None = None


@dataclass
class DroneStepRecord:
    """One (step, drone) outcome row; feeds rewards, metrics and the log."""

    t: int
    drone_id: int
    action: Action
    reward: float = 0.0
    delivered: int = 0
    distance: float = 0.0
    kwh: float = 0.0
    overridden: bool = False
    x: float = 0.0
    y: float = 0.0
    soc: float = 0.0
    mode: str = ""

    def log_row(self) -> dict:
        return {
            "t": self.t,
            "drone_id": self.drone_id,
            "x": self.x,
            "y": self.y,
            "soc": self.soc,
            "mode": self.mode,
            "action": self.action.describe(),
            "overridden": self.overridden,
            "reward": self.reward,
            "delivered": self.delivered,
        }


def spawn_customers(rng: random.Random, grid: GridConfig) -> list[Customer]:
    """Draw customers uniformly inside each sector wedge clipped to the grid.

    Per-sector counts are uniform integers in ``customers_per_sector``.
    Rejection sampling from the bounding square keeps the distribution exactly
    uniform over each clipped wedge.
    """
    he = grid.half_extent
    customers: list[Customer] = []
    next_id = 0
    lo, hi = grid.customers_per_sector
    for sector in SECTORS:
        count = rng.randint(lo, hi) if hi > lo else lo
        drawn = 0
        while drawn < count:
            x = rng.uniform(-he, he)
            y = rng.uniform(-he, he)
            if sector_of(x, y) is sector:
                customers.append(Customer(next_id, (x, y), sector))
                next_id += 1
                drawn += 1
    return customers


class World:
    """Environment dynamics bound to one (grid, aircraft, battery) setup."""

    def __init__(
        self,
        grid: GridConfig | None = None,
        aircraft: AircraftParams | None = None,
        battery: BatteryModel | None = None,
        rewards: RewardWeights | None = None,
    ) -> None:
        self.grid = grid or GridConfig()
        self.aircraft = aircraft or AircraftParams()
        self.battery = battery or BatteryModel()
        self.rewards = rewards or RewardWeights()
        self.kwh_per_meter = kwh_per_meter(self.aircraft)
        self.hover_kwh_per_s = hover_power(self.aircraft) / 3.6e6
        self.step_range = self.aircraft.cruise_speed * self.grid.time_step
        self.distance_normalizer = self.step_range * self.grid.max_steps

    # ------------------------------------------------------------------
    # episode lifecycle

    def init_episode(self, seed: int | str) -> WorldState:
        """Fresh fleet on the pad, full batteries, new customer draw."""
        rng = random.Random(seed)
        customers = spawn_customers(rng, self.grid)
        per_sector = {s: 0 for s in SECTORS}
        for c in customers:
            per_sector[c.sector] += 1
        drones = [
            DroneState(i, self.grid.warehouse) for i in range(self.grid.drone_count)
        ]
        return WorldState(
            t=0,
            drones=drones,
            customers=customers,
            rng=rng,
            total_spawned=len(customers),
            spawned_per_sector=per_sector,
            pending_counts=[per_sector[s] for s in SECTORS],
        )

    def is_terminal(self, state: WorldState) -> bool:
        if state.t >= self.grid.max_steps:
            return True
        if sum(state.pending_counts) > 0:
            return False
        return not any(state.assignments.values())

    # ------------------------------------------------------------------
    # observation

    def observe(self, state: WorldState, drone_id: int) -> Observation:
        if not 0 <= drone_id < len(state.drones):
            raise KeyError(f"unknown drone {drone_id}")
        d = state.drones[drone_id]
        he = self.grid.half_extent
        norm = self.grid.pending_normalizer or max(1, state.total_spawned)
        onehot = [0.0] * 5
        if d.sector_assignment is None:
            onehot[4] = 1.0
        else:
            onehot[SECTORS.index(d.sector_assignment)] = 1.0
        fleet = state.assigned_drones_by_sector()
        return Observation(
            normalized_position=(d.position[0] / he, d.position[1] / he),
            battery=d.soc,
            sector_pending_counts=tuple(n / norm for n in state.pending_counts),
            sector_assignment_onehot=tuple(onehot),
            sector_drone_counts=tuple(
                fleet[s] / self.grid.drone_count for s in SECTORS
            ),
            normalized_cumulative_distance=min(
                1.0, d.cumulative_distance / self.distance_normalizer
            ),
        )

    # ------------------------------------------------------------------
    # stepping

    def step(
        self,
        state: WorldState,
        actions: Mapping[int, Action],
        overrides: Mapping[int, "object"] | None = None,
    ) -> tuple[WorldState, list[DroneStepRecord], list[Event]]:
        """Advance one decision interval executing one action per drone.

        ``overrides`` maps drone id to the filter outcome for echo into the
        event stream; the actions given are the executed ones.
        """
        records: list[DroneStepRecord] = []
        events: list[Event] = []
        for drone in state.drones:
            action = actions.get(drone.id)
            if action is None:
                continue
            if not drone.active:
                events.append(
                    Event("invalid_action", state.t, drone.id, detail="drone depleted")
                )
                continue
            if action.is_pass:
                raise ValueError("pass token cannot be executed; substitute before stepping")
            rec = DroneStepRecord(state.t, drone.id, action)
            self._execute(state, drone, action, rec, events)
            rec.reward = (
                self.rewards.delivery * rec.delivered
                - self.rewards.distance * rec.distance
                - self.rewards.battery * rec.kwh
            )
            rec.x, rec.y = drone.position
            rec.soc = drone.soc
            rec.mode = drone.mode.value
            records.append(rec)
        if overrides:
            for drone_id, outcome in overrides.items():
                if getattr(outcome, "overridden", False):
                    events.append(
                        Event(
                            "overridden",
                            state.t,
                            drone_id,
                            detail=getattr(outcome, "fault_class", None),
                        )
                    )
                    for rec in records:
                        if rec.drone_id == drone_id:
                            rec.overridden = True
        state.t += 1
        return state, records, events

    def reward_of(self, delivered: int, distance_m: float, kwh: float) -> float:
        return (
            self.rewards.delivery * delivered
            - self.rewards.distance * distance_m
            - self.rewards.battery * kwh
        )

    # ------------------------------------------------------------------
    # internals

    def _execute(
        self,
        state: WorldState,
        drone: DroneState,
        action: Action,
        rec: DroneStepRecord,
        events: list[Event],
    ) -> None:
        at_base = drone.position == self.grid.warehouse and not drone.airborne
        if action.tier == "global":
            if action.sector is not None:
                drone.sector_assignment = action.sector
                if at_base:
                    self._load_packages(state, drone, action.sector)
            # Global idle (or a sector command issued airborne) holds position.
            if drone.airborne:
                self._hover(state, drone, self.grid.time_step, rec, events)
            elif drone.mode == DroneMode.CHARGING:
                self._charge(state, drone, events)
            return

        # local tier
        if action.is_move:
            customer = state.customer(action.customer_id)
            if customer is None:
                events.append(
                    Event(
                        "invalid_action",
                        state.t,
                        drone.id,
                        action.customer_id,
                        detail="no such customer",
                    )
                )
                if drone.airborne:
                    self._hover(state, drone, self.grid.time_step, rec, events)
                return
            drone.mode = DroneMode.DELIVERING
            drone.target = customer.position
            drone.target_customer = customer.id
            self._fly(state, drone, rec, events)
        elif action.name == "return_to_base":
            if at_base or drone.mode == DroneMode.CHARGING:
                # Already home: behaves like grounded idle.
                if drone.mode == DroneMode.CHARGING:
                    self._charge(state, drone, events)
                return
            drone.mode = DroneMode.TRANSIT
            drone.target = self.grid.warehouse
            drone.target_customer = None
            self._fly(state, drone, rec, events)
        else:  # local idle
            if drone.airborne:
                self._hover(state, drone, self.grid.time_step, rec, events)
            elif drone.mode == DroneMode.CHARGING:
                self._charge(state, drone, events)

    def _load_packages(self, state: WorldState, drone: DroneState, sector: Sector) -> None:
        """Claim up to the package limit of pending customers in the sector.

        Farthest-feasible first (fresh charge goes to the longest trips, so
        distant customers are not left to a drained fleet), ties on id, and
        only customers whose round trip is battery-feasible from the drone's
        current charge: an under-charged drone claims nothing and keeps
        charging rather than sitting on claims it cannot serve. Loading only
        happens on the pad, so the fleet hub is the single pickup point.
        """
        capacity = self.aircraft.max_packages - drone.carried_packages
        if capacity <= 0:
            return
        if state.pending_counts[SECTORS.index(sector)] == 0:
            if not state.assigned_unserved(drone.id):
                drone.sector_assignment = None
            return
        pending = [
            c
            for c in state.customers
            if c.status == CustomerStatus.PENDING and c.sector is sector
        ]
        pending.sort(key=lambda c: (-leg_length(self.grid.warehouse, c.position), c.id))
        budget_kwh = (drone.soc - self.battery.reserve_fraction) * self.battery.capacity_kwh
        hover_step_kwh = self.hover_kwh_per_s * self.grid.time_step
        base = self.grid.warehouse
        taken: list[Customer] = []
        for c in pending:
            if len(taken) >= capacity:
                break
            tour = plan_route(
                base, [(x.id, x.position) for x in taken + [c]], return_to=base
            )
            need = tour.total_cost * self.kwh_per_meter + hover_step_kwh * (len(taken) + 1)
            if need > budget_kwh:
                continue
            taken.append(c)
        for c in taken:
            state.assign(c, drone.id)
            drone.carried_packages += 1
        if not taken and not state.assigned_unserved(drone.id):
            drone.sector_assignment = None

    def _consume(
        self,
        state: WorldState,
        drone: DroneState,
        kwh: float,
        rec: DroneStepRecord,
        events: list[Event],
    ) -> float:
        """Debit up to ``kwh``; returns what was actually available and spent."""
        available = drone.soc * self.battery.capacity_kwh
        spent = min(kwh, available)
        drone.soc -= spent / self.battery.capacity_kwh
        drone.kwh_consumed += spent
        rec.kwh += spent
        if spent >= available - 1e-15 and kwh >= available:
            drone.soc = 0.0
            self._deplete(state, drone, events)
        return spent

    def _deplete(self, state: WorldState, drone: DroneState, events: list[Event]) -> None:
        drone.mode = DroneMode.DEPLETED
        events.append(Event("depleted", state.t, drone.id))
        released = state.release_all(drone.id)
        if released:
            events.append(
                Event("customers_released", state.t, drone.id, detail=str(released))
            )
        drone.carried_packages = 0

    def _hover(
        self,
        state: WorldState,
        drone: DroneState,
        duration_s: float,
        rec: DroneStepRecord,
        events: list[Event],
    ) -> None:
        if duration_s <= 0:
            return
        self._consume(state, drone, self.hover_kwh_per_s * duration_s, rec, events)

    def _charge(self, state: WorldState, drone: DroneState, events: list[Event]) -> None:
        """One step of pad charging; cycles continue back-to-back until full."""
        room_kwh = (1.0 - drone.soc) * self.battery.capacity_kwh
        added = min(
            self.battery.charger_power_kw * self.grid.time_step / 3600.0, room_kwh
        )
        drone.soc = min(1.0, drone.soc + added / self.battery.capacity_kwh)
        drone.kwh_charged += added
        if drone.soc >= 1.0:
            drone.soc = 1.0
            drone.mode = DroneMode.GROUNDED
            events.append(Event("charged", state.t, drone.id))

    def _fly(
        self,
        state: WorldState,
        drone: DroneState,
        rec: DroneStepRecord,
        events: list[Event],
    ) -> None:
        target = drone.target
        assert target is not None
        remaining = leg_length(drone.position, target)
        step_dist = min(self.step_range, remaining)
        moved = 0.0
        if step_dist > 0:
            want_kwh = step_dist * self.kwh_per_meter
            spent = self._consume(state, drone, want_kwh, rec, events)
            if spent < want_kwh:
                step_dist = spent / self.kwh_per_meter  # ran dry mid-leg
            ux = (target[0] - drone.position[0]) / remaining
            uy = (target[1] - drone.position[1]) / remaining
            drone.position = (
                drone.position[0] + ux * step_dist,
                drone.position[1] + uy * step_dist,
            )
            moved = step_dist
            drone.cumulative_distance += moved
            rec.distance += moved
        if not drone.active:
            return
        if remaining <= self.step_range:  # arrival tolerance: snap this step
            drone.position = target
            leftover_s = self.grid.time_step - (
                moved / self.aircraft.cruise_speed if self.aircraft.cruise_speed else 0.0
            )
            self._arrive(state, drone, rec, events)
            if drone.active and drone.airborne and leftover_s > 0:
                self._hover(state, drone, leftover_s, rec, events)

    def _arrive(
        self,
        state: WorldState,
        drone: DroneState,
        rec: DroneStepRecord,
        events: list[Event],
    ) -> None:
        if drone.mode == DroneMode.TRANSIT:  # landed at the warehouse
            drone.target = None
            drone.target_customer = None
            # A landing closes the journey: whatever was not served goes back
            # to the pool for redistribution, and the hold is emptied.
            released = state.release_all(drone.id)
            if released:
                events.append(
                    Event("customers_released", state.t, drone.id, detail=str(released))
                )
            drone.carried_packages = 0
            drone.sector_assignment = None
            drone.mode = (
                DroneMode.CHARGING if drone.soc < 1.0 else DroneMode.GROUNDED
            )
            return
        customer = (
            state.customer(drone.target_customer)
            if drone.target_customer is not None
            else None
        )
        drone.target = None
        drone.target_customer = None
        if (
            customer is not None
            and customer.status != CustomerStatus.SERVED
            and customer.assigned_to in (None, drone.id)
            and drone.carried_packages > 0
        ):
            state.mark_served(customer, drone.id)
            drone.carried_packages -= 1
            rec.delivered += 1
            events.append(Event("delivered", state.t, drone.id, customer.id))
        # Otherwise the trip delivered nothing (already served, someone
        # else's package, or empty hold); the drone holds position airborne.
