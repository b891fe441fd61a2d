"""Rotorcraft power model and battery accounting.

Power draws decompose into blade-profile, induced and parasite terms.
``AircraftParams`` carries the tabulated constants of the reference vehicle;
the tabulated values are treated as ground truth even where the catalogue's
own derivation formulas disagree with them (e.g. the hover-induced velocity
and tip speed), because the power equations were evidently evaluated with the
tabulated numbers.

All powers are in watts, energies in kWh (1 kWh = 3.6e6 J exactly), SOC is a
fraction of battery capacity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from . import kernels

JOULES_PER_KWH = 3.6e6


@dataclass(frozen=True)
class AircraftParams:
    """Constant set governing all power computations.

    Defaults are the reference vehicle's tabulated values. All fields must be
    strictly positive; ``max_packages`` is an integer >= 1.
    """

    max_packages: int = 4
    cruise_speed: float = 73.762          # m/s
    mass: float = 1815.0                  # kg
    weight: float = 17799.0               # N
    rotor_radius: float = 1.45            # m
    disc_area: float = 6.61               # m^2
    blade_count: int = 5
    solidity: float = 0.2449
    blade_angular_velocity: float = 78.0  # rad/s
    tip_speed: float = 112.776            # m/s
    air_density: float = 1.225            # kg/m^3
    fuselage_drag_ratio: float = 0.01
    hover_induced_velocity: float = 26.45  # m/s
    profile_drag_coeff: float = 0.045
    induced_power_factor: float = 0.052

    def __post_init__(self) -> None:
        if not (isinstance(self.max_packages, int) and self.max_packages >= 1):
            raise ValueError("max_packages must be an integer >= 1")
        for name in (
            "cruise_speed", "mass", "weight", "rotor_radius", "disc_area",
            "blade_count", "solidity", "blade_angular_velocity", "tip_speed",
            "air_density", "fuselage_drag_ratio", "hover_induced_velocity",
            "profile_drag_coeff", "induced_power_factor",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class BatteryModel:
    """Battery capacity and charging characteristics.

    Defaults: 150 kWh capacity, at most 30 kWh added per charge cycle, 360 kW
    charger (one cycle therefore takes exactly 300 s and adds 20% SOC).
    ``reserve_fraction`` is the SOC floor the safety layer protects.
    """

    capacity_kwh: float = 150.0
    max_charge_per_journey_kwh: float = 30.0
    charger_power_kw: float = 360.0
    reserve_fraction: float = 0.10

    def __post_init__(self) -> None:
        if not 0 < self.max_charge_per_journey_kwh <= self.capacity_kwh:
            raise ValueError("need 0 < max_charge_per_journey_kwh <= capacity_kwh")
        if not self.charger_power_kw > 0:
            raise ValueError("charger_power_kw must be strictly positive")
        if not 0.0 <= self.reserve_fraction <= 1.0:
            raise ValueError("reserve_fraction must be in [0, 1]")


@dataclass(frozen=True)
class Soc:
    """State of charge as a fraction of capacity, clamped to [0, 1]."""

    fraction: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "fraction", min(1.0, max(0.0, self.fraction)))


@lru_cache(maxsize=None)
def hover_power_terms(params: AircraftParams) -> tuple[float, float]:
    """(blade-profile, induced) hover power in W."""
    return kernels.hover_terms(
        params.profile_drag_coeff,
        params.air_density,
        params.solidity,
        params.disc_area,
        params.blade_angular_velocity,
        params.rotor_radius,
        params.induced_power_factor,
        params.weight,
    )


def hover_power(params: AircraftParams) -> float:
    """Total power draw of stationary flight, in W."""
    blade, induced = hover_power_terms(params)
    return blade + induced


def propulsion_power_terms(v: float, params: AircraftParams) -> tuple[float, float, float]:
    """(induced, blade-profile, parasite) power in W at forward speed v >= 0."""
    if v < 0:
        raise ValueError("speed must be nonnegative")
    blade_p0, induced_pi = hover_power_terms(params)
    return kernels.propulsion_terms(
        v,
        blade_p0,
        induced_pi,
        params.hover_induced_velocity,
        params.tip_speed,
        params.fuselage_drag_ratio,
        params.air_density,
        params.solidity,
        params.disc_area,
    )


def propulsion_power(v: float, params: AircraftParams) -> float:
    """Total power draw of forward flight at speed v, in W.

    At v=0 the induced and blade factors are exactly 1 and the parasite term
    0, so this equals ``hover_power``.
    """
    induced, blade, parasite = propulsion_power_terms(v, params)
    return induced + blade + parasite


@lru_cache(maxsize=None)
def cruise_power(params: AircraftParams) -> float:
    return propulsion_power(params.cruise_speed, params)


@lru_cache(maxsize=None)
def kwh_per_meter(params: AircraftParams) -> float:
    """Cruise energy intensity: kWh consumed per meter flown."""
    return cruise_power(params) / params.cruise_speed / JOULES_PER_KWH


def energy_for_leg(distance_m: float, params: AircraftParams) -> float:
    """kWh to fly ``distance_m`` meters at cruise speed. Linear in distance."""
    if distance_m < 0:
        raise ValueError("distance must be nonnegative")
    return distance_m * kwh_per_meter(params)


def hover_energy(duration_s: float, params: AircraftParams) -> float:
    """kWh consumed hovering for ``duration_s`` seconds."""
    if duration_s < 0:
        raise ValueError("duration must be nonnegative")
    return hover_power(params) * duration_s / JOULES_PER_KWH


def apply_charge(soc: Soc, duration_s: float, battery: BatteryModel) -> Soc:
    """One charge cycle: add energy at charger power for ``duration_s``.

    The added energy is capped at ``max_charge_per_journey_kwh`` per call and
    the result clamps at full charge.
    """
    if duration_s < 0:
        raise ValueError("duration must be nonnegative")
    added_kwh = min(
        battery.charger_power_kw * duration_s / 3600.0,
        battery.max_charge_per_journey_kwh,
    )
    return Soc(soc.fraction + added_kwh / battery.capacity_kwh)
