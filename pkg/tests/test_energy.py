"""Power model and battery accounting against an independent scalar oracle.

The oracle below recomputes every power term with 50-digit Decimal
arithmetic, entirely apart from the package's kernel path.
"""

from decimal import Decimal, getcontext

import pytest
from hypothesis import given, strategies as st

from safefleet.energy import (
    AircraftParams,
    BatteryModel,
    Soc,
    apply_charge,
    energy_for_leg,
    hover_power,
    hover_power_terms,
    propulsion_power,
    propulsion_power_terms,
)

getcontext().prec = 50


def decimal_oracle(v: float | None = None) -> dict[str, Decimal]:
    """High-precision recomputation of the hover/cruise power decomposition."""
    cd = Decimal("0.045")
    rho = Decimal("1.225")
    sol = Decimal("0.2449")
    area = Decimal("6.61")
    omega = Decimal("78")
    radius = Decimal("1.45")
    k = Decimal("0.052")
    weight = Decimal("17799")
    v0 = Decimal("26.45")
    u_tip = Decimal("112.776")
    d0 = Decimal("0.01")

    blade = cd / 8 * rho * sol * area * omega**3 * radius**3
    induced = (1 + k) * weight * weight.sqrt() / (2 * rho * area).sqrt()
    out = {"blade": blade, "induced": induced, "hover": blade + induced}
    if v is not None:
        dv = Decimal(repr(v))
        ratio2 = dv * dv / (2 * v0 * v0)
        factor = ((1 + dv**4 / (4 * v0**4)).sqrt() - ratio2).sqrt()
        out["p_induced"] = induced * factor
        out["p_blade"] = blade * (1 + 3 * dv * dv / (u_tip * u_tip))
        out["p_parasite"] = Decimal("0.5") * d0 * rho * sol * area * dv**3
        out["p_total"] = out["p_induced"] + out["p_blade"] + out["p_parasite"]
    return out


PARAMS = AircraftParams()
SIX_DIGITS = 5e-7  # relative tolerance for a 6-significant-digit match


class TestHoverPower:
    def test_terms_match_decimal_oracle(self):
        oracle = decimal_oracle()
        blade, induced = hover_power_terms(PARAMS)
        assert blade == pytest.approx(float(oracle["blade"]), rel=SIX_DIGITS)
        assert induced == pytest.approx(float(oracle["induced"]), rel=SIX_DIGITS)
        assert hover_power(PARAMS) == pytest.approx(float(oracle["hover"]), rel=SIX_DIGITS)

    def test_magnitudes(self):
        blade, induced = hover_power_terms(PARAMS)
        assert blade == pytest.approx(1.61375e4, rel=1e-4)
        assert induced == pytest.approx(6.20762e5, rel=1e-4)
        assert hover_power(PARAMS) == pytest.approx(6.36900e5, rel=1e-4)

    def test_zero_drag_leaves_only_induced_term(self):
        import dataclasses

        # C_d must stay positive per the invariants; approach zero instead.
        params = dataclasses.replace(PARAMS, profile_drag_coeff=1e-300)
        blade, induced = hover_power_terms(params)
        assert blade == pytest.approx(0.0, abs=1e-280)
        assert hover_power(params) == pytest.approx(induced)

    def test_blade_term_cubic_in_rotor_speed(self):
        import dataclasses

        doubled = dataclasses.replace(
            PARAMS, blade_angular_velocity=2 * PARAMS.blade_angular_velocity
        )
        blade1, induced1 = hover_power_terms(PARAMS)
        blade2, induced2 = hover_power_terms(doubled)
        assert blade2 == pytest.approx(8 * blade1, rel=1e-12)
        assert induced2 == induced1


class TestPropulsionPower:
    def test_at_zero_speed_equals_hover(self):
        assert propulsion_power(0.0, PARAMS) == pytest.approx(
            hover_power(PARAMS), rel=1e-12
        )

    def test_terms_at_cruise_match_decimal_oracle(self):
        oracle = decimal_oracle(PARAMS.cruise_speed)
        induced, blade, parasite = propulsion_power_terms(PARAMS.cruise_speed, PARAMS)
        assert induced == pytest.approx(float(oracle["p_induced"]), rel=SIX_DIGITS)
        assert blade == pytest.approx(float(oracle["p_blade"]), rel=SIX_DIGITS)
        assert parasite == pytest.approx(float(oracle["p_parasite"]), rel=SIX_DIGITS)
        total = propulsion_power(PARAMS.cruise_speed, PARAMS)
        assert total == pytest.approx(float(oracle["p_total"]), rel=SIX_DIGITS)

    def test_cruise_magnitudes(self):
        induced, blade, parasite = propulsion_power_terms(PARAMS.cruise_speed, PARAMS)
        assert induced == pytest.approx(2.20808e5, rel=1e-4)
        assert blade == pytest.approx(3.68480e4, rel=1e-4)
        assert parasite == pytest.approx(3.97919e3, rel=1e-4)

    def test_parasite_term_cubic_in_speed(self):
        _, _, p1 = propulsion_power_terms(20.0, PARAMS)
        _, _, p2 = propulsion_power_terms(40.0, PARAMS)
        assert p2 == pytest.approx(8 * p1, rel=1e-12)

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            propulsion_power(-1.0, PARAMS)

    def test_continuous_and_finite_over_speed_grid(self):
        import math

        v = 0.0
        prev = None
        while v <= 120.0 + 1e-9:
            total = propulsion_power(v, PARAMS)
            assert math.isfinite(total) and total > 0
            # inner sqrt argument stays nonnegative
            ratio2 = v * v / (2 * PARAMS.hover_induced_velocity**2)
            inner = math.sqrt(1 + v**4 / (4 * PARAMS.hover_induced_velocity**4)) - ratio2
            assert inner >= 0
            if prev is not None:
                assert abs(total - prev) < 2500  # no jumps at 0.1 m/s resolution
            prev = total
            v += 0.1


class TestLegEnergy:
    def test_zero_distance(self):
        assert energy_for_leg(0.0, PARAMS) == 0.0

    def test_one_second_of_cruise(self):
        oracle = decimal_oracle(PARAMS.cruise_speed)
        expected_kwh = float(oracle["p_total"] / Decimal(3_600_000))
        got = energy_for_leg(PARAMS.cruise_speed, PARAMS)
        assert got == pytest.approx(expected_kwh, rel=SIX_DIGITS)
        assert got == pytest.approx(0.0726763, rel=1e-5)

    def test_linear_in_distance(self):
        assert energy_for_leg(2468.0, PARAMS) == pytest.approx(
            2 * energy_for_leg(1234.0, PARAMS), rel=1e-12
        )

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            energy_for_leg(-5.0, PARAMS)


class TestBattery:
    def test_defaults_charge_rate(self):
        battery = BatteryModel()
        # one full cycle at rated power takes exactly max_charge/power hours
        hours = battery.max_charge_per_journey_kwh / battery.charger_power_kw
        assert hours * 3600 == pytest.approx(300.0)

    def test_five_minute_cycle_adds_twenty_percent(self):
        battery = BatteryModel()
        out = apply_charge(Soc(0.50), 300.0, battery)
        assert out.fraction == pytest.approx(0.70)
        assert out.fraction == min(1.0, 0.50 + 30.0 / 150.0)

    def test_cycle_clamps_at_full(self):
        out = apply_charge(Soc(0.95), 300.0, BatteryModel())
        assert out.fraction == 1.0

    def test_five_cycles_from_empty_reach_full(self):
        battery = BatteryModel()
        soc = Soc(0.0)
        for _ in range(5):
            soc = apply_charge(soc, 300.0, battery)
        assert soc.fraction == 1.0

    def test_cap_applies_to_long_durations(self):
        battery = BatteryModel()
        out = apply_charge(Soc(0.0), 3600.0, battery)
        assert out.fraction == pytest.approx(30.0 / 150.0)

    def test_invalid_models_rejected(self):
        with pytest.raises(ValueError):
            BatteryModel(capacity_kwh=10.0, max_charge_per_journey_kwh=20.0)
        with pytest.raises(ValueError):
            BatteryModel(charger_power_kw=0.0)
        with pytest.raises(ValueError):
            BatteryModel(reserve_fraction=1.5)


class TestSoc:
    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    def test_always_clamped(self, fraction):
        soc = Soc(fraction)
        assert 0.0 <= soc.fraction <= 1.0

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=10_000.0),
    )
    def test_charging_never_exceeds_full(self, start, duration):
        out = apply_charge(Soc(start), duration, BatteryModel())
        assert 0.0 <= out.fraction <= 1.0
        assert out.fraction >= start


class TestAircraftParams:
    def test_table_defaults(self):
        p = AircraftParams()
        assert p.max_packages == 4
        assert p.cruise_speed == 73.762
        assert p.weight == 17799.0
        assert p.hover_induced_velocity == 26.45
        assert p.tip_speed == 112.776
        assert p.profile_drag_coeff == 0.045
        assert p.induced_power_factor == 0.052
        assert p.fuselage_drag_ratio == 0.01
        assert p.solidity == 0.2449
        assert p.disc_area == 6.61
        assert p.air_density == 1.225
        assert p.blade_angular_velocity == 78.0
        assert p.rotor_radius == 1.45

    def test_validation(self):
        with pytest.raises(ValueError):
            AircraftParams(max_packages=0)
        with pytest.raises(ValueError):
            AircraftParams(cruise_speed=-1.0)
