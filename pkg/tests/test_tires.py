import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drift_forge.tires import (
    PlantTireConfig,
    TireParams,
    TireThermalState,
    derating_factor,
    fiala_lateral_force,
    front_slip_power,
    plant_lateral_force,
    thermal_step,
)

NOMINAL = TireParams(cornering_stiffness=120000.0, mu=0.9)


class TestDeratingFactor:
    def test_no_longitudinal_force(self):
        xi, sat = derating_factor(0.0, 0.9, 5000.0)
        assert xi == 1.0 and not sat

    def test_fully_consumed_circle(self):
        xi, sat = derating_factor(4500.0, 0.9, 5000.0)
        assert xi == 0.0 and not sat

    def test_sixty_percent_demand(self):
        # sqrt(1 - 0.6^2), hand evaluation
        xi, sat = derating_factor(2700.0, 0.9, 5000.0)
        assert xi == pytest.approx(0.8, rel=1e-12)
        assert not sat

    def test_infeasible_demand_clamps_and_flags(self):
        xi, sat = derating_factor(-5000.0, 0.9, 5000.0)
        assert xi == 0.0 and sat

    def test_rejects_bad_load(self):
        with pytest.raises(ValueError):
            derating_factor(0.0, 0.9, 0.0)


class TestFialaLateralForce:
    def test_zero_slip(self):
        assert fiala_lateral_force(0.0, 0.0, 5000.0, NOMINAL) == 0.0

    def test_full_sliding_returns_mu_fz(self):
        # alpha_sl = atan(3*4500/120000) ~ 0.112 rad, so 0.2 rad slides
        assert fiala_lateral_force(0.2, 0.0, 5000.0, NOMINAL) == -4500.0

    def test_cubic_region_pinned_value(self):
        # frozen from a 50-digit mpmath transcription of the cubic
        f = fiala_lateral_force(0.02, 0.0, 5000.0, NOMINAL)
        assert f == pytest.approx(-1998.8336481337758, abs=1e-9)

    def test_saturated_circle_returns_zero(self):
        assert fiala_lateral_force(0.1, 4500.0, 5000.0, NOMINAL) == 0.0

    def test_slip_clamped_beyond_quarter_turn(self):
        assert fiala_lateral_force(2.5, 0.0, 5000.0, NOMINAL) == -4500.0
        assert fiala_lateral_force(-2.5, 0.0, 5000.0, NOMINAL) == 4500.0


slip = st.floats(-1.5, 1.5)
fx_frac = st.floats(-0.999, 0.999)
load = st.floats(1000.0, 12000.0)


class TestFialaProperties:
    @given(slip, fx_frac, load)
    @settings(max_examples=300, deadline=None)
    def test_odd_in_alpha_exact(self, alpha, fxf, fz):
        fx = fxf * NOMINAL.mu * fz
        assert fiala_lateral_force(-alpha, fx, fz, NOMINAL) == -fiala_lateral_force(alpha, fx, fz, NOMINAL)

    @given(slip, fx_frac, load)
    @settings(max_examples=300, deadline=None)
    def test_friction_circle_bound(self, alpha, fxf, fz):
        fx = fxf * NOMINAL.mu * fz
        fy = fiala_lateral_force(alpha, fx, fz, NOMINAL)
        assert math.hypot(fx, fy) <= NOMINAL.mu * fz + 1e-9

    @given(fx_frac, load)
    @settings(max_examples=200, deadline=None)
    def test_continuity_at_sliding_angle(self, fxf, fz):
        fx = fxf * NOMINAL.mu * fz
        xi, _ = derating_factor(fx, NOMINAL.mu, fz)
        f_max = xi * NOMINAL.mu * fz
        if f_max < 1.0:
            return
        a_sl = math.atan(3.0 * f_max / NOMINAL.cornering_stiffness)
        lo = fiala_lateral_force(a_sl - 1e-9, fx, fz, NOMINAL)
        hi = fiala_lateral_force(a_sl + 1e-9, fx, fz, NOMINAL)
        assert abs(lo - hi) < 1e-6 * NOMINAL.mu * fz

    @given(slip, load, st.floats(0.0, 0.95), st.floats(0.96, 0.999))
    @settings(max_examples=300, deadline=None)
    def test_monotone_derating(self, alpha, fz, frac_lo, frac_hi):
        fx_lo = frac_lo * NOMINAL.mu * fz
        fx_hi = frac_hi * NOMINAL.mu * fz
        f_lo = abs(fiala_lateral_force(alpha, fx_lo, fz, NOMINAL))
        f_hi = abs(fiala_lateral_force(alpha, fx_hi, fz, NOMINAL))
        assert f_lo >= f_hi - 1e-9

    @given(fx_frac, load)
    @settings(max_examples=200, deadline=None)
    def test_small_slip_slope_is_derated_stiffness(self, fxf, fz):
        fx = fxf * NOMINAL.mu * fz
        xi, _ = derating_factor(fx, NOMINAL.mu, fz)
        if xi * NOMINAL.mu * fz < 50.0:
            return  # slope region vanishes with the force budget
        h = 1e-7
        slope = (fiala_lateral_force(h, fx, fz, NOMINAL) - fiala_lateral_force(-h, fx, fz, NOMINAL)) / (2 * h)
        assert slope == pytest.approx(-NOMINAL.cornering_stiffness, rel=0.01)


PLANT = PlantTireConfig(base=NOMINAL, t_ambient=25.0, t_ref=60.0, heat_gain=4.5e-4,
                        cool_rate=0.03, fade_slope=0.005, steer_stiffness_slope=-0.2)


class TestPlantTire:
    def test_latent_effects_vanish_at_reference(self):
        th = TireThermalState(PLANT.t_ref)
        for alpha in (-0.3, -0.05, 0.0, 0.02, 0.4):
            assert plant_lateral_force(alpha, 0.0, 5000.0, 0.0, th, PLANT) == \
                fiala_lateral_force(alpha, 0.0, 5000.0, NOMINAL)

    def test_fade_shrinks_saturation_level(self):
        th = TireThermalState(PLANT.t_ref + 20.0)
        # mu_eff = 0.9 * (1 - 0.005*20) = 0.9 * 0.9
        f = plant_lateral_force(1.0, 0.0, 5000.0, 0.0, th, PLANT)
        assert f == pytest.approx(-0.9 * 0.9 * 5000.0, rel=1e-12)

    def test_fade_floor(self):
        th = TireThermalState(1e6)
        f = plant_lateral_force(1.0, 0.0, 5000.0, 0.0, th, PLANT)
        assert f == pytest.approx(-0.2 * 0.9 * 5000.0, rel=1e-12)

    def test_steering_shrinks_small_slip_slope(self):
        th = TireThermalState(PLANT.t_ref)
        h = 1e-7
        slope = (plant_lateral_force(h, 0.0, 5000.0, 0.5, th, PLANT)
                 - plant_lateral_force(-h, 0.0, 5000.0, 0.5, th, PLANT)) / (2 * h)
        # C_eff = C * (1 - 0.2*0.5) = 0.9 C
        assert slope == pytest.approx(-0.9 * NOMINAL.cornering_stiffness, rel=1e-6)


class TestThermalStep:
    def test_equilibrium_at_ambient(self):
        s = TireThermalState(PLANT.t_ambient)
        assert thermal_step(s, 0.0, 0.01, PLANT).temperature == s.temperature

    def test_pure_cooling_decays_toward_ambient(self):
        s = TireThermalState(PLANT.t_ambient + 10.0)
        nxt = thermal_step(s, 0.0, 0.01, PLANT)
        expected = s.temperature + 0.01 * (-PLANT.cool_rate * 10.0)
        assert nxt.temperature == pytest.approx(expected, rel=1e-12)
        assert nxt.temperature < s.temperature

    def test_constant_power_fixed_point(self):
        power = 3000.0
        target = PLANT.t_ambient + PLANT.heat_gain * power / PLANT.cool_rate
        s = TireThermalState(PLANT.t_ambient)
        for _ in range(int(600.0 / 0.01)):  # 600 s >> 1/cool_rate
            s = thermal_step(s, power, 0.01, PLANT)
        assert s.temperature == pytest.approx(target, rel=1e-3)

    def test_rejects_negative_power(self):
        with pytest.raises(ValueError):
            thermal_step(TireThermalState(25.0), -1.0, 0.01, PLANT)


class TestValidation:
    def test_tire_params_invariants(self):
        with pytest.raises(ValueError):
            TireParams(-1.0, 0.9)
        with pytest.raises(ValueError):
            TireParams(120000.0, 2.5)
        with pytest.raises(ValueError):
            TireParams(120000.0, 0.0)

    def test_plant_config_invariants(self):
        with pytest.raises(ValueError):
            PlantTireConfig(base=NOMINAL, fade_slope=-0.1)
        with pytest.raises(ValueError):
            PlantTireConfig(base=NOMINAL, cool_rate=0.0)

    def test_slip_power_nonnegative(self):
        assert front_slip_power(-4000.0, -1500.0, 11.0, -0.1) > 0.0
        assert front_slip_power(0.0, 0.0, 11.0, 0.0) == 0.0
