import math

import numpy as np
import pytest

from drift_forge.equilibrium import (
    EquilibriumSpec,
    InfeasibleSpecError,
    ReferenceTrajectory,
    build_reference,
    hold_equilibrium,
    read_reference_csv,
    solve_equilibrium,
)
from drift_forge.tires import TireParams
from drift_forge.vehicle import VehicleParams

VEH = VehicleParams()
FRONT = TireParams(120000.0, 0.9)
REAR = TireParams(120000.0, 0.9)
BETA40 = math.radians(-40.0)

# pinned at first build; certified below by the open-loop hold oracle
V_SOL_PINNED = 10.913661379028289


@pytest.fixture(scope="module")
def eq_no_brakes():
    return solve_equilibrium(EquilibriumSpec(15.0, BETA40, fxf_fixed=0.0), VEH, FRONT, REAR)


class TestSolveEquilibrium:
    def test_no_brakes_solution(self, eq_no_brakes):
        eq = eq_no_brakes
        assert 9.0 <= eq.v <= 14.0
        assert eq.residual_norm < 1e-8
        assert eq.v == pytest.approx(V_SOL_PINNED, rel=1e-6)

    def test_yaw_rate_is_constraint_substitution(self, eq_no_brakes):
        # r = v/R exactly, signed by the turn direction
        assert eq_no_brakes.r == eq_no_brakes.v / 15.0

    def test_countersteer_branch(self, eq_no_brakes):
        # drift branch: steering opposite the turn (opposite yaw rate)
        assert eq_no_brakes.delta * eq_no_brakes.r < 0.0

    def test_open_loop_hold_five_seconds(self, eq_no_brakes):
        drift = hold_equilibrium(eq_no_brakes, VEH, FRONT, REAR, duration=5.0)
        assert np.all(drift < 1e-3)

    def test_slower_equilibrium_requires_braking(self, eq_no_brakes):
        eq = solve_equilibrium(
            EquilibriumSpec(15.0, BETA40, v_fixed=0.95 * eq_no_brakes.v), VEH, FRONT, REAR)
        assert eq.fxf < 0.0
        assert eq.residual_norm < 1e-8
        drift = hold_equilibrium(eq, VEH, FRONT, REAR, duration=5.0)
        assert np.all(drift < 1e-3)

    def test_mirrored_turn_direction(self):
        eq = solve_equilibrium(EquilibriumSpec(15.0, -BETA40, fxf_fixed=0.0), VEH, FRONT, REAR)
        assert eq.r < 0.0 and eq.delta > 0.0
        assert eq.v == pytest.approx(V_SOL_PINNED, rel=1e-9)

    def test_infeasible_spec_raises(self):
        # holding a much faster speed than V_sol needs front drive, not braking
        with pytest.raises((InfeasibleSpecError, Exception)):
            solve_equilibrium(EquilibriumSpec(15.0, BETA40, v_fixed=2.0 * V_SOL_PINNED),
                              VEH, FRONT, REAR)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            EquilibriumSpec(15.0, BETA40)
        with pytest.raises(ValueError):
            EquilibriumSpec(15.0, BETA40, fxf_fixed=0.0, v_fixed=10.0)
        with pytest.raises(ValueError):
            EquilibriumSpec(-1.0, BETA40, fxf_fixed=0.0)


@pytest.fixture(scope="module")
def reference():
    return build_reference(VEH, FRONT, REAR)


class TestBuildReference:
    def test_lap1_targets(self, reference):
        ref = reference
        i = np.searchsorted(ref.s, ref.s_init_end + 10.0)
        assert ref.beta_ref[i] == pytest.approx(BETA40)
        assert ref.v_ref[i] == pytest.approx(ref.v_sol)
        assert ref.fxf_ref[i] == 0.0

    def test_lap3_speed_scaling_exact(self, reference):
        ref = reference
        i = np.searchsorted(ref.s, ref.lap_ends[1] + 20.0)
        assert ref.v_ref[i] == 0.875 * ref.v_sol

    def test_braking_strictly_increases(self, reference):
        fxf = [eq.fxf for eq in reference.equilibria]
        assert fxf[0] == 0.0
        assert fxf[1] < fxf[0]
        assert fxf[2] < fxf[1]
        # pinned at first build (paper's vehicle gave -1000/-2150 at these laps)
        assert fxf[1] == pytest.approx(-894.7, abs=1.0)
        assert fxf[2] == pytest.approx(-1950.0, abs=1.0)

    def test_residual_certification(self, reference):
        for eq in reference.equilibria:
            assert eq.residual_norm < 1e-8

    def test_arc_length_strictly_increasing(self, reference):
        assert np.all(np.diff(reference.s) > 0)

    def test_regions_partition_and_order(self, reference):
        ref = reference
        assert ref.region_of(0.0) == "approach"
        assert ref.region_of(ref.s_circle + 1.0) == "initiation"
        assert ref.region_of(ref.s_init_end + 1.0) == "steady_lap1"
        assert ref.region_of(ref.lap_ends[0] + 1.0) == "steady_lap2"
        assert ref.region_of(ref.lap_ends[1] + 1.0) == "steady_lap3"
        # lap length is one circumference
        assert ref.lap_ends[0] - ref.s_circle == pytest.approx(2 * math.pi * 15.0)

    def test_blend_is_linear_between_laps(self, reference):
        ref = reference
        s_b = ref.lap_ends[0]
        v1, v2 = ref.equilibria[0].v, ref.equilibria[1].v
        mid = ref.lookup(s_b + 2.5)["v_ref"]
        assert mid == pytest.approx(0.5 * (v1 + v2), rel=1e-3)

    def test_lookup_includes_derived_targets(self, reference):
        ref = reference
        at = ref.lookup(ref.s_init_end + 5.0)
        assert at["r_ref"] == pytest.approx(at["kappa"] * at["v_ref"])
        assert at["dpsi_ref"] == pytest.approx(-at["beta_ref"])

    def test_csv_round_trip(self, reference, tmp_path):
        p = tmp_path / "ref.csv"
        reference.to_csv(p)
        back = read_reference_csv(p)
        assert np.array_equal(back["s"], reference.s)
        assert np.array_equal(back["v_ref"], reference.v_ref)
        assert back["region"] == reference.region
