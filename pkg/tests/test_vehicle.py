import math

import numpy as np
import pytest

from drift_forge.vehicle import (
    IBETA, IDPSI, IE, IR, IS, IV,
    ControlInput,
    LowSpeedError,
    PathDef,
    PathFrameError,
    VehicleParams,
    VehicleState,
    clip_control,
    derivative_jacobians,
    derivatives,
    normal_loads,
    rk4,
    rk4_step,
    slip_angle_partials,
    slip_angles,
)

PARAMS = VehicleParams()


class TestSlipAngles:
    def test_straight_running(self):
        x = VehicleState(r=0.0, v=10.0).as_array()
        assert slip_angles(x, 0.0, PARAMS) == (0.0, 0.0)

    def test_pure_steering_offset(self):
        x = VehicleState(r=0.0, v=10.0).as_array()
        af, ar = slip_angles(x, 0.1, PARAMS)
        assert af == pytest.approx(-0.1, abs=1e-15)
        assert ar == 0.0

    def test_drift_state_pinned_values(self):
        # frozen from a 50-digit mpmath evaluation of the two atan expressions
        x = VehicleState(r=0.8, v=12.0, beta=-0.698).as_array()
        af, ar = slip_angles(x, -0.2, PARAMS)
        assert af == pytest.approx(-0.43064514568945082, abs=1e-12)
        assert ar == pytest.approx(-0.75714740708000611, abs=1e-12)

    def test_low_speed_rejected(self):
        x = VehicleState(v=0.05).as_array()
        with pytest.raises(LowSpeedError):
            slip_angles(x, 0.0, PARAMS)


class TestNormalLoads:
    def test_symmetric_geometry(self):
        p = VehicleParams(a=1.3, b=1.3)
        fzf, fzr = normal_loads(p)
        assert fzf == pytest.approx(p.mass * p.g / 2, rel=1e-15)
        assert fzr == pytest.approx(p.mass * p.g / 2, rel=1e-15)

    def test_default_split_closed_form(self):
        fzf, fzr = normal_loads(PARAMS)
        assert fzf == pytest.approx(7849.58866397, abs=0.5)
        assert fzr == pytest.approx(8042.61133603, abs=0.5)

    def test_sum_is_weight_exactly(self):
        fzf, fzr = normal_loads(PARAMS)
        assert fzf + fzr == PARAMS.mass * PARAMS.g
        assert fzf + fzr == pytest.approx(15892.2, abs=0.1)


STRAIGHT = PathDef(radius=15.0, approach_length=1e9)
CIRCLE = PathDef(radius=15.0, approach_length=0.0)


class TestDerivatives:
    def test_coasting(self):
        x = VehicleState(r=0.3, v=10.0).as_array()
        u = np.zeros(3)
        dx = derivatives(x, u, 0.0, 0.0, 0.0, PARAMS)
        assert dx[IV] == 0.0
        assert dx[IBETA] == -0.3
        assert dx[IR] == 0.0
        assert dx[IS] == 10.0

    def test_pure_rear_drive(self):
        x = VehicleState(r=0.2, v=10.0).as_array()
        u = ControlInput(fxr=1000.0).as_array()
        dx = derivatives(x, u, 0.0, 0.0, 0.0, PARAMS)
        assert dx[IV] == pytest.approx(1000.0 / PARAMS.mass, rel=1e-15)
        assert dx[IBETA] == pytest.approx(-0.2, rel=1e-15)

    def test_path_singularity_raises(self):
        x = VehicleState(v=10.0, e=15.0).as_array()
        with pytest.raises(PathFrameError):
            derivatives(x, np.zeros(3), 0.0, 0.0, 1.0 / 15.0, PARAMS)

    def test_path_consistency_on_circle(self):
        # on the circle with e=0 and velocity tangent to the path, edot == 0
        beta = -0.5
        x = VehicleState(r=0.7, v=10.5, beta=beta, s=10.0, e=0.0, dpsi=-beta).as_array()
        dx = derivatives(x, np.zeros(3), 0.0, 0.0, 1.0 / 15.0, PARAMS)
        assert dx[IE] == 0.0
        assert dx[IS] == 10.5


class TestRk4:
    def test_zero_rates_fixed_point(self):
        x = np.array([1.0, 2.0, 3.0])
        out = rk4(lambda _: np.zeros(3), x, 0.01)
        assert np.array_equal(out, x)

    def test_exponential_oracle(self):
        a, dt = -1.7, 0.02
        x = rk4(lambda z: a * z, np.array([1.0]), dt)
        exact = math.exp(a * dt)
        # one-step (local) error for RK4 is O(dt^5)
        assert abs(x[0] - exact) < abs(a * dt) ** 5

    def test_fourth_order_convergence(self):
        a = -1.3

        def integrate(dt):
            x = np.array([1.0])
            for _ in range(round(1.0 / dt)):
                x = rk4(lambda z: a * z, x, dt)
            return x[0]

        exact = math.exp(a)
        err1 = abs(integrate(0.02) - exact)
        err2 = abs(integrate(0.01) - exact)
        assert 12.0 < err1 / err2 < 20.0

    def test_force_free_speed_constant(self):
        x = VehicleState(r=0.1, v=11.0, beta=0.2).as_array()
        u = np.zeros(3)
        for _ in range(500):
            x = rk4_step(x, u, 0.01, STRAIGHT, PARAMS, lambda xs, us: (0.0, 0.0))
        assert x[IV] == 11.0

    def test_determinism(self):
        def provider(xs, us):
            af, ar = slip_angles(xs, us[0], PARAMS)
            return -80000.0 * af, -80000.0 * ar

        def run():
            x = VehicleState(r=0.1, v=11.0, beta=-0.1).as_array()
            u = np.array([0.05, -200.0, 800.0])
            out = []
            for _ in range(200):
                x = rk4_step(x, u, 0.01, STRAIGHT, PARAMS, provider)
                out.append(x.copy())
            return np.array(out)

        assert np.array_equal(run(), run())

    def test_dt_validation(self):
        x = VehicleState(v=10.0).as_array()
        with pytest.raises(ValueError):
            rk4_step(x, np.zeros(3), 0.06, STRAIGHT, PARAMS, lambda a, b: (0.0, 0.0))


class TestJacobians:
    """Verify the analytic linearization against central finite differences
    using a smooth synthetic tire model (linear in slip, coupled to fx)."""

    CF, CR = 90000.0, 100000.0

    def forces(self, x, u):
        af, ar = slip_angles(x, u[0], PARAMS)
        fyf = -self.CF * af + 0.05 * u[1]
        fyr = -self.CR * ar + 0.02 * u[2]
        return fyf, fyr

    def partials(self, x, u):
        (daf_dr, daf_dv, daf_db), (dar_dr, dar_dv, dar_db) = slip_angle_partials(x, PARAMS)
        dfyf = np.array([-self.CF * daf_dr, -self.CF * daf_dv, -self.CF * daf_db,
                         self.CF, 0.05])
        dfyr = np.array([-self.CR * dar_dr, -self.CR * dar_dv, -self.CR * dar_db, 0.02])
        return dfyf, dfyr

    @pytest.mark.parametrize("kappa", [0.0, 1.0 / 15.0])
    def test_matches_finite_differences(self, kappa):
        x0 = np.array([0.6, 10.8, -0.62, 120.0, 0.4, 0.55])
        u0 = np.array([-0.45, -900.0, 4200.0])

        def f(x, u):
            fyf, fyr = self.forces(x, u)
            return derivatives(x, u, fyf, fyr, kappa, PARAMS)

        fyf, fyr = self.forces(x0, u0)
        dfyf, dfyr = self.partials(x0, u0)
        A, B = derivative_jacobians(x0, u0, kappa, PARAMS, fyf, fyr, dfyf, dfyr)

        A_fd = np.zeros((6, 6))
        for j in range(6):
            h = 1e-6 * max(1.0, abs(x0[j]))
            xp, xm = x0.copy(), x0.copy()
            xp[j] += h
            xm[j] -= h
            A_fd[:, j] = (f(xp, u0) - f(xm, u0)) / (2 * h)
        B_fd = np.zeros((6, 3))
        for j in range(3):
            h = 1e-6 * max(1.0, abs(u0[j]))
            up, um = u0.copy(), u0.copy()
            up[j] += h
            um[j] -= h
            B_fd[:, j] = (f(x0, up) - f(x0, um)) / (2 * h)

        scale_A = np.abs(A_fd).max()
        scale_B = np.abs(B_fd).max()
        assert np.abs(A - A_fd).max() < 1e-6 * scale_A
        assert np.abs(B - B_fd).max() < 1e-6 * scale_B


class TestControlHelpers:
    def test_clip(self):
        u = np.array([2.0, -9000.0, 20000.0])
        out = clip_control(u, PARAMS)
        assert out.tolist() == [PARAMS.delta_max, PARAMS.fxf_min, PARAMS.fxr_max]

    def test_params_validation(self):
        with pytest.raises(ValueError):
            VehicleParams(mass=-1.0)
        with pytest.raises(ValueError):
            VehicleParams(fxf_min=100.0)
