"""Receding-horizon drift tracking with a pluggable front-tire force port.

Solver: Gauss-Newton SQP in iLQR form. Each iteration linearizes the
RK4-discretized prediction model along the nominal trajectory (exact chain
rule through all four stages), sweeps a backward Riccati recursion, and line
searches the clamped forward rollout. Box input bounds are enforced by
clamping inside the rollout; the real-time-iteration cap keeps solves cheap.

Controls are scaled internally (forces in kN) so the Riccati blocks stay well
conditioned.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import ReferenceTrajectory
from .mlp import CompiledMlp, MlpConfig, MlpWeights, Normalizer
from .plant import PlantSimulator
from .runlog import RunLog
from .tires import TireParams, _fiala, _fiala_partials
from .vehicle import (
    IBETA, IDPSI, IE, IR, IS, IV,
    PathDef,
    VehicleParams,
    clip_control,
    control_bounds,
    derivative_jacobians,
    derivatives,
    normal_loads,
)

U_SCALE = np.array([1.0, 1000.0, 1000.0])  # rad, kN, kN internally


def _slip_partials_scalar(r, v, beta, a, b):
    cb, sb = math.cos(beta), math.sin(beta)
    d = v * cb
    nf = v * sb + a * r
    gf = nf / d
    wf = 1.0 / (1.0 + gf * gf)
    daf = (wf * a / d, -wf * a * r * cb / (d * d), wf * (v * cb * d + nf * v * sb) / (d * d))
    nr = v * sb - b * r
    gr = nr / d
    wr = 1.0 / (1.0 + gr * gr)
    dar = (-wr * b / d, wr * b * r * cb / (d * d), wr * (v * cb * d + nr * v * sb) / (d * d))
    af = math.atan(gf)
    ar = math.atan(gr)
    return af, ar, daf, dar


class PhysicsFrontTire:
    """Brush-model port: force and analytic partials wrt (r, v, beta, delta, fxf)."""

    name = "physics"

    def __init__(self, tire: TireParams, vehicle: VehicleParams):
        self.tire = tire
        self.vehicle = vehicle

    def force(self, r, v, beta, delta, fxf, fzf) -> float:
        cb, sb = math.cos(beta), math.sin(beta)
        af = math.atan((v * sb + self.vehicle.a * r) / (v * cb)) - delta
        return _fiala(af, fxf, fzf, self.tire.cornering_stiffness, self.tire.mu)

    def evaluate(self, r, v, beta, delta, fxf, fzf):
        af, _, daf, _ = _slip_partials_scalar(r, v, beta, self.vehicle.a, self.vehicle.b)
        af -= delta
        fy, dfy_da, dfy_dfx = _fiala_partials(af, fxf, fzf,
                                              self.tire.cornering_stiffness, self.tire.mu)
        grad = np.array([dfy_da * daf[0], dfy_da * daf[1], dfy_da * daf[2],
                         -dfy_da, dfy_dfx])
        return fy, grad


class NeuralFrontTire:
    """Learned port; feature_mode 'slip' feeds the precomputed front slip angle
    in place of the yaw rate (both modes keep six inputs)."""

    name = "neural"

    def __init__(self, weights: MlpWeights, norm: Normalizer, cfg: MlpConfig = MlpConfig(),
                 vehicle: VehicleParams | None = None, feature_mode: str = "raw"):
        if feature_mode not in ("raw", "slip"):
            raise ValueError(f"unknown feature_mode {feature_mode!r}")
        if feature_mode == "slip" and vehicle is None:
            raise ValueError("feature_mode='slip' needs vehicle geometry")
        self.net = CompiledMlp(weights, norm, cfg)
        self.vehicle = vehicle
        self.feature_mode = feature_mode
        self._feat = np.empty(6)

    def _features(self, r, v, beta, delta, fxf, fzf):
        f = self._feat
        if self.feature_mode == "raw":
            f[0] = r
        else:
            cb, sb = math.cos(beta), math.sin(beta)
            f[0] = math.atan((v * sb + self.vehicle.a * r) / (v * cb)) - delta
        f[1] = v
        f[2] = beta
        f[3] = delta
        f[4] = fxf
        f[5] = fzf
        return f

    def force(self, r, v, beta, delta, fxf, fzf) -> float:
        return self.net.forward(self._features(r, v, beta, delta, fxf, fzf))

    def evaluate(self, r, v, beta, delta, fxf, fzf):
        fy, jac = self.net.forward_jac(self._features(r, v, beta, delta, fxf, fzf))
        if self.feature_mode == "raw":
            return fy, jac[:5]
        af, _, daf, _ = _slip_partials_scalar(r, v, beta, self.vehicle.a, self.vehicle.b)
        j_af = jac[0]
        grad = np.array([j_af * daf[0],
                         j_af * daf[1] + jac[1],
                         j_af * daf[2] + jac[2],
                         -j_af + jac[3],
                         jac[4]])
        return fy, grad


class PredictionModel:
    """Front tire via the port, nominal derated-brush rear, static loads."""

    def __init__(self, front_port, rear: TireParams, vehicle: VehicleParams,
                 path: PathDef, dt: float):
        self.front = front_port
        self.rear = rear
        self.vehicle = vehicle
        self.path = path
        self.dt = dt
        self.fzf, self.fzr = normal_loads(vehicle)

    def forces(self, x, u) -> tuple[float, float]:
        r, v, beta = x[IR], x[IV], x[IBETA]
        cb, sb = math.cos(beta), math.sin(beta)
        fyf = self.front.force(r, v, beta, u[0], u[1], self.fzf)
        ar = math.atan((v * sb - self.vehicle.b * r) / (v * cb))
        fyr = _fiala(ar, u[2], self.fzr, self.rear.cornering_stiffness, self.rear.mu)
        return fyf, fyr

    def _rates(self, x, u):
        fyf, fyr = self.forces(x, u)
        return derivatives(x, u, fyf, fyr, self.path.curvature(x[IS]), self.vehicle)

    def step(self, x, u) -> np.ndarray:
        dt = self.dt
        f = self._rates
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _rates_jac(self, x, u):
        r, v, beta = x[IR], x[IV], x[IBETA]
        fyf, dfyf = self.front.evaluate(r, v, beta, u[0], u[1], self.fzf)
        _, ar, _, dar3 = _slip_partials_scalar(r, v, beta, self.vehicle.a, self.vehicle.b)
        fyr, dfyr_da, dfyr_dfx = _fiala_partials(ar, u[2], self.fzr,
                                                 self.rear.cornering_stiffness, self.rear.mu)
        dfyr = np.array([dfyr_da * dar3[0], dfyr_da * dar3[1], dfyr_da * dar3[2], dfyr_dfx])
        kappa = self.path.curvature(x[IS])
        dx = derivatives(x, u, fyf, fyr, kappa, self.vehicle)
        A, B = derivative_jacobians(x, u, kappa, self.vehicle, fyf, fyr, dfyf, dfyr)
        return dx, A, B

    def step_jac(self, x, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """RK4 step with exact first-order chain rule through all stages."""
        dt = self.dt
        eye = np.eye(6)
        k1, A1, B1 = self._rates_jac(x, u)
        x2 = x + 0.5 * dt * k1
        k2, A2, B2 = self._rates_jac(x2, u)
        x3 = x + 0.5 * dt * k2
        k3, A3, B3 = self._rates_jac(x3, u)
        x4 = x + dt * k3
        k4, A4, B4 = self._rates_jac(x4, u)
        x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        dk1 = A1
        dk1u = B1
        dk2 = A2 @ (eye + 0.5 * dt * dk1)
        dk2u = A2 @ (0.5 * dt * dk1u) + B2
        dk3 = A3 @ (eye + 0.5 * dt * dk2)
        dk3u = A3 @ (0.5 * dt * dk2u) + B3
        dk4 = A4 @ (eye + dt * dk3)
        dk4u = A4 @ (dt * dk3u) + B4
        A_d = eye + (dt / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)
        B_d = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
        return x_next, A_d, B_d


# -- generic Gauss-Newton iLQR core -------------------------------------------

LINE_SEARCH_ALPHAS = tuple(0.5 ** i for i in range(8))


def rollout(problem, x0, us):
    n_knots = len(us) + 1
    xs = np.empty((n_knots, len(x0)))
    xs[0] = x0
    cost = 0.0
    for k in range(len(us)):
        cost += problem.stage_cost(k, xs[k], us[k])
        xs[k + 1] = problem.step(k, xs[k], us[k])
        if not np.all(np.isfinite(xs[k + 1])):
            raise FloatingPointError(f"non-finite dynamics at stage {k}")
    cost += problem.terminal_cost(xs[-1])
    return xs, cost


def gauss_newton_ilqr(problem, x0, u_init, max_iterations: int = 5,
                      tolerance: float = 1e-6):
    """Returns (xs, us, cost, iterations, converged).

    Accepted iterates are non-increasing in cost; `converged` means the cost
    decrease fell below tolerance (or the line search exhausted itself).
    """
    lo, hi = getattr(problem, "u_lo", None), getattr(problem, "u_hi", None)

    def clamp(u):
        if lo is None:
            return u
        return np.minimum(np.maximum(u, lo), hi)

    us = np.array([clamp(u) for u in u_init])
    n_u = len(us)
    xs, cost = rollout(problem, x0, us)
    if cost < 1e-14:
        return xs, us, cost, 0, True

    iterations = 0
    converged = False
    n, m = xs.shape[1], us.shape[1]
    for _ in range(max_iterations):
        # linearize along the nominal
        As = np.empty((n_u, n, n))
        Bs = np.empty((n_u, n, m))
        quads = []
        for k in range(n_u):
            As[k], Bs[k] = problem.jacobians(k, xs[k], us[k])
            quads.append(problem.stage_quad(k, xs[k], us[k]))
        vx, vxx = problem.terminal_quad(xs[-1])

        # backward Riccati sweep
        Ks = np.empty((n_u, m, n))
        ks = np.empty((n_u, m))
        reg = 0.0
        failed = False
        for k in range(n_u - 1, -1, -1):
            lx, lu, lxx, luu, lux = quads[k]
            A, B = As[k], Bs[k]
            qx = lx + A.T @ vx
            qu = lu + B.T @ vx
            qxx = lxx + A.T @ vxx @ A
            quu = luu + B.T @ vxx @ B
            qux = lux + B.T @ vxx @ A
            for attempt in range(6):
                try:
                    chol = np.linalg.cholesky(quu + reg * np.eye(m))
                    break
                except np.linalg.LinAlgError:
                    reg = max(2.0 * reg, 1e-9) * 10.0
            else:
                failed = True
                break
            rhs = np.column_stack([qu, qux])
            sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            ks[k] = -sol[:, 0]
            Ks[k] = -sol[:, 1:]
            vx = qx + Ks[k].T @ quu @ ks[k] + Ks[k].T @ qu + qux.T @ ks[k]
            vxx = qxx + Ks[k].T @ quu @ Ks[k] + Ks[k].T @ qux + qux.T @ Ks[k]
            vxx = 0.5 * (vxx + vxx.T)
        if failed:
            break

        # clamped forward line search
        improved = False
        for alpha in LINE_SEARCH_ALPHAS:
            xs_try = np.empty_like(xs)
            us_try = np.empty_like(us)
            xs_try[0] = x0
            cost_try = 0.0
            ok = True
            for k in range(n_u):
                u = us[k] + alpha * ks[k] + Ks[k] @ (xs_try[k] - xs[k])
                us_try[k] = clamp(u)
                cost_try += problem.stage_cost(k, xs_try[k], us_try[k])
                try:
                    xs_try[k + 1] = problem.step(k, xs_try[k], us_try[k])
                except (ValueError, FloatingPointError):
                    ok = False
                    break
                if not np.all(np.isfinite(xs_try[k + 1])):
                    ok = False
                    break
            if not ok or not math.isfinite(cost_try):
                continue
            cost_try += problem.terminal_cost(xs_try[-1])
            if cost_try < cost:
                improvement = cost - cost_try
                xs, us, cost = xs_try, us_try, cost_try
                iterations += 1
                improved = True
                if improvement < tolerance * max(1.0, cost):
                    converged = True
                break
        if not improved:
            converged = True  # no descent direction left at line-search floor
            break
        if converged:
            break
    return xs, us, cost, iterations, converged


# -- vehicle OCP binding -------------------------------------------------------

@dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 20              # knots; horizon-1 control moves
    dt: float = 0.05
    w_v: float = 1.0               # (s/m)^2
    w_beta: float = 30.0           # rad^-2
    w_r: float = 5.0               # (s/rad)^2
    w_e: float = 2.0               # m^-2, tuned on the model-matched baseline
    w_dpsi: float = 10.0           # rad^-2
    r_delta: float = 1.0           # rad^-2
    r_force: float = 1e-7          # N^-2 (fxf and fxr deviation)
    rate_factor: float = 10.0      # rate penalties = factor * deviation penalties
    terminal_scale: float = 5.0
    max_iterations: int = 5
    tolerance: float = 1e-6
    warm_start: str = "shift"      # or "cold"

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        for f in ("w_v", "w_beta", "w_r", "w_e", "w_dpsi", "r_delta", "r_force"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")


@dataclass
class NmpcSolution:
    us: np.ndarray          # (N-1, 3) physical units
    xs: np.ndarray          # (N, 6) predicted states
    cost: float
    iterations: int
    solve_time: float
    converged: bool


class _VehicleOcp:
    """Augments the state with the previous (scaled) input so control-rate
    penalties fit the Riccati stage structure."""

    def __init__(self, model: PredictionModel, vehicle: VehicleParams, cfg: NmpcConfig,
                 refs: dict[str, np.ndarray], u_ref_scaled: np.ndarray):
        self.model = model
        self.cfg = cfg
        self.refs = refs
        self.u_ref_s = u_ref_scaled
        self.q6 = np.zeros(6)
        self.q6[IR] = cfg.w_r
        self.q6[IV] = cfg.w_v
        self.q6[IBETA] = cfg.w_beta
        self.q6[IE] = cfg.w_e
        self.q6[IDPSI] = cfg.w_dpsi
        r_phys = np.array([cfg.r_delta, cfg.r_force, cfg.r_force])
        self.r_s = r_phys * U_SCALE ** 2
        self.s_s = cfg.rate_factor * self.r_s
        lo, hi = control_bounds(vehicle)
        self.u_lo = lo / U_SCALE
        self.u_hi = hi / U_SCALE

    def _state_err(self, k, x6):
        d = np.zeros(6)
        d[IR] = x6[IR] - self.refs["r_ref"][k]
        d[IV] = x6[IV] - self.refs["v_ref"][k]
        d[IBETA] = x6[IBETA] - self.refs["beta_ref"][k]
        d[IE] = x6[IE]
        d[IDPSI] = x6[IDPSI] - self.refs["dpsi_ref"][k]
        return d

    def step(self, k, xt, us):
        x6 = self.model.step(xt[:6], us * U_SCALE)
        return np.concatenate([x6, us])

    def jacobians(self, k, xt, us):
        _, A6, B6 = self.model.step_jac(xt[:6], us * U_SCALE)
        A = np.zeros((9, 9))
        A[:6, :6] = A6
        B = np.zeros((9, 3))
        B[:6] = B6 * U_SCALE[None, :]
        B[6:] = np.eye(3)
        return A, B

    def stage_cost(self, k, xt, us):
        d = self._state_err(k, xt[:6])
        du = us - self.u_ref_s[k]
        dr = us - xt[6:9]
        return float(self.q6 @ (d * d) + self.r_s @ (du * du) + self.s_s @ (dr * dr))

    def terminal_cost(self, xt):
        d = self._state_err(len(self.u_ref_s), xt[:6])
        return float(self.cfg.terminal_scale * (self.q6 @ (d * d)))

    def stage_quad(self, k, xt, us):
        d = self._state_err(k, xt[:6])
        du = us - self.u_ref_s[k]
        dr = us - xt[6:9]
        lx = np.concatenate([2.0 * self.q6 * d, -2.0 * self.s_s * dr])
        lu = 2.0 * self.r_s * du + 2.0 * self.s_s * dr
        lxx = np.diag(np.concatenate([2.0 * self.q6, 2.0 * self.s_s]))
        luu = np.diag(2.0 * self.r_s + 2.0 * self.s_s)
        lux = np.zeros((3, 9))
        lux[:, 6:9] = np.diag(-2.0 * self.s_s)
        return lx, lu, lxx, luu, lux

    def terminal_quad(self, xt):
        d = self._state_err(len(self.u_ref_s), xt[:6])
        lx = np.concatenate([2.0 * self.cfg.terminal_scale * self.q6 * d, np.zeros(3)])
        lxx = np.zeros((9, 9))
        lxx[:6, :6] = np.diag(2.0 * self.cfg.terminal_scale * self.q6)
        return lx, lxx


class NmpcController:
    def __init__(self, model: PredictionModel, reference: ReferenceTrajectory,
                 vehicle: VehicleParams, cfg: NmpcConfig = NmpcConfig()):
        if abs(model.dt - cfg.dt) > 1e-12:
            raise ValueError("prediction model dt must match controller dt")
        self.model = model
        self.reference = reference
        self.vehicle = vehicle
        self.cfg = cfg

    def _stage_arc_positions(self, x0, us_phys):
        """Predicted arc positions along the nominal rollout (fallback:
        constant-speed extrapolation)."""
        n = self.cfg.horizon
        s_bar = np.empty(n)
        s_bar[0] = x0[IS]
        x = x0
        try:
            for k in range(n - 1):
                x = self.model.step(x, us_phys[k])
                if not np.all(np.isfinite(x)):
                    raise FloatingPointError
                s_bar[k + 1] = x[IS]
        except (ValueError, FloatingPointError):
            v0 = max(x0[IV], 1.0)
            for k in range(n - 1):
                s_bar[k + 1] = s_bar[k] + self.cfg.dt * v0
        return s_bar

    def solve(self, x0: np.ndarray, u_last: np.ndarray,
              warm_us: np.ndarray | None = None) -> NmpcSolution:
        t_start = time.perf_counter()
        cfg = self.cfg
        n_moves = cfg.horizon - 1
        if warm_us is None:
            at = self.reference.lookup(x0[IS])
            u0 = clip_control(np.array([at["delta_ref"], at["fxf_ref"], at["fxr_ref"]]),
                              self.vehicle)
            us_phys = np.tile(u0, (n_moves, 1))
        else:
            us_phys = np.array([clip_control(u, self.vehicle) for u in warm_us])

        # freeze per-stage references along the nominal rollout
        s_bar = self._stage_arc_positions(x0, us_phys)
        refs = {k: np.empty(cfg.horizon) for k in
                ("v_ref", "beta_ref", "r_ref", "dpsi_ref")}
        u_ref = np.empty((n_moves, 3))
        for k in range(cfg.horizon):
            at = self.reference.lookup(s_bar[k])
            for name in refs:
                refs[name][k] = at[name]
            if k < n_moves:
                u_ref[k] = (at["delta_ref"], at["fxf_ref"], at["fxr_ref"])

        problem = _VehicleOcp(self.model, self.vehicle, cfg, refs, u_ref / U_SCALE)
        x_aug = np.concatenate([x0, u_last / U_SCALE])
        xs, us_s, cost, iterations, converged = gauss_newton_ilqr(
            problem, x_aug, us_phys / U_SCALE, cfg.max_iterations, cfg.tolerance)
        return NmpcSolution(us=us_s * U_SCALE, xs=xs[:, :6], cost=cost,
                            iterations=iterations,
                            solve_time=time.perf_counter() - t_start,
                            converged=converged)


def shift_warm_start(us: np.ndarray) -> np.ndarray:
    return np.vstack([us[1:], us[-1]])


def closed_loop_run(plant: PlantSimulator, controller: NmpcController,
                    reference: ReferenceTrajectory, x0: np.ndarray,
                    control_period_steps: int = 5, max_time: float = 90.0,
                    variant: str = "physics", seed: int = 0) -> RunLog:
    """Run the plant under the receding-horizon controller until the reference
    ends (or the vehicle diverges); returns the per-step log."""
    log = RunLog()
    log.meta = {"variant": variant, "seed": seed, "dt": plant.dt,
                "control_period_steps": control_period_steps,
                "truncated": False, "truncate_reason": None}
    plant.reset(x0)
    at0 = reference.lookup(x0[IS])
    u_applied = clip_control(
        np.array([at0["delta_ref"], at0["fxf_ref"], at0["fxr_ref"]]), controller.vehicle)
    warm = None
    telemetry = (0, 0, 0.0, 1)
    n_steps = int(round(max_time / plant.dt))
    for i in range(n_steps):
        replan = i % control_period_steps == 0
        if replan:
            sol = controller.solve(plant.x.copy(), u_applied, warm)
            u_applied = clip_control(sol.us[0], controller.vehicle)
            warm = (shift_warm_start(sol.us)
                    if controller.cfg.warm_start == "shift" else None)
            telemetry = (1, sol.iterations, sol.solve_time, int(sol.converged))
        out = plant.outputs(u_applied)
        x = plant.x
        log.append(t=plant.t, r=x[IR], v=x[IV], beta=x[IBETA], s=x[IS], e=x[IE],
                   dpsi=x[IDPSI], delta=u_applied[0], fxf=u_applied[1],
                   fxr=u_applied[2], fyf=out["fyf"], fyr=out["fyr"],
                   fzf=out["fzf"], fzr=out["fzr"], tire_temp=out["tire_temp"],
                   region=reference.region_of(x[IS]),
                   replan=int(replan), iterations=telemetry[1],
                   solve_time=telemetry[2], converged=telemetry[3])
        try:
            plant.step(u_applied)
        except (ValueError, FloatingPointError) as exc:
            log.meta["truncated"] = True
            log.meta["truncate_reason"] = f"dynamics: {exc}"
            break
        reason = plant.diverged()
        if reason is not None:
            log.meta["truncated"] = True
            log.meta["truncate_reason"] = reason
            break
        if plant.x[IS] >= reference.s_end:
            break
        telemetry = (0, telemetry[1], telemetry[2], telemetry[3])
    return log
