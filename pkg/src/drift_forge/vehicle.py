"""Single-track drift dynamics with path-relative states and a fixed-step RK4
integrator.

State vector order (everywhere in this package):
    x = [r, v, beta, s, e, dpsi]
      yaw rate (rad/s), speed (m/s), sideslip (rad),
      arc position (m), lateral error (m), heading error (rad)
Input vector order:
    u = [delta, fxf, fxr]
      steering (rad), front longitudinal force (N, braking only <= 0),
      rear drive force (N, >= 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

IR, IV, IBETA, IS, IE, IDPSI = range(6)
IDELTA, IFXF, IFXR = range(3)

V_MIN = 0.1            # model validity floor on speed (m/s)
PATH_DEN_MIN = 1e-3    # singularity guard on 1 - kappa*e


class LowSpeedError(ValueError):
    """Speed fell below the validity floor of the slip-angle kinematics."""


class PathFrameError(ValueError):
    """Path frame became singular (kappa * e approached 1)."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1620.0        # kg
    yaw_inertia: float = 2350.0  # kg m^2
    a: float = 1.25             # m, CG to front axle
    b: float = 1.22             # m, CG to rear axle
    g: float = 9.81             # m/s^2
    delta_max: float = 0.96     # rad
    fxr_max: float = 10000.0    # N
    fxf_min: float = -6000.0    # N, most-negative braking force

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "a", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not (self.fxf_min <= 0.0 <= self.fxr_max):
            raise ValueError("require fxf_min <= 0 <= fxr_max")


@dataclass
class VehicleState:
    r: float = 0.0
    v: float = 0.0
    beta: float = 0.0
    s: float = 0.0
    e: float = 0.0
    dpsi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.v, self.beta, self.s, self.e, self.dpsi])

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        return cls(*(float(xi) for xi in x))


@dataclass
class ControlInput:
    delta: float = 0.0
    fxf: float = 0.0
    fxr: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.fxf, self.fxr])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(*(float(ui) for ui in u))


def control_bounds(params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([-params.delta_max, params.fxf_min, 0.0])
    hi = np.array([params.delta_max, 0.0, params.fxr_max])
    return lo, hi


def clip_control(u: np.ndarray, params: VehicleParams) -> np.ndarray:
    lo, hi = control_bounds(params)
    return np.minimum(np.maximum(u, lo), hi)


@dataclass(frozen=True)
class PathDef:
    """Straight approach of approach_length, then a constant-radius circle.

    turn_sign +1 keeps the drift convention used throughout: negative target
    sideslip pairs with a positive-curvature (counterclockwise) circle.
    """

    radius: float = 15.0
    approach_length: float = 90.7
    turn_sign: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if abs(self.turn_sign) != 1.0:
            raise ValueError("turn_sign must be +1 or -1")

    def curvature(self, s: float) -> float:
        if s < self.approach_length:
            return 0.0
        return self.turn_sign / self.radius


def slip_angles(state, delta: float, params: VehicleParams) -> tuple[float, float]:
    """Kinematic front/rear slip angles; raises below the speed floor."""
    r, v, beta = float(state[IR]), float(state[IV]), float(state[IBETA])
    if v <= V_MIN:
        raise LowSpeedError(f"v={v} below validity floor {V_MIN} m/s")
    vx = v * math.cos(beta)
    vy = v * math.sin(beta)
    alpha_f = math.atan((vy + params.a * r) / vx) - delta
    alpha_r = math.atan((vy - params.b * r) / vx)
    return alpha_f, alpha_r


def normal_loads(params: VehicleParams) -> tuple[float, float]:
    """Static axle loads; the pair sums to m*g exactly."""
    total = params.mass * params.g
    fzf = total * params.b / (params.a + params.b)
    return fzf, total - fzf


def loads_with_transfer(params: VehicleParams, fx_total: float, gain: float) -> tuple[float, float]:
    """Optional quasi-static longitudinal transfer: braking loads the front."""
    fzf0, fzr0 = normal_loads(params)
    shift = gain * fx_total
    fzf = max(fzf0 - shift, 0.1 * fzf0)
    fzr = max(fzr0 + shift, 0.1 * fzr0)
    return fzf, fzr


def derivatives(x: np.ndarray, u: np.ndarray, fyf: float, fyr: float,
                kappa: float, params: VehicleParams) -> np.ndarray:
    """Six state rates given the tire lateral forces already evaluated."""
    r, v, beta = x[IR], x[IV], x[IBETA]
    e, dpsi = x[IE], x[IDPSI]
    delta, fxf, fxr = u[IDELTA], u[IFXF], u[IFXR]
    if v <= V_MIN:
        raise LowSpeedError(f"v={v} below validity floor {V_MIN} m/s")
    den = 1.0 - kappa * e
    if den < PATH_DEN_MIN:
        raise PathFrameError(f"path frame singular: 1 - kappa*e = {den}")

    cd, sd = math.cos(delta), math.sin(delta)
    cb, sb = math.cos(beta), math.sin(beta)
    fx = fxf * cd - fyf * sd + fxr
    fy = fyf * cd + fxf * sd + fyr

    m, iz = params.mass, params.yaw_inertia
    vdot = (fx * cb + fy * sb) / m
    betadot = (fy * cb - fx * sb) / (m * v) - r
    rdot = (params.a * (fyf * cd + fxf * sd) - params.b * fyr) / iz
    course = dpsi + beta
    sdot = v * math.cos(course) / den
    edot = v * math.sin(course)
    dpsidot = r - kappa * sdot
    return np.array([rdot, vdot, betadot, sdot, edot, dpsidot])


def rk4(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """Classical fixed-step RK4 for an autonomous rate function."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


ForceProvider = Callable[[np.ndarray, np.ndarray], tuple[float, float]]


def rk4_step(x: np.ndarray, u: np.ndarray, dt: float, path: PathDef,
             params: VehicleParams, force_provider: ForceProvider) -> np.ndarray:
    """One RK4 step of the vehicle with tire forces re-evaluated per stage."""
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")

    def f(xs):
        fyf, fyr = force_provider(xs, u)
        return derivatives(xs, u, fyf, fyr, path.curvature(xs[IS]), params)

    return rk4(f, x, dt)


# -- analytic linearization -------------------------------------------------
#
# The controller needs d(rates)/d(state, input). Tire force partials come in
# from the prediction model: front wrt (r, v, beta, delta, fxf), rear wrt
# (r, v, beta, fxr).

def slip_angle_partials(x: np.ndarray, params: VehicleParams):
    """d(alpha_f)/d(r, v, beta) and d(alpha_r)/d(r, v, beta).

    d(alpha_f)/d(delta) is -1 by definition and handled by callers.
    """
    r, v, beta = x[IR], x[IV], x[IBETA]
    cb, sb = math.cos(beta), math.sin(beta)
    d = v * cb

    nf = v * sb + params.a * r
    gf = nf / d
    wf = 1.0 / (1.0 + gf * gf)
    daf_dr = wf * params.a / d
    daf_dv = wf * (-params.a * r * cb) / (d * d)
    daf_dbeta = wf * (v * cb * d + nf * v * sb) / (d * d)

    nr = v * sb - params.b * r
    gr = nr / d
    wr = 1.0 / (1.0 + gr * gr)
    dar_dr = wr * (-params.b) / d
    dar_dv = wr * (params.b * r * cb) / (d * d)
    dar_dbeta = wr * (v * cb * d + nr * v * sb) / (d * d)

    return (daf_dr, daf_dv, daf_dbeta), (dar_dr, dar_dv, dar_dbeta)


def derivative_jacobians(x: np.ndarray, u: np.ndarray, kappa: float, params: VehicleParams,
                         fyf: float, fyr: float,
                         dfyf: np.ndarray, dfyr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time A (6x6), B (6x3) at (x, u).

    dfyf: front force partials wrt (r, v, beta, delta, fxf).
    dfyr: rear force partials wrt (r, v, beta, fxr).
    kappa is treated as locally constant in s.
    """
    r, v, beta = x[IR], x[IV], x[IBETA]
    e, dpsi = x[IE], x[IDPSI]
    delta, fxf = u[IDELTA], u[IFXF]
    m, iz, av, bv = params.mass, params.yaw_inertia, params.a, params.b

    cd, sd = math.cos(delta), math.sin(delta)
    cb, sb = math.cos(beta), math.sin(beta)
    fx = fxf * cd - fyf * sd + u[IFXR]
    fy = fyf * cd + fxf * sd + fyr

    A = np.zeros((6, 6))
    B = np.zeros((6, 3))

    # body-force partials: states through the tire forces only
    dfx_ds = [-sd * dfyf[i] for i in range(3)]                    # wrt r, v, beta
    dfy_ds = [cd * dfyf[i] + dfyr[i] for i in range(3)]
    dfx_du = [-fxf * sd - dfyf[3] * sd - fyf * cd,                # delta
              cd - sd * dfyf[4],                                  # fxf
              1.0]                                                # fxr
    dfy_du = [dfyf[3] * cd - fyf * sd + fxf * cd,
              sd + cd * dfyf[4],
              dfyr[3]]

    # vdot = (fx cb + fy sb)/m
    for i, col in enumerate((IR, IV, IBETA)):
        A[IV, col] = (dfx_ds[i] * cb + dfy_ds[i] * sb) / m
    A[IV, IBETA] += (-fx * sb + fy * cb) / m
    for j in range(3):
        B[IV, j] = (dfx_du[j] * cb + dfy_du[j] * sb) / m

    # betadot = (fy cb - fx sb)/(m v) - r
    mv = m * v
    for i, col in enumerate((IR, IV, IBETA)):
        A[IBETA, col] = (dfy_ds[i] * cb - dfx_ds[i] * sb) / mv
    A[IBETA, IR] += -1.0
    A[IBETA, IV] += -(fy * cb - fx * sb) / (mv * v)
    A[IBETA, IBETA] += (-fy * sb - fx * cb) / mv
    for j in range(3):
        B[IBETA, j] = (dfy_du[j] * cb - dfx_du[j] * sb) / mv

    # rdot = (a (fyf cd + fxf sd) - b fyr)/iz
    for i, col in enumerate((IR, IV, IBETA)):
        A[IR, col] = (av * cd * dfyf[i] - bv * dfyr[i]) / iz
    B[IR, IDELTA] = av * (dfyf[3] * cd - fyf * sd + fxf * cd) / iz
    B[IR, IFXF] = av * (sd + cd * dfyf[4]) / iz
    B[IR, IFXR] = -bv * dfyr[3] / iz

    # path rows
    den = 1.0 - kappa * e
    course = dpsi + beta
    cc, sc = math.cos(course), math.sin(course)
    A[IS, IV] = cc / den
    A[IS, IBETA] = -v * sc / den
    A[IS, IDPSI] = -v * sc / den
    A[IS, IE] = v * cc * kappa / (den * den)
    A[IE, IV] = sc
    A[IE, IBETA] = v * cc
    A[IE, IDPSI] = v * cc
    A[IDPSI, IR] = 1.0
    A[IDPSI] -= kappa * A[IS]

    return A, B
