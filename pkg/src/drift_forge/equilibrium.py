"""Drift equilibrium solving and the three-lap reference trajectory.

A drift equilibrium holds the three velocity-state rates at zero on a circle
of the given radius at a prescribed (large) sideslip. The drift branch is the
countersteered one: steering opposite the yaw rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .tires import TireParams, fiala_lateral_force
from .vehicle import (
    IBETA, IR, IV,
    PathDef,
    VehicleParams,
    derivatives,
    normal_loads,
    rk4_step,
    slip_angles,
)

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 60

REGION_APPROACH = "approach"
REGION_INITIATION = "initiation"
REGION_LAPS = ("steady_lap1", "steady_lap2", "steady_lap3")


class EquilibriumError(RuntimeError):
    """Solver failed to converge from every starting point."""

    def __init__(self, msg: str, best_residual: float):
        super().__init__(f"{msg} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class InfeasibleSpecError(RuntimeError):
    """Converged solutions all violate the input bounds."""


@dataclass(frozen=True)
class EquilibriumSpec:
    radius: float
    beta_des: float
    fxf_fixed: float | None = None
    v_fixed: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not abs(self.beta_des) < math.pi / 2:
            raise ValueError("|beta_des| must be < pi/2")
        if (self.fxf_fixed is None) == (self.v_fixed is None):
            raise ValueError("exactly one of fxf_fixed / v_fixed must be set")


@dataclass(frozen=True)
class DriftEquilibrium:
    v: float
    r: float
    beta: float
    delta: float
    fxr: float
    fxf: float
    radius: float
    residual_norm: float


def _rates(v, delta, fxr, fxf, beta, kappa, vehicle, front, rear):
    r = kappa * v
    x = np.array([r, v, beta, 0.0, 0.0, -beta])
    u = np.array([delta, fxf, fxr])
    af, ar = slip_angles(x, delta, vehicle)
    fzf, fzr = normal_loads(vehicle)
    fyf = fiala_lateral_force(af, fxf, fzf, front)
    fyr = fiala_lateral_force(ar, fxr, fzr, rear)
    dx = derivatives(x, u, fyf, fyr, kappa, vehicle)
    return np.array([dx[IV], dx[IBETA], dx[IR]])


def _newton(residual_fn, z0, scales):
    """Damped Newton with a central finite-difference Jacobian on scaled
    unknowns. Returns (z, residual_norm, converged)."""
    z = np.array(z0, dtype=float)
    res = residual_fn(z)
    norm = np.linalg.norm(res)
    for _ in range(NEWTON_MAX_ITER):
        if norm < NEWTON_TOL:
            return z, norm, True
        J = np.zeros((3, 3))
        for j in range(3):
            h = 1e-7 * scales[j]
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            try:
                J[:, j] = (residual_fn(zp) - residual_fn(zm)) / (2 * h)
            except ValueError:
                return z, norm, False
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            return z, norm, False
        # backtracking on the residual norm
        alpha = 1.0
        for _ in range(30):
            z_try = z + alpha * step
            try:
                res_try = residual_fn(z_try)
                norm_try = np.linalg.norm(res_try)
            except ValueError:
                norm_try = math.inf
            if norm_try < norm:
                z, res, norm = z_try, res_try, norm_try
                break
            alpha *= 0.5
        else:
            return z, norm, False
    return z, norm, norm < NEWTON_TOL


def solve_equilibrium(spec: EquilibriumSpec, vehicle: VehicleParams,
                      front: TireParams, rear: TireParams) -> DriftEquilibrium:
    """Multi-start damped Newton for the drift (countersteer) branch.

    Unknowns are (v, delta, fxr) with fxf prescribed, or (delta, fxr, fxf)
    with v prescribed. r = kappa*v is substituted, with the turn direction
    opposite the target sideslip.
    """
    turn = -math.copysign(1.0, spec.beta_des)
    kappa = turn / spec.radius
    beta = spec.beta_des
    d_sign = math.copysign(1.0, beta)  # countersteer: sign(delta) = -sign(r)

    delta_grid = [d_sign * d for d in (0.6, 0.45, 0.3, 0.15, 0.02)]
    fxr_grid = [2000.0, 4000.0, 6000.0, 8000.0]
    v_char = math.sqrt(front.mu * vehicle.g * spec.radius)

    candidates = []
    best_norm = math.inf

    if spec.fxf_fixed is not None:
        fxf = spec.fxf_fixed

        def residual(z):
            v = max(z[0], 0.5)
            return _rates(v, z[1], z[2], fxf, beta, kappa, vehicle, front, rear)

        scales = (10.0, 1.0, 1000.0)
        starts = [(vm * v_char, d0, f0)
                  for vm in (0.7, 0.95, 1.2) for d0 in delta_grid for f0 in fxr_grid]
        for z0 in starts:
            z, norm, ok = _newton(residual, z0, scales)
            best_norm = min(best_norm, norm)
            if ok:
                candidates.append((norm, z[1], z[0], z[1], z[2], fxf))
    else:
        v = spec.v_fixed

        def residual(z):
            return _rates(v, z[0], z[1], z[2], beta, kappa, vehicle, front, rear)

        scales = (1.0, 1000.0, 1000.0)
        starts = [(d0, f0, fb)
                  for d0 in delta_grid for f0 in fxr_grid for fb in (0.0, 0.5 * vehicle.fxf_min)]
        for z0 in starts:
            z, norm, ok = _newton(residual, z0, scales)
            best_norm = min(best_norm, norm)
            if ok:
                candidates.append((norm, z[0], v, z[0], z[1], z[2]))

    if not candidates:
        raise EquilibriumError(
            f"no equilibrium found for radius={spec.radius} beta={beta}", best_norm)

    feasible = []
    for norm, delta, v, d, fxr, fxf in candidates:
        r = kappa * v
        in_bounds = (abs(d) <= vehicle.delta_max
                     and vehicle.fxf_min <= fxf <= 0.0
                     and 0.0 <= fxr <= vehicle.fxr_max
                     and v > 0.5)
        countersteer = d * r < 0.0
        if in_bounds and countersteer:
            feasible.append((norm, abs(d), v, d, fxr, fxf))

    if not feasible:
        raise InfeasibleSpecError(
            f"{len(candidates)} converged solutions, none on the drift branch "
            f"within input bounds (radius={spec.radius}, beta={beta})")

    # deterministic pick: lowest residual, then lowest |delta|
    feasible.sort(key=lambda c: (c[0], c[1]))
    norm, _, v, delta, fxr, fxf = feasible[0]
    return DriftEquilibrium(v=v, r=kappa * v, beta=beta, delta=delta, fxr=fxr,
                            fxf=fxf, radius=spec.radius, residual_norm=norm)


def hold_equilibrium(eq: DriftEquilibrium, vehicle: VehicleParams, front: TireParams,
                     rear: TireParams, duration: float = 5.0, dt: float = 0.01) -> np.ndarray:
    """Integrate open-loop from the equilibrium with frozen inputs; returns
    the relative drift of the three velocity states."""
    path = PathDef(radius=eq.radius, approach_length=0.0,
                   turn_sign=math.copysign(1.0, eq.r * eq.radius / eq.v))
    x = np.array([eq.r, eq.v, eq.beta, 0.0, 0.0, -eq.beta])
    u = np.array([eq.delta, eq.fxf, eq.fxr])
    fzf, fzr = normal_loads(vehicle)

    def provider(xs, us):
        af, ar = slip_angles(xs, us[0], vehicle)
        return (fiala_lateral_force(af, us[1], fzf, front),
                fiala_lateral_force(ar, us[2], fzr, rear))

    x0 = x.copy()
    for _ in range(round(duration / dt)):
        x = rk4_step(x, u, dt, path, vehicle, provider)
    ref = np.array([abs(eq.r), eq.v, max(abs(eq.beta), 0.1)])
    return np.abs(x[:3] - x0[:3]) / ref


@dataclass
class ReferenceTrajectory:
    """Per-arc-length targets over approach + three laps, region tagged."""

    s: np.ndarray
    kappa: np.ndarray
    beta_ref: np.ndarray
    v_ref: np.ndarray
    fxf_ref: np.ndarray
    delta_ref: np.ndarray
    fxr_ref: np.ndarray
    region: list[str]
    v_sol: float
    equilibria: list[DriftEquilibrium]
    s_circle: float
    s_init_end: float
    lap_ends: list[float]

    @property
    def s_end(self) -> float:
        return self.lap_ends[-1]

    def region_of(self, s: float) -> str:
        if s < self.s_circle:
            return REGION_APPROACH
        if s < self.s_init_end:
            return REGION_INITIATION
        for name, end in zip(REGION_LAPS, self.lap_ends):
            if s < end:
                return name
        return REGION_LAPS[-1]

    def lookup(self, s: float) -> dict[str, float]:
        """Linear interpolation of all targets at arc position s (clamped)."""
        out = {}
        for name in ("kappa", "beta_ref", "v_ref", "fxf_ref", "delta_ref", "fxr_ref"):
            out[name] = float(np.interp(s, self.s, getattr(self, name)))
        out["r_ref"] = out["kappa"] * out["v_ref"]
        out["dpsi_ref"] = -out["beta_ref"]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "kappa", "beta_ref", "v_ref", "fxf_ref",
                        "delta_ref", "fxr_ref", "region"])
            for i in range(len(self.s)):
                w.writerow([f"{self.s[i]:.17g}", f"{self.kappa[i]:.17g}",
                            f"{self.beta_ref[i]:.17g}", f"{self.v_ref[i]:.17g}",
                            f"{self.fxf_ref[i]:.17g}", f"{self.delta_ref[i]:.17g}",
                            f"{self.fxr_ref[i]:.17g}", self.region[i]])


def build_reference(vehicle: VehicleParams, front: TireParams, rear: TireParams,
                    radius: float = 15.0, beta_des: float = math.radians(-40.0),
                    v_multipliers: tuple[float, ...] = (1.0, 0.95, 0.875),
                    approach_length: float = 90.7, initiation_length: float = 21.8,
                    blend_length: float = 5.0, ds: float = 0.25,
                    lookahead_pad: float = 40.0) -> ReferenceTrajectory:
    """Solve the per-lap equilibria and lay them out over arc length.

    Lap 1 is the no-brakes equilibrium (defines V_sol); later laps hold the
    scaled speeds with front braking. Targets are piecewise constant per lap
    with a linear blend at lap boundaries; the circle entry stays a step, the
    controller owns initiation.
    """
    eq0 = solve_equilibrium(EquilibriumSpec(radius, beta_des, fxf_fixed=0.0),
                            vehicle, front, rear)
    equilibria = [eq0]
    for mult in v_multipliers[1:]:
        equilibria.append(solve_equilibrium(
            EquilibriumSpec(radius, beta_des, v_fixed=mult * eq0.v),
            vehicle, front, rear))

    lap_len = 2 * math.pi * radius
    n_laps = len(v_multipliers)
    s_end = approach_length + n_laps * lap_len
    s = np.arange(0.0, s_end + lookahead_pad + ds, ds)
    turn = -math.copysign(1.0, beta_des)

    kappa = np.where(s < approach_length, 0.0, turn / radius)
    lap_starts = [approach_length + k * lap_len for k in range(n_laps)]

    def schedule(values_per_lap, approach_value):
        """Piecewise-constant per lap, linear blend over blend_length at
        boundaries between laps."""
        out = np.full_like(s, approach_value, dtype=float)
        for k, val in enumerate(values_per_lap):
            out[s >= lap_starts[k]] = val
        for k in range(1, n_laps):
            s_b = lap_starts[k]
            mask = (s >= s_b) & (s < s_b + blend_length)
            frac = (s[mask] - s_b) / blend_length
            out[mask] = values_per_lap[k - 1] + frac * (values_per_lap[k] - values_per_lap[k - 1])
        return out

    beta_ref = schedule([beta_des] * n_laps, 0.0)
    v_ref = schedule([eq.v for eq in equilibria], eq0.v)
    fxf_ref = schedule([eq.fxf for eq in equilibria], 0.0)
    delta_ref = schedule([eq.delta for eq in equilibria], 0.0)
    fxr_ref = schedule([eq.fxr for eq in equilibria], 0.0)

    lap_ends = [approach_length + (k + 1) * lap_len for k in range(n_laps)]
    ref = ReferenceTrajectory(
        s=s, kappa=kappa, beta_ref=beta_ref, v_ref=v_ref, fxf_ref=fxf_ref,
        delta_ref=delta_ref, fxr_ref=fxr_ref, region=[], v_sol=eq0.v,
        equilibria=equilibria, s_circle=approach_length,
        s_init_end=approach_length + initiation_length, lap_ends=lap_ends)
    ref.region = [ref.region_of(si) for si in s]
    return ref


def read_reference_csv(path) -> dict[str, np.ndarray]:
    """Plain columnar read-back of an exported reference (for round trips)."""
    cols: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            for k, val in row.items():
                cols.setdefault(k, []).append(val if k == "region" else float(val))
    return {k: (v if k == "region" else np.array(v)) for k, v in cols.items()}
