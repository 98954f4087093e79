"""Brush-model tire forces with friction-circle coupling, plus the richer
"plant" front tire (thermal fade, steering-dependent stiffness) used only as
simulation ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit

# Slip angles beyond +/-90 deg are clamped before entering the brush formula.
SLIP_CLIP = math.pi / 2 - 1e-6
# Fade never removes more than 80% of nominal friction.
MU_FLOOR_FRACTION = 0.2
# Steering-dependent stiffness never removes more than 90% of nominal C.
STIFFNESS_FLOOR_FRACTION = 0.1


@dataclass(frozen=True)
class TireParams:
    """Nominal brush-model parameters for one axle."""

    cornering_stiffness: float  # N/rad
    mu: float                   # dimensionless

    def __post_init__(self):
        if not self.cornering_stiffness > 0:
            raise ValueError(f"cornering_stiffness must be > 0, got {self.cornering_stiffness}")
        if not 0 < self.mu <= 2:
            raise ValueError(f"mu must be in (0, 2], got {self.mu}")


@dataclass(frozen=True)
class TireThermalState:
    temperature: float  # degC

    def __post_init__(self):
        if not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite")


@dataclass(frozen=True)
class PlantTireConfig:
    """Latent-effect extension of the nominal tire, simulation-plant only.

    Friction fades linearly above t_ref; cornering stiffness scales with
    steering magnitude (contact-patch effect).
    """

    base: TireParams
    t_ambient: float = 25.0            # degC
    t_ref: float = 40.0                # degC, fade onset
    heat_gain: float = 5e-4            # degC per J of slip work
    cool_rate: float = 0.025           # 1/s
    fade_slope: float = 0.005          # fraction of mu lost per degC above t_ref
    steer_stiffness_slope: float = -0.15  # fractional C change per rad of |steering|

    def __post_init__(self):
        if self.fade_slope < 0:
            raise ValueError("fade_slope must be >= 0")
        if not self.cool_rate > 0:
            raise ValueError("cool_rate must be > 0")

    def effective_mu(self, temperature: float) -> float:
        fade = self.fade_slope * max(0.0, temperature - self.t_ref)
        return max(self.base.mu * (1.0 - fade), MU_FLOOR_FRACTION * self.base.mu)

    def effective_stiffness(self, delta: float) -> float:
        c = self.base.cornering_stiffness * (1.0 + self.steer_stiffness_slope * abs(delta))
        return max(c, STIFFNESS_FLOOR_FRACTION * self.base.cornering_stiffness)


@njit(cache=True)
def _fiala(alpha: float, fx: float, fz: float, c: float, mu: float) -> float:
    """Signed lateral force; odd in alpha by construction (magnitude on |tan|)."""
    f_limit = mu * fz
    rem = f_limit * f_limit - fx * fx
    if rem <= 0.0:
        return 0.0
    f_max = math.sqrt(rem)
    if alpha > SLIP_CLIP:
        alpha = SLIP_CLIP
    elif alpha < -SLIP_CLIP:
        alpha = -SLIP_CLIP
    t = math.tan(abs(alpha))
    t_sl = 3.0 * f_max / c
    if t < t_sl:
        mag = c * t - c * c * t * t / (3.0 * f_max) + c ** 3 * t ** 3 / (27.0 * f_max * f_max)
    else:
        mag = f_max
    return -math.copysign(mag, alpha)


@njit(cache=True)
def _fiala_partials(alpha: float, fx: float, fz: float, c: float, mu: float):
    """(fy, dfy/dalpha, dfy/dfx). Clamped/saturated regions return zero slopes
    where the force is flat."""
    f_limit = mu * fz
    rem = f_limit * f_limit - fx * fx
    if rem <= 0.0:
        return 0.0, 0.0, 0.0
    f_max = math.sqrt(rem)
    clamped = False
    if alpha > SLIP_CLIP:
        alpha = SLIP_CLIP
        clamped = True
    elif alpha < -SLIP_CLIP:
        alpha = -SLIP_CLIP
        clamped = True
    t_signed = math.tan(alpha)
    t = abs(t_signed)
    t_sl = 3.0 * f_max / c
    dfmax_dfx = -fx / f_max
    if t < t_sl:
        mag = c * t - c * c * t * t / (3.0 * f_max) + c ** 3 * t ** 3 / (27.0 * f_max * f_max)
        dmag_dt = c - 2.0 * c * c * t / (3.0 * f_max) + c ** 3 * t * t / (9.0 * f_max * f_max)
        dmag_dfmax = c * c * t * t / (3.0 * f_max * f_max) - 2.0 * c ** 3 * t ** 3 / (27.0 * f_max ** 3)
        sgn = 1.0 if alpha >= 0.0 else -1.0
        dfy_dalpha = 0.0 if clamped else -dmag_dt * (1.0 + t_signed * t_signed)
        return -sgn * mag, dfy_dalpha, -sgn * dmag_dfmax * dfmax_dfx
    sgn = 1.0 if alpha >= 0.0 else -1.0
    return -sgn * f_max, 0.0, -sgn * dfmax_dfx


def derating_factor(fx: float, mu: float, fz: float) -> tuple[float, bool]:
    """Friction-circle derating xi = sqrt(1 - (fx/(mu fz))^2) in [0, 1].

    Returns (xi, saturated); saturated flags |fx| > mu*fz, in which case xi
    clamps to 0 (infeasible longitudinal demand).
    """
    if not fz > 0:
        raise ValueError(f"fz must be > 0, got {fz}")
    ratio = fx / (mu * fz)
    if abs(ratio) > 1.0:
        return 0.0, True
    return math.sqrt(1.0 - ratio * ratio), False


def fiala_lateral_force(alpha: float, fx: float, fz: float, params: TireParams) -> float:
    """Brush-model lateral force (N) with the available force derated by fx.

    Cubic in tan(alpha) up to the sliding angle, saturating at xi*mu*fz.
    Fully consumed friction circle returns 0.
    """
    if not fz > 0:
        raise ValueError(f"fz must be > 0, got {fz}")
    return _fiala(alpha, fx, fz, params.cornering_stiffness, params.mu)


def plant_lateral_force(
    alpha: float,
    fx: float,
    fz: float,
    delta: float,
    thermal: TireThermalState,
    cfg: PlantTireConfig,
) -> float:
    """Ground-truth front tire: nominal brush law with temperature-faded mu
    and steering-scaled stiffness."""
    if not fz > 0:
        raise ValueError(f"fz must be > 0, got {fz}")
    mu_eff = cfg.effective_mu(thermal.temperature)
    c_eff = cfg.effective_stiffness(delta)
    return _fiala(alpha, fx, fz, c_eff, mu_eff)


def thermal_step(
    state: TireThermalState, slip_power: float, dt: float, cfg: PlantTireConfig
) -> TireThermalState:
    """Explicit-Euler tread temperature update from slip power and cooling."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if slip_power < 0:
        raise ValueError("slip_power must be >= 0")
    t = state.temperature
    t_next = t + dt * (cfg.heat_gain * slip_power - cfg.cool_rate * (t - cfg.t_ambient))
    return TireThermalState(t_next)


def front_slip_power(fy: float, fx: float, v: float, alpha: float, brake_slip_coeff: float = 0.05) -> float:
    """Heating power surrogate: lateral slip power plus a braking-slip term.

    No wheel-speed state exists, so the longitudinal slip velocity is
    approximated as brake_slip_coeff * v.
    """
    return abs(fy * v * math.sin(alpha)) + abs(fx) * brake_slip_coeff * abs(v)
