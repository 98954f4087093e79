"""The simulation ground truth: single-track dynamics on the reference path
with the latent-effect front tire, evolving tread temperature, and optional
longitudinal load transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tires import (
    PlantTireConfig,
    TireParams,
    TireThermalState,
    fiala_lateral_force,
    front_slip_power,
    plant_lateral_force,
    thermal_step,
)
from .vehicle import (
    IBETA, IS, IV,
    PathDef,
    VehicleParams,
    normal_loads,
    loads_with_transfer,
    rk4_step,
    slip_angles,
)

SPINOUT_BETA = np.radians(80.0)
MIN_RUN_SPEED = 0.5


@dataclass(frozen=True)
class PlantLatentConfig:
    """Which latent effects the plant exposes; all off = nominal plant."""

    thermal_fade: bool = False
    steer_stiffness: bool = False
    load_transfer_gain: float = 0.0  # m^-1-ish shift per N of total fx; 0 disables


class PlantSimulator:
    """Holds the vehicle + thermal state and advances them at a fixed dt."""

    def __init__(self, vehicle: VehicleParams, path: PathDef, tire_cfg: PlantTireConfig,
                 rear: TireParams, latent: PlantLatentConfig = PlantLatentConfig(),
                 dt: float = 0.01):
        self.vehicle = vehicle
        self.path = path
        self.tire_cfg = tire_cfg
        self.rear = rear
        self.latent = latent
        self.dt = dt
        self.x = np.zeros(6)
        self.thermal = TireThermalState(tire_cfg.t_ambient)
        self.t = 0.0

    def reset(self, x0: np.ndarray, temperature: float | None = None) -> None:
        self.x = np.array(x0, dtype=float)
        self.thermal = TireThermalState(
            self.tire_cfg.t_ambient if temperature is None else temperature)
        self.t = 0.0

    def loads(self, u: np.ndarray) -> tuple[float, float]:
        if self.latent.load_transfer_gain != 0.0:
            return loads_with_transfer(self.vehicle, u[1] + u[2], self.latent.load_transfer_gain)
        return normal_loads(self.vehicle)

    def tire_forces(self, xs: np.ndarray, u: np.ndarray) -> tuple[float, float]:
        af, ar = slip_angles(xs, u[0], self.vehicle)
        fzf, fzr = self.loads(u)
        delta_eff = u[0] if self.latent.steer_stiffness else 0.0
        temp_eff = self.thermal.temperature if self.latent.thermal_fade else self.tire_cfg.t_ref
        fyf = plant_lateral_force(af, u[1], fzf, delta_eff, TireThermalState(temp_eff),
                                  self.tire_cfg)
        fyr = fiala_lateral_force(ar, u[2], fzr, self.rear)
        return fyf, fyr

    def outputs(self, u: np.ndarray) -> dict:
        """Plant truth at the current state under control u."""
        af, ar = slip_angles(self.x, u[0], self.vehicle)
        fzf, fzr = self.loads(u)
        fyf, fyr = self.tire_forces(self.x, u)
        return {"alpha_f": af, "alpha_r": ar, "fyf": fyf, "fyr": fyr,
                "fzf": fzf, "fzr": fzr, "tire_temp": self.thermal.temperature}

    def step(self, u: np.ndarray) -> dict:
        """Advance one dt; returns the pre-step outputs (what the log records)."""
        out = self.outputs(u)
        power = front_slip_power(out["fyf"], u[1], self.x[IV], out["alpha_f"])
        self.x = rk4_step(self.x, u, self.dt, self.path, self.vehicle, self.tire_forces)
        self.thermal = thermal_step(self.thermal, power, self.dt, self.tire_cfg)
        self.t += self.dt
        return out

    def diverged(self) -> str | None:
        if abs(self.x[IBETA]) > SPINOUT_BETA:
            return "spinout"
        if self.x[IV] < MIN_RUN_SPEED:
            return "stall"
        return None
