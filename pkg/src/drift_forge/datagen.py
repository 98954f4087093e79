"""Training-data generation: scripted drifting scenarios against the latent
plant, observer-emulated force labels (lag + noise), and dataset composition
with a controlled initiation share.

Each scenario drives a short straight, initiates a drift at the circle entry
(the tagged initiation event), then holds a commanded equilibrium under an
LQR stabilizer with seeded excitation. The stabilizer stands in for the
human/automated driving that produced the original telemetry.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .equilibrium import EquilibriumSpec, solve_equilibrium
from .plant import PlantSimulator
from .runlog import RunLog
from .tires import TireParams
from .vehicle import (
    IBETA, IDPSI, IE, IR, IS, IV,
    PathDef,
    VehicleParams,
    clip_control,
    derivative_jacobians,
    normal_loads,
    slip_angles,
)
from .nmpc import PhysicsFrontTire, _slip_partials_scalar
from .tires import _fiala_partials

REGION_STEADY = "steady"
REGION_INITIATION = "initiation"
INITIATION_WINDOW = 1.0  # seconds each side of the commanded drift onset

FEATURE_NAMES = ("r", "v", "beta", "delta", "fxf", "fzf")
DATASET_COLUMNS = ("t", "r", "v", "beta", "delta", "fxf", "fzf", "fyf_observed", "region")


@dataclass(frozen=True)
class ObserverConfig:
    lag_tau: float = 0.0    # s, first-order label lag
    noise_sigma: float = 0.0  # N, additive Gaussian

    def __post_init__(self):
        if self.lag_tau < 0 or self.noise_sigma < 0:
            raise ValueError("lag_tau and noise_sigma must be >= 0")


@dataclass(frozen=True)
class ScenarioSegment:
    """One drift-hold segment: target equilibrium plus excitation amplitudes."""

    duration: float          # s of drifting after the straight approach
    beta_deg: float = -40.0
    v_multiplier: float = 1.0  # of the segment's no-brake equilibrium speed
    straight_duration: float = 3.0
    dither_delta: float = 0.04   # rad
    dither_fxf: float = 350.0    # N
    dither_fxr: float = 400.0    # N


@dataclass
class Dataset:
    """Feature/label pairs in chronological order."""

    t: np.ndarray
    features: np.ndarray   # (N, 6): r, v, beta, delta, fxf, fzf
    labels: np.ndarray     # (N,) observed front lateral force
    regions: np.ndarray    # (N,) str

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def concatenate(cls, parts: list["Dataset"]) -> "Dataset":
        return cls(t=np.concatenate([p.t for p in parts]),
                   features=np.vstack([p.features for p in parts]),
                   labels=np.concatenate([p.labels for p in parts]),
                   regions=np.concatenate([p.regions for p in parts]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.t[idx], self.features[idx], self.labels[idx], self.regions[idx])


# -- scripted stabilizer -------------------------------------------------------

def _lqr_gain(A5, B5, q_diag, r_diag):
    Q = np.diag(q_diag)
    R = np.diag(r_diag)
    P = scipy.linalg.solve_continuous_are(A5, B5, Q, R)
    return np.linalg.solve(R, B5.T @ P)


_IDX5 = (IR, IV, IBETA, IE, IDPSI)


def _linearize5(x, u, kappa, vehicle, front: TireParams, rear: TireParams):
    """Nominal-model A, B restricted to (r, v, beta, e, dpsi)."""
    fzf, fzr = normal_loads(vehicle)
    af, ar, daf, dar = _slip_partials_scalar(x[IR], x[IV], x[IBETA], vehicle.a, vehicle.b)
    af -= u[0]
    fyf, dfyf_da, dfyf_dfx = _fiala_partials(af, u[1], fzf,
                                             front.cornering_stiffness, front.mu)
    fyr, dfyr_da, dfyr_dfx = _fiala_partials(ar, u[2], fzr,
                                             rear.cornering_stiffness, rear.mu)
    dfyf = np.array([dfyf_da * daf[0], dfyf_da * daf[1], dfyf_da * daf[2],
                     -dfyf_da, dfyf_dfx])
    dfyr = np.array([dfyr_da * dar[0], dfyr_da * dar[1], dfyr_da * dar[2], dfyr_dfx])
    A, B = derivative_jacobians(x, u, kappa, vehicle, fyf, fyr, dfyf, dfyr)
    return A[np.ix_(_IDX5, _IDX5)], A[np.ix_(_IDX5, [IS])], B[_IDX5, :]


class DriftStabilizer:
    """Equilibrium feedforward + LQR feedback on (r, v, beta, e, dpsi)."""

    Q_DIAG = (10.0, 2.0, 50.0, 1.0, 20.0)
    R_DIAG = (20.0, 5e-6, 5e-6)

    def __init__(self, x_eq, u_eq, kappa, vehicle, front, rear):
        self.x_eq = np.asarray(x_eq, dtype=float)
        self.u_eq = np.asarray(u_eq, dtype=float)
        self.vehicle = vehicle
        A5, _, B5 = _linearize5(self.x_eq, self.u_eq, kappa, vehicle, front, rear)
        self.K = _lqr_gain(A5, B5, self.Q_DIAG, self.R_DIAG)

    def control(self, x, dither=None) -> np.ndarray:
        dx = np.array([x[i] for i in _IDX5]) - np.array([self.x_eq[i] for i in _IDX5])
        u = self.u_eq - self.K @ dx
        if dither is not None:
            u = u + dither
        return clip_control(u, self.vehicle)


class _Dither:
    """First-order-filtered white noise per input channel, seeded."""

    def __init__(self, amplitudes, rng, dt, tau=0.3):
        self.amp = np.asarray(amplitudes, dtype=float)
        self.rng = rng
        self.alpha = dt / tau
        self.state = np.zeros(3)

    def sample(self) -> np.ndarray:
        white = self.rng.standard_normal(3)
        self.state += self.alpha * (white - self.state)
        # steady-state std of the filter is ~sqrt(alpha/2); renormalize
        return self.amp * self.state / math.sqrt(self.alpha / 2.0)


# -- scenario runner -----------------------------------------------------------

def run_scenario(segment: ScenarioSegment, plant: PlantSimulator,
                 vehicle: VehicleParams, front: TireParams, rear: TireParams,
                 seed: int, kick_duration: float = 0.5) -> RunLog:
    """Simulate one straight-then-drift scenario; returns the plant log.

    The drift onset (circle entry) is the initiation event: rows within
    +/-1 s of it are region-tagged 'initiation', the rest 'steady'.
    """
    dt = plant.dt
    path = plant.path
    rng = np.random.default_rng(seed)
    log = RunLog()
    log.meta = {"seed": seed, "dt": dt, "beta_deg": segment.beta_deg,
                "v_multiplier": segment.v_multiplier, "truncated": False,
                "truncate_reason": None}
    if segment.duration <= 0:
        return log

    beta_t = math.radians(segment.beta_deg)
    eq_free = solve_equilibrium(EquilibriumSpec(path.radius, beta_t, fxf_fixed=0.0),
                                vehicle, front, rear)
    if segment.v_multiplier == 1.0:
        eq = eq_free
    else:
        eq = solve_equilibrium(
            EquilibriumSpec(path.radius, beta_t, v_fixed=segment.v_multiplier * eq_free.v),
            vehicle, front, rear)

    kappa = path.turn_sign / path.radius
    x_eq = np.array([eq.r, eq.v, eq.beta, 0.0, 0.0, -eq.beta])
    drift_ctl = DriftStabilizer(x_eq, np.array([eq.delta, eq.fxf, eq.fxr]),
                                kappa, vehicle, front, rear)
    x_straight = np.array([0.0, eq.v, 0.0, 0.0, 0.0, 0.0])
    straight_ctl = DriftStabilizer(x_straight, np.zeros(3), 0.0, vehicle, front, rear)
    dither = _Dither((segment.dither_delta, segment.dither_fxf, segment.dither_fxr),
                     rng, dt)

    x0 = np.array([0.0, eq.v, 0.0, 0.0, rng.normal(0.0, 0.1), 0.0])
    plant.reset(x0)
    t_onset = None
    n_steps = int(round((segment.straight_duration + segment.duration) / dt))
    kick = np.array([0.35 * path.turn_sign, 0.0, vehicle.fxr_max])
    for _ in range(n_steps):
        on_circle = plant.x[IS] >= path.approach_length
        if on_circle and t_onset is None:
            t_onset = plant.t
        if not on_circle:
            u = straight_ctl.control(plant.x)
        elif plant.t - t_onset < kick_duration:
            u = clip_control(kick, vehicle)
        else:
            u = drift_ctl.control(plant.x, dither.sample())
        out = plant.outputs(u)
        x = plant.x
        log.append(t=plant.t, r=x[IR], v=x[IV], beta=x[IBETA], s=x[IS], e=x[IE],
                   dpsi=x[IDPSI], delta=u[0], fxf=u[1], fxr=u[2],
                   fyf=out["fyf"], fyr=out["fyr"], fzf=out["fzf"], fzr=out["fzr"],
                   tire_temp=out["tire_temp"], region=REGION_STEADY,
                   replan=0, iterations=0, solve_time=0.0, converged=1)
        try:
            plant.step(u)
        except (ValueError, FloatingPointError) as exc:
            log.meta["truncated"] = True
            log.meta["truncate_reason"] = f"dynamics: {exc}"
            break
        reason = plant.diverged()
        if reason:
            log.meta["truncated"] = True
            log.meta["truncate_reason"] = reason
            break

    if t_onset is not None:
        t_arr = log.array("t")
        window = np.abs(t_arr - t_onset) <= INITIATION_WINDOW
        regions = log.columns["region"]
        for i in np.nonzero(window)[0]:
            regions[i] = REGION_INITIATION
    log.meta["t_onset"] = t_onset
    return log


def label_with_observer(log: RunLog, cfg: ObserverConfig, seed: int) -> Dataset:
    """First-order-lagged, noise-corrupted front force labels for every row."""
    if len(log) == 0:
        raise ValueError("cannot label an empty log")
    t = log.array("t")
    truth = log.array("fyf")
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.01
    if cfg.lag_tau > 0:
        decay = math.exp(-dt / cfg.lag_tau)
        lagged = np.empty_like(truth)
        acc = truth[0]
        for i, f in enumerate(truth):
            acc = decay * acc + (1.0 - decay) * f
            lagged[i] = acc
    else:
        lagged = truth.copy()
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        lagged = lagged + rng.normal(0.0, cfg.noise_sigma, size=len(lagged))
    features = np.column_stack([log.array(n) for n in FEATURE_NAMES])
    return Dataset(t=t, features=features, labels=lagged,
                   regions=np.array(log.regions(), dtype=object))


def compose_dataset(dataset: Dataset, initiation_fraction: float, seed: int) -> Dataset:
    """Seeded subsample (without replacement) hitting the requested initiation
    share while keeping as many samples as possible; chronological order kept."""
    if not 0.0 <= initiation_fraction <= 1.0:
        raise ValueError("initiation_fraction must be in [0, 1]")
    is_init = dataset.regions == REGION_INITIATION
    idx_init = np.nonzero(is_init)[0]
    idx_steady = np.nonzero(~is_init)[0]
    n_i_avail, n_s_avail = len(idx_init), len(idx_steady)
    f = initiation_fraction
    if f == 0.0:
        n_i, n_s = 0, n_s_avail
    elif f == 1.0:
        n_i, n_s = n_i_avail, 0
    else:
        n_i = min(n_i_avail, int(math.floor(f / (1.0 - f) * n_s_avail)))
        n_s = min(n_s_avail, int(round(n_i * (1.0 - f) / f)))
        if n_i == 0:
            raise ValueError(
                f"not enough initiation samples for fraction {f} "
                f"(have {n_i_avail} initiation, {n_s_avail} steady)")
    rng = np.random.default_rng(seed)
    pick_i = rng.choice(idx_init, size=n_i, replace=False) if n_i else np.array([], dtype=int)
    pick_s = rng.choice(idx_steady, size=n_s, replace=False) if n_s else np.array([], dtype=int)
    picked = np.sort(np.concatenate([pick_i, pick_s]).astype(int))
    return dataset.subset(picked)


def coverage_report(dataset: Dataset) -> dict:
    rep = {}
    for j, name in enumerate(FEATURE_NAMES):
        col = dataset.features[:, j]
        rep[name] = {"min": float(col.min()), "max": float(col.max())}
    n_init = int(np.sum(dataset.regions == REGION_INITIATION))
    rep["n_samples"] = len(dataset)
    rep["n_initiation"] = n_init
    rep["initiation_fraction"] = n_init / len(dataset) if len(dataset) else 0.0
    rep["label"] = {"min": float(dataset.labels.min()), "max": float(dataset.labels.max())}
    return rep


def covers_with_margin(report: dict, ranges: dict[str, tuple[float, float]],
                       margin: float = 0.10) -> dict[str, bool]:
    """Does the dataset cover each reference feature range with headroom?"""
    out = {}
    for name, (lo, hi) in ranges.items():
        span = max(hi - lo, 1e-9)
        out[name] = (report[name]["min"] <= lo - margin * span
                     and report[name]["max"] >= hi + margin * span)
    return out


# -- CSV ------------------------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for i in range(len(dataset)):
            row = [f"{dataset.t[i]:.17g}"]
            row += [f"{x:.17g}" for x in dataset.features[i]]
            row.append(f"{dataset.labels[i]:.17g}")
            row.append(str(dataset.regions[i]))
            w.writerow(row)


def read_dataset(path) -> Dataset:
    t, feats, labels, regions = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return Dataset(np.array([]), np.empty((0, 6)), np.array([]),
                           np.array([], dtype=object))
        if header != list(DATASET_COLUMNS):
            raise DatasetFormatError(f"{path}: unexpected header {header}")
        for ln, row in enumerate(reader, start=2):
            if len(row) != len(DATASET_COLUMNS):
                raise DatasetFormatError(
                    f"{path}: line {ln}: expected {len(DATASET_COLUMNS)} columns, "
                    f"got {len(row)}")
            try:
                vals = [float(x) for x in row[:-1]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {ln}: {exc}") from None
            t.append(vals[0])
            feats.append(vals[1:7])
            labels.append(vals[7])
            regions.append(row[-1])
    return Dataset(np.array(t), np.array(feats).reshape(-1, 6), np.array(labels),
                   np.array(regions, dtype=object))
