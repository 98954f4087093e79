"""Small feedforward network for front lateral force: 6 -> 8 -> 16 -> 1 with
tanh hidden layers, trained with Adam on mean squared error.

Inputs follow the feature order used across the package:
    [r, v, beta, delta, fxf, fzf]
The single output is the front lateral force in newtons. Inputs are
z-scored; labels are scaled by max |label|.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

WEIGHTS_FORMAT_VERSION = 1
ACT_TANH = 0
ACT_IDENTITY = 1


class WeightsFormatError(ValueError):
    """Weights file is corrupt, truncated, or inconsistent with the config."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite at epoch {epoch} ({loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...] = (6, 8, 16, 1)
    hidden_activation: str = "tanh"  # "identity" is a test hook

    def __post_init__(self):
        if len(self.layer_sizes) != 4:
            raise ValueError("exactly two hidden layers expected")
        if self.layer_sizes[-1] != 1:
            raise ValueError("single output expected")
        if self.hidden_activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def act_flag(self) -> int:
        return ACT_TANH if self.hidden_activation == "tanh" else ACT_IDENTITY


@dataclass
class MlpWeights:
    weights: list[np.ndarray]  # per layer, shape (n_out, n_in)
    biases: list[np.ndarray]   # per layer, shape (n_out,)

    def validate(self, cfg: MlpConfig) -> None:
        sizes = cfg.layer_sizes
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise WeightsFormatError("expected 3 weight matrices and 3 bias vectors")
        for li in range(3):
            want = (sizes[li + 1], sizes[li])
            if self.weights[li].shape != want:
                raise WeightsFormatError(
                    f"layer {li} weight shape {self.weights[li].shape} != {want}")
            if self.biases[li].shape != (sizes[li + 1],):
                raise WeightsFormatError(
                    f"layer {li} bias shape {self.biases[li].shape} != ({sizes[li + 1]},)")
            for arr in (self.weights[li], self.biases[li]):
                if not np.all(np.isfinite(arr)):
                    raise WeightsFormatError(f"layer {li} has non-finite entries")


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    label_scale: float

    @classmethod
    def fit(cls, features: np.ndarray, labels: np.ndarray,
            allow_constant: bool = False) -> "Normalizer":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        degenerate = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        if np.any(degenerate):
            if not allow_constant:
                bad = list(np.nonzero(degenerate)[0])
                raise ValueError(f"degenerate (constant) features at indices {bad}")
            std = np.where(degenerate, 1.0, std)
        scale = float(np.max(np.abs(labels)))
        return cls(mean=mean, std=std, label_scale=scale if scale > 0 else 1.0)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    epochs: int = 1000
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    allow_constant_features: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def init_weights(cfg: MlpConfig, seed: int) -> MlpWeights:
    """Glorot-style scaled uniform init, seeded; biases start at zero."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:]):
        lim = math.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return MlpWeights(ws, bs)


def _activate(z: np.ndarray, act: int) -> np.ndarray:
    return np.tanh(z) if act == ACT_TANH else z


def _activate_prime(h: np.ndarray, act: int) -> np.ndarray:
    return 1.0 - h * h if act == ACT_TANH else np.ones_like(h)


def forward_batch(features: np.ndarray, w: MlpWeights, n: Normalizer,
                  act: int = ACT_TANH) -> np.ndarray:
    """Vectorized forward pass; returns forces in newtons, shape (N,)."""
    xh = n.standardize(features)
    h1 = _activate(xh @ w.weights[0].T + w.biases[0], act)
    h2 = _activate(h1 @ w.weights[1].T + w.biases[1], act)
    y = h2 @ w.weights[2].T + w.biases[2]
    return n.label_scale * y[:, 0]


def forward(x, w: MlpWeights, n: Normalizer, act: int = ACT_TANH) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return float(forward_batch(x[None, :], w, n, act)[0])


def forward_with_input_jacobian(x, w: MlpWeights, n: Normalizer,
                                act: int = ACT_TANH) -> tuple[float, np.ndarray]:
    """Force and its analytic gradient wrt the raw (unstandardized) inputs."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    xh = (x - n.mean) / n.std
    h1 = _activate(w.weights[0] @ xh + w.biases[0], act)
    h2 = _activate(w.weights[1] @ h1 + w.biases[1], act)
    y = float(w.weights[2] @ h2 + w.biases[2])
    g2 = w.weights[2][0] * _activate_prime(h2, act)
    g1 = (g2 @ w.weights[1]) * _activate_prime(h1, act)
    gx = (g1 @ w.weights[0]) / n.std
    return n.label_scale * y, n.label_scale * gx


def loss_and_gradients(xh: np.ndarray, t: np.ndarray, w: MlpWeights, act: int):
    """Scaled-unit MSE and gradients for already-standardized features xh and
    scaled targets t."""
    n_samples = xh.shape[0]
    h1 = _activate(xh @ w.weights[0].T + w.biases[0], act)
    h2 = _activate(h1 @ w.weights[1].T + w.biases[1], act)
    y = h2 @ w.weights[2].T + w.biases[2]
    err = y - t[:, None]
    loss = float(np.mean(err * err))

    dy = 2.0 * err / n_samples
    dw3 = dy.T @ h2
    db3 = dy.sum(axis=0)
    dh2 = dy @ w.weights[2]
    dz2 = dh2 * _activate_prime(h2, act)
    dw2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ w.weights[1]
    dz1 = dh1 * _activate_prime(h1, act)
    dw1 = dz1.T @ xh
    db1 = dz1.sum(axis=0)
    return loss, [dw1, dw2, dw3], [db1, db2, db3]


class AdamState:
    def __init__(self, w: MlpWeights, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(a) for a in w.weights + w.biases]
        self.v = [np.zeros_like(a) for a in w.weights + w.biases]

    def step(self, w: MlpWeights, grads_w, grads_b) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        params = w.weights + w.biases
        grads = list(grads_w) + list(grads_b)
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g
            p -= c.step_size * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + c.epsilon)


def adam_single_step(gradient: float, cfg: TrainConfig) -> float:
    """First bias-corrected Adam update on a scalar parameter at zero."""
    m = (1.0 - cfg.beta1) * gradient / (1.0 - cfg.beta1)
    v = (1.0 - cfg.beta2) * gradient * gradient / (1.0 - cfg.beta2)
    return -cfg.step_size * m / (math.sqrt(v) + cfg.epsilon)


def train(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          mlp_cfg: MlpConfig = MlpConfig()) -> tuple[MlpWeights, Normalizer, dict]:
    """Mini-batch Adam on MSE; deterministic given the seed.

    The validation split is the chronological tail. Loss history is reported
    in physical units (N^2) per epoch for both splits.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2 or features.shape[1] != mlp_cfg.layer_sizes[0]:
        raise ValueError(f"features must be (N, {mlp_cfg.layer_sizes[0]})")
    if not np.all(np.isfinite(labels)):
        raise ValueError("labels must be finite")
    if len(features) < 2 * cfg.batch_size:
        raise ValueError(
            f"need at least {2 * cfg.batch_size} samples, got {len(features)}")

    n_val = int(round(cfg.val_fraction * len(features)))
    n_train = len(features) - n_val
    x_train, y_train = features[:n_train], labels[:n_train]
    x_val, y_val = features[n_train:], labels[n_train:]

    norm = Normalizer.fit(x_train, y_train, allow_constant=cfg.allow_constant_features)
    xh = norm.standardize(x_train)
    t = y_train / norm.label_scale
    xh_val = norm.standardize(x_val) if n_val else None
    t_val = y_val / norm.label_scale if n_val else None

    act = mlp_cfg.act_flag
    w = init_weights(mlp_cfg, cfg.seed)
    # zero output layer + label-mean bias: predictions start at the label mean
    w.weights[2][:] = 0.0
    w.biases[2][:] = t.mean()
    adam = AdamState(w, cfg)
    rng = np.random.default_rng(cfg.seed + 1)

    scale_sq = norm.label_scale ** 2
    history = {"train_mse": [], "val_mse": []}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(xh[idx], t[idx], w, act)
            adam.step(w, gw, gb)
            epoch_loss += loss
            n_batches += 1
        train_mse = scale_sq * epoch_loss / n_batches
        if not math.isfinite(train_mse):
            raise TrainingDivergedError(epoch, train_mse)
        history["train_mse"].append(train_mse)
        if n_val:
            resid = forward_batch(x_val, w, norm, act) - y_val
            history["val_mse"].append(float(np.mean(resid * resid)))
    return w, norm, history


# -- serialization ------------------------------------------------------------

def save_weights(path, w: MlpWeights, n: Normalizer, cfg: MlpConfig) -> None:
    doc = {
        "version": WEIGHTS_FORMAT_VERSION,
        "layer_sizes": list(cfg.layer_sizes),
        "activation": cfg.hidden_activation,
        "weights": [wi.tolist() for wi in w.weights],
        "biases": [bi.tolist() for bi in w.biases],
        "normalizer": {
            "mean": n.mean.tolist(),
            "std": n.std.tolist(),
            "label_scale": n.label_scale,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_weights(path, expected_cfg: MlpConfig | None = None
                 ) -> tuple[MlpWeights, Normalizer, MlpConfig]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"unreadable weights file {path}: {exc}") from exc
    try:
        if doc["version"] != WEIGHTS_FORMAT_VERSION:
            raise WeightsFormatError(f"unsupported weights version {doc['version']}")
        cfg = MlpConfig(tuple(doc["layer_sizes"]), doc["activation"])
        w = MlpWeights([np.array(m, dtype=float) for m in doc["weights"]],
                       [np.array(b, dtype=float) for b in doc["biases"]])
        nd = doc["normalizer"]
        norm = Normalizer(np.array(nd["mean"], dtype=float),
                          np.array(nd["std"], dtype=float),
                          float(nd["label_scale"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WeightsFormatError):
            raise
        raise WeightsFormatError(f"malformed weights file {path}: {exc}") from exc
    if expected_cfg is not None and tuple(cfg.layer_sizes) != tuple(expected_cfg.layer_sizes):
        raise WeightsFormatError(
            f"layer sizes {cfg.layer_sizes} do not match expected {expected_cfg.layer_sizes}")
    w.validate(cfg)
    if norm.mean.shape != (cfg.layer_sizes[0],) or norm.std.shape != (cfg.layer_sizes[0],):
        raise WeightsFormatError("normalizer shape mismatch")
    if np.any(norm.std <= 0):
        raise WeightsFormatError("normalizer std must be positive")
    return w, norm, cfg


# -- compiled scalar kernels (controller hot path) ----------------------------

@njit(cache=True)
def _mlp_forward(x, pack, n0, n1, n2, act):
    o = 0
    h1 = np.empty(n1)
    for j in range(n1):
        s = 0.0
        for i in range(n0):
            s += pack[o + j * n0 + i] * x[i]
        h1[j] = s
    o += n1 * n0
    for j in range(n1):
        z = h1[j] + pack[o + j]
        h1[j] = math.tanh(z) if act == 0 else z
    o += n1
    h2 = np.empty(n2)
    for j in range(n2):
        s = 0.0
        for i in range(n1):
            s += pack[o + j * n1 + i] * h1[i]
        h2[j] = s
    o += n2 * n1
    for j in range(n2):
        z = h2[j] + pack[o + j]
        h2[j] = math.tanh(z) if act == 0 else z
    o += n2
    y = pack[o + n2]
    for i in range(n2):
        y += pack[o + i] * h2[i]
    return y


@njit(cache=True)
def _mlp_forward_jac(x, pack, n0, n1, n2, act, jac_out):
    o1 = 0
    ob1 = n1 * n0
    o2 = ob1 + n1
    ob2 = o2 + n2 * n1
    o3 = ob2 + n2

    h1 = np.empty(n1)
    d1 = np.empty(n1)
    for j in range(n1):
        s = pack[ob1 + j]
        for i in range(n0):
            s += pack[o1 + j * n0 + i] * x[i]
        if act == 0:
            h = math.tanh(s)
            h1[j] = h
            d1[j] = 1.0 - h * h
        else:
            h1[j] = s
            d1[j] = 1.0
    h2 = np.empty(n2)
    d2 = np.empty(n2)
    for j in range(n2):
        s = pack[ob2 + j]
        for i in range(n1):
            s += pack[o2 + j * n1 + i] * h1[i]
        if act == 0:
            h = math.tanh(s)
            h2[j] = h
            d2[j] = 1.0 - h * h
        else:
            h2[j] = s
            d2[j] = 1.0
    y = pack[o3 + n2]
    for i in range(n2):
        y += pack[o3 + i] * h2[i]

    g1 = np.empty(n1)
    for i in range(n1):
        g1[i] = 0.0
    for j in range(n2):
        gj = pack[o3 + j] * d2[j]
        for i in range(n1):
            g1[i] += gj * pack[o2 + j * n1 + i]
    for i in range(n0):
        jac_out[i] = 0.0
    for j in range(n1):
        gj = g1[j] * d1[j]
        for i in range(n0):
            jac_out[i] += gj * pack[o1 + j * n0 + i]
    return y


class CompiledMlp:
    """Flat-packed network for microsecond-level scalar evaluation."""

    def __init__(self, w: MlpWeights, n: Normalizer, cfg: MlpConfig = MlpConfig()):
        w.validate(cfg)
        self.cfg = cfg
        self.norm = n
        self.n0, self.n1, self.n2 = cfg.layer_sizes[0], cfg.layer_sizes[1], cfg.layer_sizes[2]
        self.pack = np.concatenate([
            w.weights[0].ravel(), w.biases[0],
            w.weights[1].ravel(), w.biases[1],
            w.weights[2].ravel(), w.biases[2],
        ])
        self._xh = np.empty(self.n0)
        self._jac = np.empty(self.n0)

    def forward(self, x) -> float:
        xh = self._xh
        mean, std = self.norm.mean, self.norm.std
        for i in range(self.n0):
            xh[i] = (x[i] - mean[i]) / std[i]
        y = _mlp_forward(xh, self.pack, self.n0, self.n1, self.n2, self.cfg.act_flag)
        return self.norm.label_scale * y

    def forward_jac(self, x) -> tuple[float, np.ndarray]:
        xh = self._xh
        mean, std = self.norm.mean, self.norm.std
        for i in range(self.n0):
            xh[i] = (x[i] - mean[i]) / std[i]
        y = _mlp_forward_jac(xh, self.pack, self.n0, self.n1, self.n2,
                             self.cfg.act_flag, self._jac)
        scale = self.norm.label_scale
        return scale * y, scale * self._jac / std
