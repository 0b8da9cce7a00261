"""Transfer-performance predictor: robust scaling plus a small MLP.

The regressor maps the 18 pair features to the expected cross-subject
accuracy.  It is deliberately implemented from scratch in numpy so the
backpropagated gradients can be checked against finite differences, which
is the load-bearing correctness test for this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericalError

MODEL_FORMAT_VERSION = 1
LAYER_SIZES = (18, 50, 50, 1)
PASS_THROUGH_IQR = 1e-12


@dataclass(frozen=True)
class RobustScaler:
    """Per-feature (x - median) / IQR with pass-through for constant columns."""

    median: np.ndarray
    iqr: np.ndarray

    def apply(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        scale = np.where(self.iqr < PASS_THROUGH_IQR, 1.0, self.iqr)
        shift = np.where(self.iqr < PASS_THROUGH_IQR, 0.0, self.median)
        return (x - shift) / scale


def scaler_fit(x) -> RobustScaler:
    """Fit medians and interquartile ranges (25th/75th, linear interpolation)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("scaler_fit: need a 2-d array with at least 2 samples")
    q25, q50, q75 = np.percentile(x, [25.0, 50.0, 75.0], axis=0)
    return RobustScaler(median=q50, iqr=q75 - q25)


def scaler_apply(scaler: RobustScaler, x) -> np.ndarray:
    return scaler.apply(x)


@dataclass
class TrainConfig:
    """Optimizer settings.  ``weight_decay`` is decoupled (applied in the
    update, not the loss) and acts on weight matrices only; with a few
    hundred training pairs the network needs it to generalize."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    validation_fraction: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise InputError("TrainConfig: all settings must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InputError("TrainConfig: validation fraction must be in (0, 1)")
        if self.weight_decay < 0:
            raise InputError("TrainConfig: weight decay must be >= 0")


@dataclass
class MlpRegressor:
    """Two hidden rectifier layers of width 50, linear scalar output."""

    weights: list  # list of (n_in, n_out) arrays
    biases: list  # list of (n_out,) arrays
    train_seed: int = 0

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = np.maximum(a, 0.0)
        return a[:, 0]

    def predict_raw(self, x) -> np.ndarray:
        """Unclipped predictions; this is what rankings must use."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.forward(x)

    def predict(self, x) -> np.ndarray:
        """Predictions clipped to [0, 1] for reporting."""
        return np.clip(self.predict_raw(x), 0.0, 1.0)


def _init_params(rng: np.random.Generator, sizes=LAYER_SIZES):
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / n_in)
        weights.append(scale * rng.standard_normal((n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def loss_and_grad(weights, biases, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient w.r.t. every parameter."""
    acts = [x]
    pre = []
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    resid = acts[-1][:, 0] - y
    n = y.shape[0]
    loss = float(np.mean(resid**2))

    g_weights = [None] * len(weights)
    g_biases = [None] * len(weights)
    delta = (2.0 / n) * resid[:, None]
    for i in range(last, -1, -1):
        g_weights[i] = acts[i].T @ delta
        g_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0.0)
    return loss, g_weights, g_biases


def mlp_train(x, y, cfg: TrainConfig = TrainConfig()) -> MlpRegressor:
    """Adam on mean squared error with early stopping.

    A seeded 10% split is held out for validation; the parameters with the
    best validation loss are returned.  Fully deterministic given the seed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise InputError("mlp_train: need matching X, y with at least 2 samples")

    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_params(rng, (x.shape[1],) + LAYER_SIZES[1:])

    n = x.shape[0]
    n_val = max(1, int(round(cfg.validation_fraction * n)))
    if n_val >= n:
        n_val = n - 1
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_va, y_va = x[val_idx], y[val_idx]

    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    def val_loss():
        pred = MlpRegressor(weights, biases).forward(x_va)
        return float(np.mean((pred - y_va) ** 2))

    best_val = val_loss()
    best_params = [p.copy() for p in params]
    stall = 0
    n_tr = x_tr.shape[0]
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, g_w, g_b = loss_and_grad(weights, biases, x_tr[batch], y_tr[batch])
            if not np.isfinite(loss):
                raise NumericalError("mlp_train: non-finite training loss")
            t += 1
            n_w = len(weights)
            for idx, (p, g, mi, vi) in enumerate(zip(params, g_w + g_b, m, v)):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g * g
                m_hat = mi / (1 - beta1**t)
                v_hat = vi / (1 - beta2**t)
                update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
                if idx < n_w and cfg.weight_decay > 0:
                    update = update + cfg.learning_rate * cfg.weight_decay * p
                p -= update
        cur = val_loss()
        if cur < best_val - 1e-12:
            best_val = cur
            best_params = [p.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    k = len(weights)
    return MlpRegressor(
        weights=best_params[:k], biases=best_params[k:], train_seed=cfg.seed
    )


def predict_accuracy(scaler: RobustScaler, model: MlpRegressor, feats) -> float:
    """Clipped accuracy prediction for one feature vector."""
    from .features import PairFeatures

    if isinstance(feats, PairFeatures):
        feats = feats.to_array()
    return float(model.predict(scaler.apply(feats))[0])


def predict_accuracy_raw(scaler: RobustScaler, model: MlpRegressor, feats) -> float:
    from .features import PairFeatures

    if isinstance(feats, PairFeatures):
        feats = feats.to_array()
    return float(model.predict_raw(scaler.apply(feats))[0])


def save_model(path, scaler: RobustScaler, model: MlpRegressor) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaler_median": scaler.median.tolist(),
        "scaler_iqr": scaler.iqr.tolist(),
        "train_seed": model.train_seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> tuple[RobustScaler, MlpRegressor]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise InputError(f"{path}: unsupported model version {doc.get('version')}")
    sizes = doc["layer_sizes"]
    weights = [
        np.asarray(w, dtype=np.float64).reshape(n_in, n_out)
        for w, n_in, n_out in zip(doc["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    scaler = RobustScaler(
        median=np.asarray(doc["scaler_median"], dtype=np.float64),
        iqr=np.asarray(doc["scaler_iqr"], dtype=np.float64),
    )
    return scaler, MlpRegressor(weights=weights, biases=biases, train_seed=doc["train_seed"])
