"""From-scratch LSTM regression network with Adam training.

Architecture: one LSTM layer of 10 units, dense layers of 5 and 3 units
with ReLU, and a linear scalar output.  Gradients are exact analytic
backpropagation (through time when the input is a sequence), verified
against central finite differences in the test suite.  Everything is
float64 numpy; no ML framework involved.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .features import NormalizationSpec

HIDDEN = 10
DENSE1 = 5
DENSE2 = 3

PARAM_NAMES = ("lstm_wx", "lstm_wh", "lstm_b",
               "w1", "b1", "w2", "b2", "w3", "b3")

MODEL_FILE_VERSION = 1


class TrainingDiverged(RuntimeError):
    """A non-finite gradient appeared; training aborted."""


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(input_dim: int, seed: int = 0) -> dict:
    """Seeded uniform Glorot init: +-sqrt(6/(fan_in+fan_out)) per matrix."""
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    # biases: forget gate opens at 1.0 for early gradient flow; dense layers
    # start slightly positive so ReLU units cannot all be born dead
    lstm_b = np.zeros(4 * HIDDEN)
    lstm_b[HIDDEN:2 * HIDDEN] = 1.0
    return {
        "lstm_wx": glorot(input_dim, 4 * HIDDEN),
        "lstm_wh": glorot(HIDDEN, 4 * HIDDEN),
        "lstm_b": lstm_b,
        "w1": glorot(HIDDEN, DENSE1),
        "b1": np.full(DENSE1, 0.1),
        "w2": glorot(DENSE1, DENSE2),
        "b2": np.full(DENSE2, 0.1),
        "w3": glorot(DENSE2, 1),
        "b3": np.zeros(1),
    }


def input_dim_of(params: dict) -> int:
    return params["lstm_wx"].shape[0]


def forward(params: dict, x: np.ndarray) -> tuple:
    """Run the network on a batch of sequences.

    x has shape (batch, seq_len, input_dim); a (batch, input_dim) array is
    treated as seq_len=1.  Returns (predictions of shape (batch,), cache).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[2] != input_dim_of(params):
        raise ValueError("lstm input must be (batch, seq, %d), got %r"
                         % (input_dim_of(params), x.shape))
    batch, seq_len, _ = x.shape
    wx, wh, b = params["lstm_wx"], params["lstm_wh"], params["lstm_b"]
    h = np.zeros((batch, HIDDEN))
    c = np.zeros((batch, HIDDEN))
    steps = []
    for t in range(seq_len):
        z = x[:, t, :] @ wx + h @ wh + b
        i = _sigmoid(z[:, :HIDDEN])
        f = _sigmoid(z[:, HIDDEN:2 * HIDDEN])
        g = np.tanh(z[:, 2 * HIDDEN:3 * HIDDEN])
        o = _sigmoid(z[:, 3 * HIDDEN:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        steps.append((i, f, g, o, c_prev, h_prev, tanh_c))

    z1 = h @ params["w1"] + params["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["w2"] + params["b2"]
    a2 = np.maximum(z2, 0.0)
    pred = (a2 @ params["w3"] + params["b3"]).ravel()
    cache = {"x": x, "steps": steps, "h_last": h,
             "z1": z1, "a1": a1, "z2": z2, "a2": a2, "pred": pred}
    return pred, cache


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.size == 0 or predictions.shape != targets.shape:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    diff = predictions - targets
    return float(diff @ diff / diff.size)


def backward(params: dict, cache: dict, targets: np.ndarray) -> dict:
    """Exact gradients of the batch MSE w.r.t. every parameter."""
    targets = np.asarray(targets, dtype=np.float64).ravel()
    x, steps = cache["x"], cache["steps"]
    batch = x.shape[0]
    wx, wh = params["lstm_wx"], params["lstm_wh"]

    dpred = (2.0 / batch) * (cache["pred"] - targets)
    dy = dpred[:, None]

    grads = {name: np.zeros_like(params[name]) for name in PARAM_NAMES}
    grads["w3"] = cache["a2"].T @ dy
    grads["b3"] = dy.sum(axis=0)
    da2 = dy @ params["w3"].T
    dz2 = da2 * (cache["z2"] > 0.0)
    grads["w2"] = cache["a1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ params["w2"].T
    dz1 = da1 * (cache["z1"] > 0.0)
    grads["w1"] = cache["h_last"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)

    dh = dz1 @ params["w1"].T
    dc = np.zeros((batch, HIDDEN))
    for t in range(len(steps) - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tanh_c = steps[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        grads["lstm_wx"] += x[:, t, :].T @ dz
        grads["lstm_wh"] += h_prev.T @ dz
        grads["lstm_b"] += dz.sum(axis=0)
        dh = dz @ wh.T
        dc = dc * f
    return grads


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()},
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDiverged(
                "non-finite gradient in %s at step %d (|g|max=%s)"
                % (name, state.step + 1, np.abs(g[np.isfinite(g)]).max(initial=0.0)))
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


@dataclass
class TrainConfig:
    batch_size: int = 16_384
    epochs: int = 20
    sequence_length: int = 1
    seed: int = 0
    val_fraction: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.sequence_length < 1:
            raise ValueError("batch_size, epochs and sequence_length must be >= 1")


def make_sequences(x: np.ndarray, y: np.ndarray, seq_len: int) -> tuple:
    """Sliding windows of seq_len consecutive rows; target is the last row's."""
    if seq_len == 1:
        return x[:, None, :], y
    if len(x) < seq_len:
        raise ValueError("need at least seq_len rows")
    windows = np.stack([x[i:i + seq_len] for i in range(len(x) - seq_len + 1)])
    return windows, y[seq_len - 1:]


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    params: dict
    history: list                  # EpochStats per epoch
    degenerate_target: bool = False

    def history_rows(self) -> list:
        return [[e.epoch, repr(e.train_mse), repr(e.val_mse)] for e in self.history]

    def save_history_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_mse", "val_mse"])
            writer.writerows(self.history_rows())


def train(x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          params: Optional[dict] = None) -> TrainResult:
    """Train on normalized inputs/targets; deterministic given cfg.seed.

    x is (n, input_dim) normalized feature rows, y (n,) normalized targets.
    The validation split is carved off before training; per-epoch train MSE
    is the mean over that epoch's batch losses.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ValueError("x must be (n, d) with matching targets")
    rng = np.random.default_rng(cfg.seed)

    xs, ys = make_sequences(x, y, cfg.sequence_length)
    n = len(xs)
    order = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation fraction leaves no training rows")
    x_val, y_val = xs[val_idx], ys[val_idx]
    x_train, y_train = xs[train_idx], ys[train_idx]

    degenerate = bool(y_train.min() == y_train.max())

    if params is None:
        params = init_params(x.shape[1], seed=cfg.seed)
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1,
                                 beta2=cfg.beta2, eps=cfg.eps)
    batch = min(cfg.batch_size, len(x_train))

    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(perm), batch):
            idx = perm[start:start + batch]
            pred, cache = forward(params, x_train[idx])
            losses.append(mse_loss(pred, y_train[idx]))
            grads = backward(params, cache, y_train[idx])
            adam_step(params, grads, state)
        if len(x_val):
            val_pred, _ = forward(params, x_val)
            val = mse_loss(val_pred, y_val)
        else:
            val = float("nan")
        history.append(EpochStats(epoch=epoch, train_mse=float(np.mean(losses)),
                                  val_mse=val))
    return TrainResult(params=params, history=history, degenerate_target=degenerate)


def predict(params: dict, x: np.ndarray) -> np.ndarray:
    pred, _ = forward(params, x)
    return pred


# -- model files -------------------------------------------------------


@dataclass
class ModelBundle:
    """A trained network plus everything needed to quote with it."""

    params: dict
    normalization: NormalizationSpec
    capture_mode: str = "trade"
    sequence_length: int = 1

    @property
    def mask(self) -> tuple:
        return self.normalization.mask


def save_model(path, bundle: ModelBundle, opt_state: Optional[AdamState] = None) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "input_mask": list(bundle.mask),
        "capture_mode": bundle.capture_mode,
        "sequence_length": bundle.sequence_length,
        "normalization": json.loads(bundle.normalization.to_json()),
        "params": {k: v.tolist() for k, v in bundle.params.items()},
    }
    if opt_state is not None:
        doc["optimizer"] = {
            "step": opt_state.step, "lr": opt_state.lr,
            "beta1": opt_state.beta1, "beta2": opt_state.beta2,
            "eps": opt_state.eps,
            "m": {k: v.tolist() for k, v in opt_state.m.items()},
            "v": {k: v.tolist() for k, v in opt_state.v.items()},
        }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_model(path) -> ModelBundle:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != MODEL_FILE_VERSION:
        raise ValueError("unsupported model file version: %r" % (doc.get("version"),))
    params = {k: np.array(v, dtype=np.float64) for k, v in doc["params"].items()}
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise ValueError("model file missing tensors: %s" % sorted(missing))
    norm = NormalizationSpec.from_json(json.dumps(doc["normalization"]))
    if tuple(doc["input_mask"]) != norm.mask:
        raise ValueError("model mask %r disagrees with normalization mask %r"
                         % (doc["input_mask"], norm.mask))
    if input_dim_of(params) != len(norm.mask):
        raise ValueError("lstm input width %d does not match mask size %d"
                         % (input_dim_of(params), len(norm.mask)))
    return ModelBundle(params=params, normalization=norm,
                       capture_mode=doc.get("capture_mode", "trade"),
                       sequence_length=int(doc.get("sequence_length", 1)))
