"""NumPy MLP classifier with batch normalization, dropout and AdamW training.

Hidden layers apply ``linear -> batchnorm -> ReLU -> dropout``; the output
layer is a single linear unit squashed by the logistic function. Everything
runs in float64.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLabels, EmptySplit, InvalidConfig, InvalidDims, NonFiniteLoss, ShapeMismatch
from .persistence import read_artifact, write_artifact

log = logging.getLogger(__name__)

DEFAULT_DIMS = (1545, 512, 256, 64, 1)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_CLAMP = 1e-7


@dataclass
class MLPModel:
    dims: tuple[int, ...]
    params: dict[str, np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    dropout: float = 0.3
    mode: str = "train"

    @property
    def n_hidden(self) -> int:
        return len(self.dims) - 2

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "MLPModel":
        return copy.deepcopy(self)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        for i in range(self.n_hidden):
            out[f"running_mean{i}"] = self.running_mean[i]
            out[f"running_var{i}"] = self.running_var[i]
        return out


def parameter_count(dims) -> int:
    """Closed form: every linear layer's weights and biases plus two affine
    normalization parameters per hidden unit."""
    dims = list(dims)
    linear = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    return linear + 2 * sum(dims[1:-1])


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(dims)
    if len(dims) < 2 or any(not isinstance(d, (int, np.integer)) or d < 1 for d in dims):
        raise InvalidDims(f"layer dims must be >= 2 positive integers, got {dims}")
    if dims[-1] != 1:
        raise InvalidDims("output layer must have a single unit")
    return tuple(int(d) for d in dims)


def init_model(dims=DEFAULT_DIMS, seed: int = 0, dropout: float = 0.3) -> MLPModel:
    """Uniform fan-in initialization (bound sqrt(6 / fan_in)), zero biases."""
    dims = _check_dims(dims)
    if not 0.0 <= dropout < 1.0:
        raise InvalidDims("dropout must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = math.sqrt(6.0 / fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    hidden = dims[1:-1]
    for i, units in enumerate(hidden):
        params[f"gamma{i}"] = np.ones(units)
        params[f"beta{i}"] = np.zeros(units)
    return MLPModel(
        dims=dims,
        params=params,
        running_mean=[np.zeros(u) for u in hidden],
        running_var=[np.ones(u) for u in hidden],
        dropout=dropout,
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_logits(model: MLPModel, X: np.ndarray, train: bool, rng: np.random.Generator | None = None,
                   use_dropout: bool = True, update_stats: bool = True):
    """Return ``(logits, cache)``; ``cache`` feeds :func:`backward`."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ShapeMismatch(f"expected (n, {model.dims[0]}) input, got {X.shape}")
    if train and X.shape[0] < 2:
        raise ShapeMismatch("batch statistics need at least 2 rows in train mode")
    p = model.dropout if (train and use_dropout) else 0.0
    if p > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    h = X
    layers = []
    for i in range(model.n_hidden):
        W, b = model.params[f"W{i}"], model.params[f"b{i}"]
        g, be = model.params[f"gamma{i}"], model.params[f"beta{i}"]
        z = h @ W + b
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                n = z.shape[0]
                model.running_mean[i] = (1 - BN_MOMENTUM) * model.running_mean[i] + BN_MOMENTUM * mu
                model.running_var[i] = (1 - BN_MOMENTUM) * model.running_var[i] + BN_MOMENTUM * var * n / (n - 1)
        else:
            mu, var = model.running_mean[i], model.running_var[i]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        a = g * xhat + be
        relu = a > 0
        out = np.maximum(a, 0.0)  # propagates NaN so a bad input surfaces as a non-finite loss
        mask = None
        if p > 0:
            mask = (rng.random(out.shape) >= p) / (1.0 - p)
            out = out * mask
        layers.append((h, xhat, inv_std, relu, mask))
        h = out
    last = model.n_hidden
    logits = h @ model.params[f"W{last}"] + model.params[f"b{last}"]
    return logits[:, 0], {"layers": layers, "h_last": h, "train": train}


def forward(model: MLPModel, X: np.ndarray, mode: str | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Probabilities in (0, 1); eval mode is deterministic."""
    mode = mode or model.mode
    logits, _ = forward_logits(model, X, train=(mode == "train"), rng=rng, update_stats=False)
    return sigmoid(logits)


def bce_with_logits(logits: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0):
    """Mean weighted BCE and its gradient with respect to the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"logits {z.shape} vs labels {y.shape}")
    n = z.size
    loss = np.mean(pos_weight * y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z))
    p = sigmoid(z)
    grad = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / n
    return float(loss), grad


def weighted_bce_loss(probabilities: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0):
    """Loss on probabilities (clamped to [1e-7, 1 - 1e-7]) plus the logit gradient."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch(f"probabilities {p.shape} vs labels {y.shape}")
    loss = -np.mean(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / p.size
    return float(loss), grad


def backward(model: MLPModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given dLoss/dlogits from a train-mode pass."""
    if not cache["train"]:
        raise ValueError("backward needs a train-mode forward cache")
    grads: dict[str, np.ndarray] = {}
    last = model.n_hidden
    dz = np.asarray(dlogits, dtype=np.float64).reshape(-1, 1)
    h = cache["h_last"]
    grads[f"W{last}"] = h.T @ dz
    grads[f"b{last}"] = dz.sum(axis=0)
    dh = dz @ model.params[f"W{last}"].T
    for i in reversed(range(model.n_hidden)):
        h_in, xhat, inv_std, relu, mask = cache["layers"][i]
        if mask is not None:
            dh = dh * mask
        da = np.where(relu, dh, 0.0)
        grads[f"gamma{i}"] = (da * xhat).sum(axis=0)
        grads[f"beta{i}"] = da.sum(axis=0)
        dxhat = da * model.params[f"gamma{i}"]
        n = dxhat.shape[0]
        dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        grads[f"W{i}"] = h_in.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ model.params[f"W{i}"].T
    return grads


class AdamW:
    """Adaptive moments with weight decay decoupled from the gradient."""

    def __init__(self, params: dict[str, np.ndarray], weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            p *= 1.0 - lr * self.weight_decay
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 2048
    plateau_factor: float = 0.5
    plateau_patience: int = 2
    early_stop_patience: int = 5
    max_epochs: int = 100
    positive_class_weight: float | None = None
    dropout: float = 0.3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidConfig(f"unknown training fields: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        bad = [
            name for name in ("learning_rate", "weight_decay", "batch_size", "plateau_factor", "max_epochs")
            if not getattr(self, name) > 0
        ]
        bad += [name for name in ("plateau_patience", "early_stop_patience")
                if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1)]
        if self.positive_class_weight is not None and not self.positive_class_weight > 0:
            bad.append("positive_class_weight")
        if not 0.0 <= self.dropout < 1.0:
            bad.append("dropout")
        if bad:
            raise InvalidConfig(f"invalid training config fields: {', '.join(bad)}")


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    plateau_count: int = 0
    learning_rate: float = 3e-4
    history: list[dict] = field(default_factory=list)


class PlateauSchedule:
    """Early stopping plus reduce-on-plateau bookkeeping on validation loss."""

    def __init__(self, cfg: TrainConfig, state: TrainState):
        self.cfg = cfg
        self.state = state

    def update(self, val_loss: float) -> tuple[bool, bool]:
        """Record one epoch; returns ``(improved, stop)``."""
        s = self.state
        if val_loss < s.best_val_loss:
            s.best_val_loss = val_loss
            s.best_epoch = s.epoch
            s.epochs_since_improvement = 0
            s.plateau_count = 0
            return True, False
        s.epochs_since_improvement += 1
        s.plateau_count += 1
        if s.plateau_count >= self.cfg.plateau_patience:
            s.learning_rate *= self.cfg.plateau_factor
            s.plateau_count = 0
        return False, s.epochs_since_improvement >= self.cfg.early_stop_patience


def positive_weight(y: np.ndarray) -> float:
    pos = float(np.sum(y))
    if pos == 0 or pos == len(y):
        raise DegenerateLabels("training labels need both classes to derive a class weight")
    return (len(y) - pos) / pos


def validation_loss(model: MLPModel, X: np.ndarray, y: np.ndarray, pos_weight: float, block: int = 8192) -> float:
    total = 0.0
    for start in range(0, len(y), block):
        logits, _ = forward_logits(model, X[start : start + block], train=False)
        loss, _ = bce_with_logits(logits, y[start : start + block], pos_weight)
        total += loss * len(logits)
    return total / len(y)


def train(model: MLPModel, X_train, y_train, X_val, y_val, cfg: TrainConfig | None = None):
    """Fit ``model`` in place; returns ``(model, history)`` with best-epoch weights restored."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(y_train) < 2 or len(y_val) == 0:
        raise EmptySplit(f"need >= 2 training rows and >= 1 validation row, got {len(y_train)} and {len(y_val)}")
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    w = cfg.positive_class_weight if cfg.positive_class_weight is not None else positive_weight(y_train)
    rng = np.random.default_rng(cfg.seed)
    model.dropout = cfg.dropout
    opt = AdamW(model.params, cfg.weight_decay)
    state = TrainState(learning_rate=cfg.learning_rate)
    schedule = PlateauSchedule(cfg, state)
    best = model.copy()

    n = len(y_train)
    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        model.mode = "train"
        perm = rng.permutation(n)
        lr = state.learning_rate
        seen = 0
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(perm[start : start + cfg.batch_size])
            if len(idx) < 2:
                continue
            logits, cache = forward_logits(model, X_train[idx], train=True, rng=rng)
            loss, dlogits = bce_with_logits(logits, y_train[idx], w)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"training loss became {loss} at epoch {epoch}, batch starting {start}")
            opt.step(model.params, backward(model, cache, dlogits), lr)
            running += loss * len(idx)
            seen += len(idx)
        model.mode = "eval"
        val = validation_loss(model, X_val, y_val, w)
        if not math.isfinite(val):
            raise NonFiniteLoss(f"validation loss became {val} at epoch {epoch}")
        improved, stop = schedule.update(val)
        if improved:
            best = model.copy()
        state.history.append({"epoch": epoch, "train_loss": running / max(seen, 1), "val_loss": val, "learning_rate": lr})
        log.info("epoch %d train %.5f val %.5f lr %.2e%s", epoch, running / max(seen, 1), val, lr, " *" if improved else "")
        if stop:
            break

    best.mode = "eval"
    model.params, model.running_mean, model.running_var, model.mode = best.params, best.running_mean, best.running_var, "eval"
    return model, state.history


def tune_threshold(probabilities, labels) -> float:
    """F1-maximizing threshold over 0, 1 and midpoints of adjacent distinct
    scores; ties resolve to the lowest threshold."""
    s = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ShapeMismatch(f"scores {s.shape} vs labels {y.shape}")
    n_pos = y.sum()
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateLabels("threshold tuning needs both positive and negative labels")
    cands, f1 = f1_curve(s, y)
    return float(cands[int(np.argmax(f1))])


def f1_curve(scores: np.ndarray, labels: np.ndarray):
    """Candidate thresholds (ascending) and the F1 of ``scores >= t`` at each."""
    order = np.argsort(scores, kind="stable")
    s, y = scores[order], labels[order]
    distinct = np.unique(s)
    cands = np.concatenate([[0.0], (distinct[:-1] + distinct[1:]) / 2.0, [1.0]])
    suffix_tp = np.concatenate([np.cumsum(y[::-1])[::-1], [0.0]])
    idx = np.searchsorted(s, cands, side="left")
    predicted = len(s) - idx
    tp = suffix_tp[idx]
    f1 = 2.0 * tp / (predicted + y.sum())
    return cands, f1


def predict(model: MLPModel, threshold: float, X: np.ndarray, block: int = 8192):
    """Eval-mode probabilities and ``probability >= threshold`` decisions."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ShapeMismatch(f"expected (n, {model.dims[0]}) input, got {X.shape}")
    probs = np.concatenate([forward(model, X[i : i + block], mode="eval") for i in range(0, len(X), block)] or [np.empty(0)])
    return probs, probs >= threshold


def save_model(path: str | Path, model: MLPModel, threshold: float, config: TrainConfig | None = None,
               history: list[dict] | None = None) -> None:
    meta = {
        "dims": list(model.dims),
        "dropout": model.dropout,
        "threshold": threshold,
        "config": dataclasses.asdict(config) if config else None,
        "history": history or [],
    }
    write_artifact(path, "model", meta, model.state_arrays())


def load_model(path: str | Path) -> tuple[MLPModel, dict]:
    meta, arrays = read_artifact(path, "model")
    dims = tuple(meta["dims"])
    model = init_model(dims, seed=0, dropout=meta["dropout"])
    for k in model.params:
        model.params[k] = np.array(arrays[k])
    for i in range(model.n_hidden):
        model.running_mean[i] = np.array(arrays[f"running_mean{i}"])
        model.running_var[i] = np.array(arrays[f"running_var{i}"])
    model.mode = "eval"
    return model, meta
