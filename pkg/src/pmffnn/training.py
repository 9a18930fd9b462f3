"""Losses, optimizers and the mini-batch training loop."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError, ShapeError
from .layers import BatchNorm, Mode
from .model_graph import ModelGraph
from .tensor_core import Rng, as_matrix

PROB_FLOOR = 1e-12
# Sub-stream tag for batch shuffling; distinct from the model's init/dropout tags.
_SHUFFLE_STREAM = 2


def cross_entropy(probs, labels) -> tuple[float, np.ndarray]:
    """Mean NLL and its gradient w.r.t. the pre-softmax logits.

    The returned gradient is the fused softmax/cross-entropy form
    ``(probs - onehot) / batch``.
    """
    probs = as_matrix(probs, "probs")
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    rows = np.arange(n)
    picked = np.clip(probs[rows, labels], PROB_FLOOR, 1.0)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / n


def mse(pred, target) -> tuple[float, np.ndarray]:
    pred = as_matrix(pred, "pred")
    target = as_matrix(target, "target")
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    err = pred - target
    return float((err**2).mean()), 2.0 * err / err.size


class SGD:
    """v <- momentum * v - lr * g;  p <- p + v."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}", "lr")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            v = self.velocity.get(name)
            v = -self.lr * g if v is None else self.momentum * v - self.lr * g
            self.velocity[name] = v
            p += v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}", "lr")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(optimizer, params, grads):
    optimizer.step(params, grads)
    return params


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True
    loss: str | None = None  # None: cross_entropy for classification, mse for regression

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "optimizer")
        if not self.lr > 0:
            raise ConfigError(f"must be > 0, got {self.lr}", "lr")
        if self.epochs < 1:
            raise ConfigError(f"must be >= 1, got {self.epochs}", "epochs")
        if self.batch_size < 1:
            raise ConfigError(f"must be >= 1, got {self.batch_size}", "batch_size")
        if self.loss not in (None, "cross_entropy", "mse"):
            raise ConfigError(f"unknown loss {self.loss!r}", "loss")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.lr, self.momentum)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_dict(self, timings: bool = True) -> dict:
        doc = {"train_loss": self.train_loss}
        if self.val_loss:
            doc["val_loss"] = self.val_loss
        if self.val_accuracy:
            doc["val_accuracy"] = self.val_accuracy
        if timings:
            doc["epoch_seconds"] = self.epoch_seconds
        return doc


def _has_batchnorm(model: ModelGraph) -> bool:
    return any(isinstance(l, BatchNorm) for _, s in model.stacks() for l in s.layers)


def _loss_name(model: ModelGraph, config: TrainConfig) -> str:
    if config.loss is not None:
        return config.loss
    return "cross_entropy" if model.config.task == "classification" else "mse"


def _prepare_targets(model: ModelGraph, y, loss: str):
    if loss == "cross_entropy":
        y = np.asarray(y)
        if y.ndim != 1:
            raise ShapeError(f"class labels must be a 1-D vector, got shape {y.shape}")
        if len(y) and (y.min() < 0 or y.max() >= model.n_outputs):
            raise ShapeError(f"labels must lie in [0, {model.n_outputs})")
        return y.astype(np.intp)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != model.n_outputs:
        raise ShapeError(f"targets have {y.shape[1]} columns, model outputs {model.n_outputs}")
    return y


def batch_loss(model: ModelGraph, x, y, loss: str, mode: Mode) -> tuple[float, np.ndarray, np.ndarray]:
    out = model.forward(x, mode)
    if loss == "cross_entropy":
        value, grad = cross_entropy(out, y)
    else:
        value, grad = mse(out, y)
    return value, grad, out


def evaluate_loss(model: ModelGraph, x, y, config: TrainConfig | None = None) -> float:
    loss = _loss_name(model, config or TrainConfig())
    y = _prepare_targets(model, y, loss)
    value, _, _ = batch_loss(model, as_matrix(x), y, loss, Mode.INFERENCE)
    return value


def fit(model: ModelGraph, x, y, config: TrainConfig, validation: tuple | None = None,
        on_epoch=None) -> FitReport:
    """Train ``model`` in place and return per-epoch statistics.

    ``on_epoch(epoch_index, report)`` is called after every epoch. The model is
    left in inference mode.
    """
    x = as_matrix(x)
    if x.shape[1] != model.n_features:
        raise ShapeError(f"data has {x.shape[1]} features, model expects {model.n_features}")
    loss = _loss_name(model, config)
    if loss == "cross_entropy" and model.config.task != "classification":
        raise ConfigError("cross_entropy needs a classification model", "loss")
    y = _prepare_targets(model, y, loss)
    n = x.shape[0]
    if len(y) != n:
        raise ShapeError(f"{n} feature rows but {len(y)} targets")
    has_bn = _has_batchnorm(model)
    if has_bn and config.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 when the model has batch normalization", "batch_size")
    if has_bn and n < 2:
        raise ConfigError("need at least 2 training rows with batch normalization", "batch_size")

    from_logits = loss == "cross_entropy" and model.head.specs[-1].activation == "softmax"
    optimizer = config.make_optimizer()
    shuffler = Rng(config.seed, _SHUFFLE_STREAM)
    report = FitReport()
    params = model.parameters()

    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = shuffler.permutation(n) if config.shuffle else np.arange(n)
        model.train()
        total, seen = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if has_bn and len(idx) < 2:
                continue
            xb, yb = x[idx], y[idx]
            model.zero_grad()
            value, grad, out = batch_loss(model, xb, yb, loss, Mode.TRAINING)
            if not math.isfinite(value):
                model.eval()
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            if loss == "cross_entropy" and not from_logits:
                # Unfused: push the gradient back through the output layer.
                grad = _ce_prob_grad(out, yb)
            model.backward(grad, from_logits=from_logits)
            optimizer.step(params, model.gradients())
            total += value * len(idx)
            seen += len(idx)
        model.eval()
        report.train_loss.append(total / seen)
        if validation is not None:
            vx, vy = validation
            report.val_loss.append(evaluate_loss(model, vx, vy, config))
            if loss == "cross_entropy":
                pred = model.predict(vx).argmax(axis=1)
                report.val_accuracy.append(float((pred == np.asarray(vy)).mean()))
        report.epoch_seconds.append(time.perf_counter() - start)
        if on_epoch is not None:
            on_epoch(epoch, report)
    return report


def _ce_prob_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = probs.shape[0]
    grad = np.zeros_like(probs)
    rows = np.arange(n)
    p = probs[rows, labels]
    grad[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / np.maximum(p, PROB_FLOOR), 0.0) / n
    return grad
