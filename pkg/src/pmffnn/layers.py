"""Layer implementations with hand-written backward passes.

Each layer owns its parameters (``params``), their gradients (``grads``, same
shapes, accumulated across backward calls until ``zero_grad``), any
non-trainable buffers (BatchNorm running statistics) and the forward cache
that ``backward`` consumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, StateError
from .tensor_core import FLOAT, Rng, as_matrix, column_moments

# Self-normalizing constants for SELU.
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("selu", "sigmoid", "softmax", "relu", "identity")
KINDS = ("dense", "batchnorm", "dropout", "activation", "conv1d")


class Mode(enum.Enum):
    TRAINING = "training"
    INFERENCE = "inference"


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    For ``conv1d`` the feature axis is laid out channel-major:
    ``in_dim == in_channels * length`` and
    ``out_dim == out_channels * (length - kernel_size + 1)``.
    """

    kind: str
    in_dim: int
    out_dim: int
    rate: float = 0.0
    activation: str | None = None
    kernel_size: int = 0
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}", "kind")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"dimensions must be >= 1, got {self.in_dim}->{self.out_dim}", "in_dim")
        if self.kind in ("batchnorm", "dropout", "activation") and self.in_dim != self.out_dim:
            raise ConfigError(f"{self.kind} must preserve dimension", "out_dim")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}", "rate")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")
        if self.kind == "conv1d":
            if min(self.kernel_size, self.in_channels, self.out_channels) < 1:
                raise ConfigError("conv1d needs kernel_size, in_channels, out_channels >= 1", "kernel_size")
            if self.in_dim % self.in_channels:
                raise ConfigError("conv1d in_dim must be a multiple of in_channels", "in_dim")
            length = self.in_dim // self.in_channels
            if self.kernel_size > length:
                raise ConfigError(f"kernel_size {self.kernel_size} exceeds feature length {length}", "kernel_size")
            if self.out_dim != self.out_channels * (length - self.kernel_size + 1):
                raise ConfigError("conv1d out_dim inconsistent with valid padding", "out_dim")

    @classmethod
    def dense(cls, in_dim: int, out_dim: int) -> "LayerSpec":
        return cls("dense", in_dim, out_dim)

    @classmethod
    def batchnorm(cls, dim: int) -> "LayerSpec":
        return cls("batchnorm", dim, dim)

    @classmethod
    def dropout(cls, dim: int, rate: float) -> "LayerSpec":
        return cls("dropout", dim, dim, rate=rate)

    @classmethod
    def act(cls, name: str, dim: int) -> "LayerSpec":
        return cls("activation", dim, dim, activation=name)

    @classmethod
    def conv1d(cls, in_channels: int, length: int, out_channels: int, kernel_size: int) -> "LayerSpec":
        if kernel_size > length:
            raise ConfigError(f"kernel_size {kernel_size} exceeds feature length {length}", "kernel_size")
        return cls(
            "conv1d",
            in_channels * length,
            out_channels * (length - kernel_size + 1),
            kernel_size=kernel_size,
            in_channels=in_channels,
            out_channels=out_channels,
        )

    @property
    def length(self) -> int:
        return self.in_dim // self.in_channels


def param_count(spec: LayerSpec) -> int:
    """Exact number of trainable scalars (BatchNorm running stats excluded)."""
    if spec.kind == "dense":
        return spec.in_dim * spec.out_dim + spec.out_dim
    if spec.kind == "batchnorm":
        return 2 * spec.in_dim
    if spec.kind == "conv1d":
        return spec.kernel_size * spec.in_channels * spec.out_channels + spec.out_channels
    return 0


# --- stateless primitives -------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_forward(kind: str, x) -> np.ndarray:
    x = as_matrix(x)
    if kind == "selu":
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "softmax":
        if x.shape[1] < 1:
            raise ShapeError("softmax needs at least one column")
        z = np.exp(x - x.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
    if kind == "identity":
        return x.copy()
    raise ConfigError(f"unknown activation {kind!r}", "activation")


def activation_backward(kind: str, x: np.ndarray, y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Input gradient given forward input ``x`` and output ``y``."""
    if kind == "selu":
        return upstream * np.where(x > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA)
    if kind == "sigmoid":
        return upstream * y * (1.0 - y)
    if kind == "relu":
        return upstream * (x > 0)
    if kind == "softmax":
        return y * (upstream - (upstream * y).sum(axis=1, keepdims=True))
    if kind == "identity":
        return upstream.copy()
    raise ConfigError(f"unknown activation {kind!r}", "activation")


def dropout_forward(rate: float, x, mode: Mode, rng: Rng | None) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns ``(y, mask)`` where ``y = x * mask``.

    The mask already carries the ``1 / (1 - rate)`` scale, so the input
    gradient is simply ``upstream * mask``.
    """
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_matrix(x)
    if mode is Mode.INFERENCE or rate == 0.0:
        return x.copy(), np.ones_like(x)
    if rng is None:
        raise StateError("training-mode dropout needs an Rng")
    keep = rng.uniform(*x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


# --- stateful layers -----------------------------------------------------


class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.cache: dict | None = None

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def _check_input(self, x) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.spec.in_dim:
            raise ShapeError(
                f"{self.spec.kind} expects {self.spec.in_dim} input columns, got shape {x.shape}"
            )
        return x

    def _take_cache(self, upstream) -> tuple[dict, np.ndarray]:
        if self.cache is None:
            raise StateError(f"{self.spec.kind}.backward called without a preceding forward")
        upstream = as_matrix(upstream, "upstream")
        if upstream.shape != self.cache["out_shape"]:
            raise ShapeError(f"upstream shape {upstream.shape} != forward output shape {self.cache['out_shape']}")
        return self.cache, upstream

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.in_dim}->{self.spec.out_dim})"


class Dense(Layer):
    """y = x W + b with W stored in x out layout."""

    def __init__(self, spec: LayerSpec, rng: Rng | None = None, init_std: float | None = None):
        super().__init__(spec)
        # LeCun-normal by default; SELU pathways rely on it.
        std = 1.0 / math.sqrt(spec.in_dim) if init_std is None else init_std
        if rng is None:
            W = np.zeros((spec.in_dim, spec.out_dim))
        else:
            W = rng.normal(spec.in_dim, spec.out_dim, 0.0, std)
        self.params = {"W": W, "b": np.zeros((1, spec.out_dim))}
        self._init_grads()

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        x = self._check_input(x)
        y = x @ self.params["W"] + self.params["b"]
        self.cache = {"x": x, "out_shape": y.shape}
        return y

    def backward(self, upstream) -> np.ndarray:
        cache, g = self._take_cache(upstream)
        self.grads["W"] += cache["x"].T @ g
        self.grads["b"] += g.sum(axis=0, keepdims=True)
        return g @ self.params["W"].T


class BatchNorm(Layer):
    def __init__(self, spec: LayerSpec, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__(spec)
        dim = spec.in_dim
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones((1, dim)), "beta": np.zeros((1, dim))}
        self.buffers = {"running_mean": np.zeros((1, dim)), "running_var": np.ones((1, dim))}
        self._init_grads()

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        x = self._check_input(x)
        if mode is Mode.TRAINING:
            if x.shape[0] < 2:
                raise DomainError("training-mode batch normalization needs at least 2 rows")
            mean, var = column_moments(x)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        y = self.params["gamma"] * xhat + self.params["beta"]
        self.cache = {"xhat": xhat, "inv_std": inv_std, "mode": mode, "out_shape": y.shape}
        return y

    def backward(self, upstream) -> np.ndarray:
        cache, g = self._take_cache(upstream)
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        self.grads["gamma"] += (g * xhat).sum(axis=0, keepdims=True)
        self.grads["beta"] += g.sum(axis=0, keepdims=True)
        dxhat = g * self.params["gamma"]
        if cache["mode"] is Mode.INFERENCE:
            return dxhat * inv_std
        # Full derivative through the batch mean and variance.
        n = g.shape[0]
        return (inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=0, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
        )


class Dropout(Layer):
    def __init__(self, spec: LayerSpec, rng: Rng | None = None):
        super().__init__(spec)
        self.rate = spec.rate
        self.rng = rng

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        x = self._check_input(x)
        y, mask = dropout_forward(self.rate, x, mode, self.rng)
        self.cache = {"mask": mask, "out_shape": y.shape}
        return y

    def backward(self, upstream) -> np.ndarray:
        cache, g = self._take_cache(upstream)
        return g * cache["mask"]


class Activation(Layer):
    def __init__(self, spec: LayerSpec):
        super().__init__(spec)
        self.kind = spec.activation

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        x = self._check_input(x)
        y = activation_forward(self.kind, x)
        self.cache = {"x": x, "y": y, "out_shape": y.shape}
        return y

    def backward(self, upstream) -> np.ndarray:
        cache, g = self._take_cache(upstream)
        return activation_backward(self.kind, cache["x"], cache["y"], g)


class Conv1D(Layer):
    """Valid, stride-1 cross-correlation along the feature axis.

    Kernel is stored as an ``out_channels x (in_channels * kernel_size)``
    matrix so that it fits the 2-D parameter file format.
    """

    def __init__(self, spec: LayerSpec, rng: Rng | None = None):
        super().__init__(spec)
        fan_in = spec.in_channels * spec.kernel_size
        shape = (spec.out_channels, fan_in)
        K = rng.normal(*shape, 0.0, 1.0 / math.sqrt(fan_in)) if rng is not None else np.zeros(shape)
        self.params = {"kernel": K, "b": np.zeros((1, spec.out_channels))}
        self._init_grads()

    def _kernel3(self) -> np.ndarray:
        s = self.spec
        return self.params["kernel"].reshape(s.out_channels, s.in_channels, s.kernel_size)

    def forward(self, x, mode: Mode = Mode.INFERENCE) -> np.ndarray:
        x = self._check_input(x)
        s = self.spec
        n = x.shape[0]
        x3 = x.reshape(n, s.in_channels, s.length)
        # windows[n, c, t, j] = x3[n, c, t + j]
        windows = np.lib.stride_tricks.sliding_window_view(x3, s.kernel_size, axis=2)
        y3 = np.einsum("nctj,ocj->not", windows, self._kernel3()) + self.params["b"].reshape(1, -1, 1)
        y = np.ascontiguousarray(y3.reshape(n, -1))
        self.cache = {"windows": windows, "out_shape": y.shape}
        return y

    def backward(self, upstream) -> np.ndarray:
        cache, g = self._take_cache(upstream)
        s = self.spec
        n = g.shape[0]
        out_len = s.length - s.kernel_size + 1
        g3 = g.reshape(n, s.out_channels, out_len)
        self.grads["kernel"] += np.einsum("nctj,not->ocj", cache["windows"], g3).reshape(self.params["kernel"].shape)
        self.grads["b"] += g3.sum(axis=(0, 2)).reshape(1, -1)
        K = self._kernel3()
        dx3 = np.zeros((n, s.in_channels, s.length), dtype=FLOAT)
        for j in range(s.kernel_size):
            dx3[:, :, j : j + out_len] += np.einsum("not,oc->nct", g3, K[:, :, j])
        return dx3.reshape(n, -1)


def build_layer(spec: LayerSpec, rng: Rng | None = None, *, bn_eps: float = 1e-5, bn_momentum: float = 0.1) -> Layer:
    """Instantiate ``spec``. ``rng`` seeds weights (Dense/Conv1D) or dropout masks."""
    if spec.kind == "dense":
        return Dense(spec, rng)
    if spec.kind == "batchnorm":
        return BatchNorm(spec, eps=bn_eps, momentum=bn_momentum)
    if spec.kind == "dropout":
        return Dropout(spec, rng)
    if spec.kind == "activation":
        return Activation(spec)
    return Conv1D(spec, rng)


def layer_backward(layer: Layer, upstream) -> np.ndarray:
    return layer.backward(upstream)
