"""Assembly and execution of the multi-path network and its two baselines.

A :class:`ModelGraph` is a list of *branches* feeding one *head*. Each branch
reads either a column group or the whole input, runs its own layer stack, and
the branch outputs are concatenated (full pathway first, then groups in
order) before the head. The monolithic FFNN and the 1D CNN are the
single-branch degenerate cases.

Branches are independent between the split and the concatenation, so their
forward and backward passes may run on a thread pool. Every branch owns a
private dropout stream, which makes results independent of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ArchConfig, PathwaySpec
from .errors import ShapeError, StateError
from .layers import Dropout, Layer, LayerSpec, Mode, build_layer, param_count
from .tensor_core import Rng, as_matrix

# Sub-stream tags under the model seed.
_INIT_STREAM = 0
_DROPOUT_STREAM = 1


@dataclass(frozen=True)
class ColumnGroups:
    groups: tuple[tuple[int, ...], ...]
    include_full_pathway: bool = False

    @classmethod
    def auto(cls, n_features: int, n_groups: int, include_full_pathway: bool = False) -> "ColumnGroups":
        """Contiguous near-equal groups; remainder columns go to the last group."""
        if not 1 <= n_groups <= n_features:
            raise ShapeError(f"cannot split {n_features} features into {n_groups} groups")
        size = n_features // n_groups
        bounds = [i * size for i in range(n_groups)] + [n_features]
        groups = tuple(tuple(range(bounds[i], bounds[i + 1])) for i in range(n_groups))
        return cls(groups, include_full_pathway)

    @classmethod
    def from_config(cls, cfg: ArchConfig) -> "ColumnGroups":
        if isinstance(cfg.groups, int):
            return cls.auto(cfg.n_features, cfg.groups, cfg.include_full_pathway)
        return cls(tuple(tuple(g) for g in cfg.groups), cfg.include_full_pathway)

    def __len__(self) -> int:
        return len(self.groups)


def split_columns(x, groups: ColumnGroups) -> list[np.ndarray]:
    """One contiguous slice per group, columns in group order."""
    x = as_matrix(x)
    slices = []
    for i, group in enumerate(groups.groups):
        bad = [j for j in group if not 0 <= j < x.shape[1]]
        if bad:
            raise ShapeError(f"group {i} references column {bad[0]} but input has {x.shape[1]} columns")
        slices.append(np.ascontiguousarray(x[:, list(group)]))
    return slices


def build_micro_ffnn(input_dim: int, spec: PathwaySpec) -> list[LayerSpec]:
    """BN -> Dense+SELU -> [BN -> Dense -> Dropout] * repeat -> Dense+Sigmoid -> BN."""
    h, out = spec.hidden_dim, spec.output_dim
    stack = [
        LayerSpec.batchnorm(input_dim),
        LayerSpec.dense(input_dim, h),
        LayerSpec.act("selu", h),
    ]
    for _ in range(spec.repeat_blocks):
        stack += [LayerSpec.batchnorm(h), LayerSpec.dense(h, h), LayerSpec.dropout(h, spec.dropout_rate)]
    stack += [LayerSpec.dense(h, out), LayerSpec.act("sigmoid", out), LayerSpec.batchnorm(out)]
    return stack


def build_head(in_dim: int, cfg: ArchConfig) -> list[LayerSpec]:
    """Dense(hidden) -> Dropout -> BN -> Dense(n_outputs) -> Softmax (identity for regression)."""
    h = cfg.head.hidden_dim
    final = "softmax" if cfg.task == "classification" else "identity"
    return [
        LayerSpec.dense(in_dim, h),
        LayerSpec.dropout(h, cfg.head.dropout_rate),
        LayerSpec.batchnorm(h),
        LayerSpec.dense(h, cfg.n_outputs),
        LayerSpec.act(final, cfg.n_outputs),
    ]


def build_conv_stack(n_features: int, cfg: ArchConfig) -> list[LayerSpec]:
    c = cfg.conv
    stack, channels, length = [], 1, n_features
    for _ in range(c.n_blocks):
        conv = LayerSpec.conv1d(channels, length, c.channels, c.kernel_size)
        stack += [conv, LayerSpec.act("relu", conv.out_dim)]
        channels, length = c.channels, length - c.kernel_size + 1
    return stack


def monolithic_config(cfg: ArchConfig) -> ArchConfig:
    """Width-matched single-stack FFNN: hidden and output widths are the branch totals."""
    n_branches = len(ColumnGroups.from_config(cfg)) + int(cfg.include_full_pathway)
    p = cfg.pathway
    wide = PathwaySpec(
        hidden_dim=n_branches * p.hidden_dim,
        repeat_blocks=p.repeat_blocks,
        dropout_rate=p.dropout_rate,
        output_dim=n_branches * p.output_dim,
    )
    return ArchConfig(
        n_features=cfg.n_features,
        n_outputs=cfg.n_outputs,
        kind="deep_ffnn",
        task=cfg.task,
        groups=cfg.groups,
        include_full_pathway=cfg.include_full_pathway,
        pathway=wide,
        head=cfg.head,
        conv=cfg.conv,
    )


class LayerStack:
    """Sequential container."""

    def __init__(self, specs: list[LayerSpec], init_rng: Rng | None):
        self.specs = list(specs)
        self.layers: list[Layer] = [build_layer(s, init_rng) for s in self.specs]

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def forward(self, x, mode: Mode) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, upstream, skip_last: bool = False) -> np.ndarray:
        g = upstream
        layers = self.layers[:-1] if skip_last else self.layers
        for layer in reversed(layers):
            g = layer.backward(g)
        return g

    def set_dropout_rng(self, rng: Rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def __len__(self) -> int:
        return len(self.layers)


@dataclass
class Branch:
    name: str
    columns: tuple[int, ...] | None  # None: all input columns
    stack: LayerStack


@dataclass
class ParamBreakdown:
    branches: dict[str, int]
    head: int
    total: int
    first_dense: int
    monolithic_first_dense: int
    monolithic_total: int
    first_dense_per_branch: dict[str, int] = field(default_factory=dict)

    @property
    def first_dense_ratio(self) -> float:
        return self.first_dense / self.monolithic_first_dense

    @property
    def total_ratio(self) -> float:
        return self.total / self.monolithic_total


class ModelGraph:
    """An assembled network. Build with :func:`build_model`."""

    def __init__(self, config: ArchConfig, branches: list[Branch], head: LayerStack,
                 column_groups: ColumnGroups | None, seed: int, threads: int = 1):
        self.config = config
        self.kind = config.kind
        self.branches = branches
        self.head = head
        self.column_groups = column_groups
        self.seed = seed
        self.mode = Mode.INFERENCE
        self.threads = threads
        self._pool: ThreadPoolExecutor | None = None
        self._pool_size = 0
        self._ran_training_forward = False
        self.reseed_dropout(seed)

    # -- bookkeeping -------------------------------------------------------

    @property
    def n_features(self) -> int:
        return self.config.n_features

    @property
    def n_outputs(self) -> int:
        return self.config.n_outputs

    def stacks(self) -> list[tuple[str, LayerStack]]:
        return [(b.name, b.stack) for b in self.branches] + [("head", self.head)]

    def reseed_dropout(self, seed: int):
        """Reset every dropout stream: branch i gets its own, the head another."""
        root = Rng(seed, _DROPOUT_STREAM)
        for i, b in enumerate(self.branches):
            b.stack.set_dropout_rng(root.child(i))
        self.head.set_dropout_rng(root.child(len(self.branches)))

    def _named(self, attr: str) -> dict[str, np.ndarray]:
        out = {}
        for sname, stack in self.stacks():
            for i, layer in enumerate(stack.layers):
                for k, v in getattr(layer, attr).items():
                    out[f"{sname}.{i}.{k}"] = v
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameter arrays by qualified name (live references)."""
        return self._named("params")

    def gradients(self) -> dict[str, np.ndarray]:
        return self._named("grads")

    def buffers(self) -> dict[str, np.ndarray]:
        return self._named("buffers")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for sname, stack in self.stacks():
            for i, layer in enumerate(stack.layers):
                for store in (layer.params, layer.buffers):
                    for k in store:
                        name = f"{sname}.{i}.{k}"
                        if name not in state:
                            raise ShapeError(f"state is missing tensor {name!r}")
                        value = as_matrix(state[name], name)
                        if value.shape != store[k].shape:
                            raise ShapeError(f"{name}: expected shape {store[k].shape}, got {value.shape}")
                        store[k] = value.copy()
        for sname, stack in self.stacks():
            for layer in stack.layers:
                layer._init_grads()

    def zero_grad(self):
        for _, stack in self.stacks():
            for layer in stack.layers:
                layer.zero_grad()

    # -- execution ---------------------------------------------------------

    def _map(self, fn, items):
        workers = min(self.threads, len(items))
        if workers <= 1:
            return [fn(item) for item in items]
        if self._pool is None or self._pool_size != workers:
            self.close()
            self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="pathway")
            self._pool_size = workers
        # map() preserves input order, so concatenation order never depends on scheduling.
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
            self._pool_size = 0

    def forward(self, x, mode: Mode | None = None) -> np.ndarray:
        mode = self.mode if mode is None else mode
        x = as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got input of shape {x.shape}")
        inputs = [x if b.columns is None else np.ascontiguousarray(x[:, list(b.columns)]) for b in self.branches]
        outs = self._map(lambda pair: pair[0].stack.forward(pair[1], mode), list(zip(self.branches, inputs)))
        self._ran_training_forward = mode is Mode.TRAINING
        self._batch_shape = x.shape
        return self.head.forward(np.concatenate(outs, axis=1), mode)

    __call__ = forward

    def backward(self, upstream, from_logits: bool = False) -> np.ndarray:
        """Backpropagate ``upstream`` and accumulate parameter gradients.

        With ``from_logits`` the head's final activation is skipped, i.e.
        ``upstream`` is already the gradient w.r.t. the pre-activation (the
        fused softmax/cross-entropy case). Returns the input gradient.
        """
        if not self._ran_training_forward:
            raise StateError("model backward requires a preceding training-mode forward")
        g = self.head.backward(upstream, skip_last=from_logits)
        widths = [b.stack.out_dim for b in self.branches]
        pieces = np.split(g, np.cumsum(widths)[:-1], axis=1)
        grads_in = self._map(lambda pair: pair[0].stack.backward(pair[1]), list(zip(self.branches, pieces)))
        dx = np.zeros(self._batch_shape)
        for b, gx in zip(self.branches, grads_in):
            if b.columns is None:
                dx += gx
            else:
                dx[:, list(b.columns)] += gx
        return dx

    def train(self):
        self.mode = Mode.TRAINING

    def eval(self):
        self.mode = Mode.INFERENCE

    def predict(self, x) -> np.ndarray:
        return self.forward(x, Mode.INFERENCE)

    def __repr__(self) -> str:
        names = ", ".join(b.name for b in self.branches)
        return f"ModelGraph(kind={self.kind}, branches=[{names}], head={len(self.head)} layers)"


def build_model(cfg: ArchConfig, seed: int = 0, threads: int = 1) -> ModelGraph:
    init = Rng(seed, _INIT_STREAM)
    groups = None
    if cfg.kind == "pmffnn":
        groups = ColumnGroups.from_config(cfg)
        branches = []
        if groups.include_full_pathway:
            branches.append(Branch("full", None, LayerStack(build_micro_ffnn(cfg.n_features, cfg.pathway), init)))
        for i, group in enumerate(groups.groups):
            stack = LayerStack(build_micro_ffnn(len(group), cfg.pathway), init)
            branches.append(Branch(f"path{i}", tuple(group), stack))
    elif cfg.kind == "deep_ffnn":
        wide = monolithic_config(cfg).pathway
        branches = [Branch("stack", None, LayerStack(build_micro_ffnn(cfg.n_features, wide), init))]
    else:
        branches = [Branch("stack", None, LayerStack(build_conv_stack(cfg.n_features, cfg), init))]
    concat_dim = sum(b.stack.out_dim for b in branches)
    head = LayerStack(build_head(concat_dim, cfg), init)
    return ModelGraph(cfg, branches, head, groups, seed, threads)


def _first_dense(specs: list[LayerSpec]) -> int:
    for s in specs:
        if s.kind == "dense":
            return param_count(s)
    return 0


def count_parameters(model: ModelGraph) -> ParamBreakdown:
    branches = {b.name: sum(param_count(s) for s in b.stack.specs) for b in model.branches}
    first = {b.name: _first_dense(b.stack.specs) for b in model.branches}
    head = sum(param_count(s) for s in model.head.specs)
    mono = monolithic_config(model.config)
    mono_stack = build_micro_ffnn(mono.n_features, mono.pathway)
    mono_total = sum(param_count(s) for s in mono_stack + build_head(mono.pathway.output_dim, mono))
    return ParamBreakdown(
        branches=branches,
        head=head,
        total=sum(branches.values()) + head,
        first_dense=sum(first.values()),
        monolithic_first_dense=_first_dense(mono_stack),
        monolithic_total=mono_total,
        first_dense_per_branch=first,
    )


def model_forward(model: ModelGraph, x, mode: Mode) -> np.ndarray:
    return model.forward(x, mode)


def model_backward(model: ModelGraph, upstream, from_logits: bool = False) -> np.ndarray:
    return model.backward(upstream, from_logits)
