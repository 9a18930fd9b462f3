"""Architecture config document.

A config is a JSON object. Every key is optional except ``n_features`` and
``n_outputs``; unknown keys anywhere are rejected::

    {
      "kind": "pmffnn",              # pmffnn | deep_ffnn | cnn1d
      "n_features": 64,
      "n_outputs": 4,                # classes, or target dim for regression
      "task": "classification",      # classification | regression
      "groups": 4,                   # int P (contiguous auto split) or [[0, 1], [5, 2], ...]
      "include_full_pathway": false, # extra pathway over all columns, placed first
      "pathway": {"hidden_dim": 32, "repeat_blocks": 1, "dropout_rate": 0.2, "output_dim": 8},
      "head": {"hidden_dim": 16, "dropout_rate": 0.3},
      "conv": {"channels": 8, "kernel_size": 3, "n_blocks": 2}   # cnn1d only
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

MODEL_KINDS = ("pmffnn", "deep_ffnn", "cnn1d")
TASKS = ("classification", "regression")


@dataclass(frozen=True)
class PathwaySpec:
    hidden_dim: int = 32
    repeat_blocks: int = 1
    dropout_rate: float = 0.2
    output_dim: int = 8


@dataclass(frozen=True)
class HeadSpec:
    hidden_dim: int = 16
    dropout_rate: float = 0.3


@dataclass(frozen=True)
class ConvSpec:
    channels: int = 8
    kernel_size: int = 3
    n_blocks: int = 2


@dataclass(frozen=True)
class ArchConfig:
    n_features: int
    n_outputs: int
    kind: str = "pmffnn"
    task: str = "classification"
    groups: int | tuple[tuple[int, ...], ...] = 4
    include_full_pathway: bool = False
    pathway: PathwaySpec = field(default_factory=PathwaySpec)
    head: HeadSpec = field(default_factory=HeadSpec)
    conv: ConvSpec = field(default_factory=ConvSpec)

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ArchConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(doc, cls, "")
        kwargs = dict(doc)
        for key in ("n_features", "n_outputs"):
            if key not in kwargs:
                raise ConfigError("required key missing", key)
        for key, sub in (("pathway", PathwaySpec), ("head", HeadSpec), ("conv", ConvSpec)):
            if key in kwargs:
                section = kwargs[key]
                if not isinstance(section, dict):
                    raise ConfigError("must be an object", key)
                _reject_unknown(section, sub, key + ".")
                kwargs[key] = sub(**section)
        if "groups" in kwargs and isinstance(kwargs["groups"], list):
            groups = kwargs["groups"]
            if not all(isinstance(g, list) for g in groups):
                raise ConfigError("explicit groups must be a list of index lists", "groups")
            kwargs["groups"] = tuple(tuple(g) for g in groups)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        doc = asdict(self)
        if not isinstance(self.groups, int):
            doc["groups"] = [list(g) for g in self.groups]
        return doc

    @classmethod
    def load(cls, path) -> "ArchConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
        return cls.from_dict(doc)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_kind(self, kind: str) -> "ArchConfig":
        return replace(self, kind=kind)


def _reject_unknown(doc: dict, cls, prefix: str):
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError("unknown key", prefix + key)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _positive_int(value, path: str, minimum: int = 1):
    if not _is_int(value) or value < minimum:
        raise ConfigError(f"must be an integer >= {minimum}, got {value!r}", path)


def _rate(value, path: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value < 1.0:
        raise ConfigError(f"must be a number in [0, 1), got {value!r}", path)


def validate(cfg: ArchConfig):
    if cfg.kind not in MODEL_KINDS:
        raise ConfigError(f"must be one of {MODEL_KINDS}, got {cfg.kind!r}", "kind")
    if cfg.task not in TASKS:
        raise ConfigError(f"must be one of {TASKS}, got {cfg.task!r}", "task")
    _positive_int(cfg.n_features, "n_features")
    _positive_int(cfg.n_outputs, "n_outputs")
    if not isinstance(cfg.include_full_pathway, bool):
        raise ConfigError("must be a boolean", "include_full_pathway")

    p = cfg.pathway
    _positive_int(p.hidden_dim, "pathway.hidden_dim")
    _positive_int(p.repeat_blocks, "pathway.repeat_blocks", 0)
    _rate(p.dropout_rate, "pathway.dropout_rate")
    _positive_int(p.output_dim, "pathway.output_dim")
    _positive_int(cfg.head.hidden_dim, "head.hidden_dim")
    _rate(cfg.head.dropout_rate, "head.dropout_rate")
    _positive_int(cfg.conv.channels, "conv.channels")
    _positive_int(cfg.conv.kernel_size, "conv.kernel_size")
    _positive_int(cfg.conv.n_blocks, "conv.n_blocks")
    if cfg.kind == "cnn1d":
        remaining = cfg.n_features - cfg.conv.n_blocks * (cfg.conv.kernel_size - 1)
        if remaining < 1:
            raise ConfigError(
                f"{cfg.conv.n_blocks} blocks of kernel {cfg.conv.kernel_size} do not fit {cfg.n_features} features",
                "conv.kernel_size",
            )

    if _is_int(cfg.groups):
        if not 1 <= cfg.groups <= cfg.n_features:
            raise ConfigError(f"auto group count must be in [1, n_features], got {cfg.groups}", "groups")
    elif isinstance(cfg.groups, tuple):
        if not cfg.groups:
            raise ConfigError("at least one group is required", "groups")
        for i, group in enumerate(cfg.groups):
            where = f"groups[{i}]"
            if not group:
                raise ConfigError("group is empty", where)
            if not all(_is_int(j) for j in group):
                raise ConfigError("indices must be integers", where)
            if len(set(group)) != len(group):
                raise ConfigError("duplicate column index", where)
            bad = [j for j in group if not 0 <= j < cfg.n_features]
            if bad:
                raise ConfigError(f"column index {bad[0]} outside [0, {cfg.n_features})", where)
    else:
        raise ConfigError("must be an integer or a list of index lists", "groups")


def figure1_config(n_features: int = 60, n_outputs: int = 25) -> ArchConfig:
    """Topology of the reference diagram: full pathway + 5 subset pathways, 25-way softmax head."""
    return ArchConfig(
        n_features=n_features,
        n_outputs=n_outputs,
        groups=5,
        include_full_pathway=True,
    )
