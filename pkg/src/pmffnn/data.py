"""Dataset loading, preprocessing and the synthetic blockwise generator.

CSV dialect: comma separated, header row first, ``.`` decimal point, no
quoting, no missing values.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    CellParseError,
    DomainError,
    EmptyFileError,
    MissingColumnError,
    MissingFileError,
    ShapeError,
)
from .model_graph import ColumnGroups
from .tensor_core import Rng, as_matrix, column_moments

STD_FLOOR = 1e-8
# Sub-stream tags under the data seed.
_FEATURE_STREAM = 0
_WEIGHT_STREAM = 1
_NOISE_STREAM = 2
_SPLIT_STREAM = 3
_MASK_STREAM = 4


@dataclass
class DatasetTable:
    """Features plus targets.

    ``targets`` is an int vector of class indices for classification and an
    ``n x t`` float matrix for regression. ``classes`` holds the original
    label strings in index order when loaded from CSV.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    task: str = "classification"
    classes: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        if len(self.targets) != self.features.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} feature rows but {len(self.targets)} targets")
        if len(self.feature_names) != self.features.shape[1]:
            raise ShapeError(f"{len(self.feature_names)} names for {self.features.shape[1]} feature columns")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.classes is not None:
            return len(self.classes)
        return int(self.targets.max()) + 1 if len(self.targets) else 0

    def take(self, rows) -> "DatasetTable":
        return replace(self, features=self.features[rows], targets=self.targets[rows])

    def fingerprint(self) -> dict:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        tdtype = "<i8" if self.task == "classification" else "<f8"
        h.update(np.ascontiguousarray(self.targets, dtype=tdtype).tobytes())
        return {"rows": self.n_rows, "cols": self.n_features, "sha256": h.hexdigest()}


@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, table: DatasetTable) -> DatasetTable:
        if table.n_features != self.mean.shape[1]:
            raise ShapeError(f"stats cover {self.mean.shape[1]} columns, table has {table.n_features}")
        x = (table.features - self.mean) / np.maximum(self.std, STD_FLOOR)
        return replace(table, features=x)


# --- CSV -----------------------------------------------------------------


def load_csv(path, target_column: str, task: str = "classification", classes: list[str] | None = None) -> DatasetTable:
    """Read a numeric CSV. Class labels map to 0..K-1 by first appearance.

    Pass ``classes`` to reuse an existing mapping (labels not in it are errors).
    Error rows are 1-based data rows; the header is row 0.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    lines = path.read_text().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise EmptyFileError(f"{path} is empty")
    header = [h.strip() for h in lines[0].split(",")]
    if target_column not in header:
        raise MissingColumnError(f"target column {target_column!r} not in header of {path}")
    t = header.index(target_column)
    names = [h for i, h in enumerate(header) if i != t]
    if len(lines) < 2:
        raise EmptyFileError(f"{path} has a header but no data rows")

    mapping = {c: i for i, c in enumerate(classes)} if classes is not None else {}
    fixed = classes is not None
    feats = np.empty((len(lines) - 1, len(names)))
    targets = []
    for r, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != len(header):
            raise CellParseError(r, "<row>", f"{len(cells)} cells, expected {len(header)}")
        j = 0
        for i, cell in enumerate(cells):
            cell = cell.strip()
            if i == t:
                targets.append(cell)
                continue
            feats[r - 1, j] = _parse_number(cell, r, header[i])
            j += 1
        if task == "classification":
            label = targets[-1]
            if label == "":
                raise CellParseError(r, target_column, label)
            if label not in mapping:
                if fixed:
                    raise CellParseError(r, target_column, label)
                mapping[label] = len(mapping)
    if task == "classification":
        y = np.array([mapping[v] for v in targets], dtype=np.int64)
        classes = list(mapping)
    else:
        y = np.array([[_parse_number(v, r, target_column)] for r, v in enumerate(targets, start=1)])
        classes = None
    return DatasetTable(feats, y, names, task=task, classes=classes, meta={"source": str(path)})


def _parse_number(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CellParseError(row, column, cell) from None
    if not math.isfinite(value):
        raise CellParseError(row, column, cell)
    return value


def save_csv(table: DatasetTable, path, target_column: str = "target"):
    """Inverse of :func:`load_csv`; floats are written with ``repr`` so they round-trip exactly."""
    lines = [",".join(table.feature_names + [target_column])]
    for i in range(table.n_rows):
        row = [repr(float(v)) for v in table.features[i]]
        if table.task == "classification":
            t = table.targets[i]
            row.append(table.classes[t] if table.classes is not None else str(int(t)))
        else:
            row.append(repr(float(np.ravel(table.targets[i])[0])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


# --- preprocessing -------------------------------------------------------


def fit_standardize(table: DatasetTable) -> StandardizeStats:
    mean, var = column_moments(table.features)
    return StandardizeStats(mean, np.sqrt(var))


def standardize(train: DatasetTable, apply_to: DatasetTable | None = None):
    """Scale with training-split mean and (biased) stddev.

    Returns ``(train_t, apply_t, stats)``; ``apply_t`` is None when no second
    table is given.
    """
    stats = fit_standardize(train)
    other = stats.apply(apply_to) if apply_to is not None else None
    return stats.apply(train), other, stats


def train_test_split(table: DatasetTable, test_fraction: float, seed: int) -> tuple[DatasetTable, DatasetTable]:
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = table.n_rows
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise DomainError(f"test_fraction {test_fraction} on {n} rows leaves an empty split")
    order = Rng(seed, _SPLIT_STREAM).permutation(n)
    return table.take(np.sort(order[n_test:])), table.take(np.sort(order[:n_test]))


# --- synthetic data ------------------------------------------------------


def _class_weights(n_classes: int, n_groups: int, rng: Rng) -> np.ndarray:
    """n_classes x n_groups score weights.

    When n_classes <= n_groups the rows are orthonormal, so class scores are
    i.i.d. standard normal and classes are balanced. Otherwise rows are random
    unit vectors.
    """
    z = rng.standard_normal((n_groups, n_groups))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    if n_classes <= n_groups:
        return np.ascontiguousarray(q[:n_classes])
    w = rng.standard_normal((n_classes, n_groups))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def group_aggregates(x: np.ndarray, groups: ColumnGroups) -> np.ndarray:
    """Per-group sum scaled by 1/sqrt(size): unit variance for i.i.d. N(0,1) columns."""
    return np.stack([x[:, list(g)].sum(axis=1) / math.sqrt(len(g)) for g in groups.groups], axis=1)


def class_scores(x: np.ndarray, groups: ColumnGroups, weights: np.ndarray) -> np.ndarray:
    return group_aggregates(x, groups) @ weights.T


def synth_blockwise(n_rows: int, n_features: int, n_groups: int, n_classes: int,
                    noise_std: float = 0.0, seed: int = 0) -> DatasetTable:
    """Wide table whose label depends on every contiguous column group.

    Features are i.i.d. N(0, 1). Each group contributes one aggregate
    (scaled sum); class scores are linear in the aggregates plus
    N(0, noise_std^2) noise per class, and the label is the argmax score.
    ``meta`` carries the generating weights and groups.
    """
    if n_rows < 1 or n_features < 1 or n_classes < 2:
        raise DomainError("need n_rows >= 1, n_features >= 1, n_classes >= 2")
    if not 1 <= n_groups <= n_features:
        raise DomainError(f"n_groups must be in [1, {n_features}], got {n_groups}")
    if noise_std < 0:
        raise DomainError(f"noise_std must be >= 0, got {noise_std}")
    root = Rng(seed)
    groups = ColumnGroups.auto(n_features, n_groups)
    x = root.child(_FEATURE_STREAM).normal(n_rows, n_features)
    w = _class_weights(n_classes, n_groups, root.child(_WEIGHT_STREAM))
    scores = class_scores(x, groups, w)
    if noise_std > 0:
        scores = scores + root.child(_NOISE_STREAM).normal(n_rows, n_classes, 0.0, noise_std)
    y = scores.argmax(axis=1).astype(np.int64)
    meta = {
        "generator": "synth_blockwise",
        "weights": w,
        "groups": groups,
        "noise_std": noise_std,
        "seed": seed,
    }
    names = [f"f{j}" for j in range(n_features)]
    return DatasetTable(x, y, names, task="classification", classes=[str(c) for c in range(n_classes)], meta=meta)


def mask_group(table: DatasetTable, group: int, seed: int = 0) -> DatasetTable:
    """Replace one generator group's columns with fresh N(0, 1) noise.

    Labels are untouched, so the masked columns no longer carry signal.
    """
    groups: ColumnGroups = table.meta["groups"]
    cols = list(groups.groups[group])
    x = table.features.copy()
    x[:, cols] = Rng(seed, _MASK_STREAM, group).normal(table.n_rows, len(cols))
    return replace(table, features=x, meta={**table.meta, "masked_groups": (group,)})


def bayes_accuracy(table: DatasetTable, hidden_groups=(), n_samples: int = 256, seed: int = 0) -> float:
    """Accuracy of the optimal rule on a synthetic table, scored against its labels.

    The rule may see every group aggregate except ``hidden_groups``. With all
    groups visible, noise is i.i.d. across classes and the optimal rule is the
    argmax of the noiseless scores. Otherwise the class posterior of each row
    is estimated by sampling the hidden aggregates (standard normal,
    independent of the rest) plus score noise, and the rule picks its mode.
    """
    groups: ColumnGroups = table.meta["groups"]
    w: np.ndarray = table.meta["weights"]
    sigma: float = table.meta["noise_std"]
    agg = group_aggregates(table.features, groups)
    hidden = list(hidden_groups)
    visible = [g for g in range(len(groups)) if g not in hidden]
    base = agg[:, visible] @ w[:, visible].T  # n x K
    if not hidden:
        return float((base.argmax(axis=1) == table.targets).mean())
    rng = Rng(seed, _MASK_STREAM, 99)
    k = w.shape[0]
    pred = np.empty(table.n_rows, dtype=np.int64)
    for i in range(table.n_rows):
        s = base[i] + rng.standard_normal((n_samples, len(hidden))) @ w[:, hidden].T
        if sigma > 0:
            s += sigma * rng.standard_normal((n_samples, k))
        pred[i] = np.bincount(s.argmax(axis=1), minlength=k).argmax()
    return float((pred == table.targets).mean())
