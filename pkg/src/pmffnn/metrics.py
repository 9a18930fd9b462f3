"""Classification and regression metrics, plus report rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .tensor_core import as_matrix

CLASSIFICATION_ROWS = ("accuracy", "precision", "recall", "f1")
REGRESSION_ROWS = ("mae", "rmse", "r2")
ROW_LABELS = {
    "accuracy": "Accuracy",
    "precision": "Precision",
    "recall": "Recall",
    "f1": "F1-Score",
    "mae": "MAE",
    "rmse": "RMSE",
    "r2": "R^2",
}


@dataclass
class MetricsReport:
    task: str
    values: dict[str, float | None] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def to_dict(self) -> dict:
        return {"task": self.task, **self.values}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def confusion(true_labels, pred_labels, n_classes: int) -> np.ndarray:
    """K x K counts; entry (i, j) counts true class i predicted as j."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(pred_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} true labels but {p.size} predictions")
    for name, v in (("true", t), ("predicted", p)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise DomainError(f"{name} labels must lie in [0, {n_classes})")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(num.shape), where=den > 0)


def classification_metrics(cm) -> MetricsReport:
    """Accuracy plus macro precision/recall; F1 is their harmonic mean.

    A class with no predictions (or no true samples) contributes 0 to the
    macro precision (recall).
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total < 1:
        raise DomainError("classification metrics need at least one sample")
    tp = np.diag(cm)
    precision = float(_safe_div(tp, cm.sum(axis=0)).mean())
    recall = float(_safe_div(tp, cm.sum(axis=1)).mean())
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsReport(
        "classification",
        {"accuracy": float(tp.sum() / total), "precision": precision, "recall": recall, "f1": f1},
    )


def regression_metrics(pred, target) -> MetricsReport:
    """MAE, RMSE and R^2 (None when the target is constant)."""
    pred = as_matrix(np.asarray(pred, dtype=np.float64).reshape(len(pred), -1), "pred")
    target = as_matrix(np.asarray(target, dtype=np.float64).reshape(len(target), -1), "target")
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.shape[0] < 2:
        raise DomainError("regression metrics need at least 2 rows")
    err = pred - target
    sse = float((err**2).sum())
    sst = float(((target - target.mean(axis=0)) ** 2).sum())
    return MetricsReport(
        "regression",
        {
            "mae": float(np.abs(err).mean()),
            "rmse": math.sqrt(float((err**2).mean())),
            "r2": 1.0 - sse / sst if sst > 0 else None,
        },
    )


def evaluate(model, features, targets) -> MetricsReport:
    out = model.predict(features)
    if model.config.task == "classification":
        return classification_metrics(confusion(targets, out.argmax(axis=1), model.n_outputs))
    return regression_metrics(out, targets)


def render_table(reports: dict[str, MetricsReport], digits: int = 4) -> str:
    """Plain-text table: one row per metric, one column per model."""
    if not reports:
        return ""
    task = next(iter(reports.values())).task
    keys = CLASSIFICATION_ROWS if task == "classification" else REGRESSION_ROWS
    header = ["Metric", *reports]
    rows = [header]
    for key in keys:
        row = [ROW_LABELS[key]]
        for rep in reports.values():
            v = rep.values.get(key)
            row.append("n/a" if v is None else f"{v:.{digits}f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    out = [sep]
    for i, r in enumerate(rows):
        out.append("| " + " | ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))) + " |")
        if i == 0:
            out.append(sep)
    out.append(sep)
    return "\n".join(out)
