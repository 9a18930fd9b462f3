"""End-to-end runs shared by the CLI and the acceptance harness.

A run is fully determined by (architecture config, train config, data
source, seed): the seed drives synthetic generation, the train/test split,
weight init, dropout streams and batch shuffling, each on its own stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import ArchConfig
from .data import DatasetTable, StandardizeStats, load_csv, standardize, synth_blockwise, train_test_split
from .errors import ConfigError, DataError
from .metrics import MetricsReport, evaluate
from .model_graph import ModelGraph, build_model, count_parameters
from .persist import load_tensors, save_tensors, write_atomic
from .training import FitReport, TrainConfig, fit

SYNTH_KEYS = {"rows": int, "features": int, "groups": int, "classes": int, "noise": float}
SYNTH_DEFAULTS = {"rows": 2000, "features": 64, "groups": 4, "classes": 4, "noise": 0.0}

def parse_synth(spec: str) -> dict:
    """``"groups=4,features=64,rows=2000,classes=4"`` -> dict with defaults filled."""
    out = dict(SYNTH_DEFAULTS)
    for item in filter(None, (s.strip() for s in spec.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in SYNTH_KEYS:
            raise ConfigError(f"unknown synth key in {item!r}; expected one of {sorted(SYNTH_KEYS)}", "synth")
        try:
            out[key] = SYNTH_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"bad value {value!r}", f"synth.{key}") from None
    return out

@dataclass(frozen=True)
class DataSource:
    """Either ``synth`` parameters or a CSV ``path`` + ``target`` column."""

    synth: dict | None = None
    path: str | None = None
    target: str | None = None

    def load(self, seed: int, task: str, classes: list[str] | None = None) -> DatasetTable:
        if self.synth is not None:
            if task != "classification":
                raise DataError("the synthetic generator produces classification data only")
            s = self.synth
            try:
                return synth_blockwise(s["rows"], s["features"], s["groups"], s["classes"], s["noise"], seed)
            except ValueError as exc:
                raise DataError(str(exc)) from exc
        if self.path is None or self.target is None:
            raise ConfigError("need --synth or --data with --target", "data")
        return load_csv(self.path, self.target, task, classes=classes)

    def to_dict(self) -> dict:
        if self.synth is not None:
            return {"synth": dict(self.synth)}
        return {"csv": self.path, "target": self.target}

    @classmethod
    def from_dict(cls, doc: dict) -> "DataSource":
        if "synth" in doc:
            return cls(synth=dict(doc["synth"]))
        return cls(path=doc["csv"], target=doc["target"])

@dataclass
class Splits:
    train: DatasetTable
    test: DatasetTable
    stats: StandardizeStats
    raw: DatasetTable

def prepare_splits(source: DataSource, cfg: ArchConfig, seed: int, test_fraction: float = 0.2,
                   classes: list[str] | None = None, stats: StandardizeStats | None = None) -> Splits:
    table = source.load(seed, cfg.task, classes)
    check_compatible(table, cfg)
    try:
        train, test = train_test_split(table, test_fraction, seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if stats is None:
        train_s, test_s, stats = standardize(train, test)
    else:
        train_s, test_s = stats.apply(train), stats.apply(test)
    return Splits(train_s, test_s, stats, table)

def check_compatible(table: DatasetTable, cfg: ArchConfig):
    if table.n_features != cfg.n_features:
        raise DataError(f"data has {table.n_features} feature columns, config expects n_features={cfg.n_features}")
    if cfg.task == "classification" and table.n_classes > cfg.n_outputs:
        raise DataError(f"data has {table.n_classes} classes, config has n_outputs={cfg.n_outputs}")
    if cfg.task == "regression":
        dim = table.targets.shape[1] if table.targets.ndim == 2 else 1
        if dim != cfg.n_outputs:
            raise DataError(f"target dimension {dim} != n_outputs={cfg.n_outputs}")

@dataclass
class RunResult:
    model: ModelGraph
    report: FitReport
    train_metrics: MetricsReport
    test_metrics: MetricsReport
    splits: Splits
    manifest: dict = field(default_factory=dict)

def train_run(cfg: ArchConfig, train_cfg: TrainConfig, source: DataSource, seed: int,
              test_fraction: float = 0.2, threads: int = 1, on_epoch=None) -> RunResult:
    splits = prepare_splits(source, cfg, seed, test_fraction)
    model = build_model(cfg, seed=seed, threads=threads)
    try:
        report = fit(model, splits.train.features, splits.train.targets, train_cfg, on_epoch=on_epoch)
    finally:
        model.close()
    result = RunResult(
        model,
        report,
        evaluate(model, splits.train.features, splits.train.targets),
        evaluate(model, splits.test.features, splits.test.targets),
        splits,
    )
    result.manifest = build_manifest(cfg, train_cfg, source, seed, test_fraction, result)
    return result

def build_manifest(cfg: ArchConfig, train_cfg: TrainConfig, source: DataSource, seed: int,
                   test_fraction: float, result: RunResult) -> dict:
    # Wall-clock timings are deliberately left out so that manifests are byte-reproducible.
    return {
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "data": {
            "source": source.to_dict(),
            "test_fraction": test_fraction,
            "classes": result.splits.raw.classes,
            "fingerprint": result.splits.raw.fingerprint(),
            "train_fingerprint": result.splits.train.fingerprint(),
            "test_fingerprint": result.splits.test.fingerprint(),
        },
        "parameters": count_parameters(result.model).total,
        "fit": result.report.to_dict(timings=False),
        "train_metrics": result.train_metrics.to_dict(),
        "test_metrics": result.test_metrics.to_dict(),
    }

def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()

def save_run(result: RunResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    model_path, manifest_path = out / "model.pmfn", out / "manifest.json"
    meta = {
        "config": result.model.config.to_dict(),
        "seed": result.manifest["seed"],
        "data": {k: result.manifest["data"][k] for k in ("source", "test_fraction", "classes")},
    }
    tensors = dict(result.model.state_dict())
    tensors["data.mean"] = result.splits.stats.mean
    tensors["data.std"] = result.splits.stats.std
    save_tensors(model_path, tensors, meta)
    write_atomic(manifest_path, manifest_bytes(result.manifest))
    return model_path, manifest_path

@dataclass
class LoadedModel:
    model: ModelGraph
    stats: StandardizeStats
    meta: dict

def load_model(path, threads: int = 1) -> LoadedModel:
    tensors, meta = load_tensors(path)
    cfg = ArchConfig.from_dict(meta["config"])
    model = build_model(cfg, seed=meta.get("seed", 0), threads=threads)
    try:
        stats = StandardizeStats(tensors.pop("data.mean"), tensors.pop("data.std"))
    except KeyError:
        raise DataError(f"{path} lacks standardization tensors") from None
    try:
        model.load_state_dict(tensors)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return LoadedModel(model, stats, meta)

def eval_run(loaded: LoadedModel, split: str = "test", source: DataSource | None = None,
             seed: int | None = None, test_fraction: float | None = None) -> MetricsReport:
    meta = loaded.meta
    source = source or DataSource.from_dict(meta["data"]["source"])
    seed = meta["seed"] if seed is None else seed
    test_fraction = meta["data"]["test_fraction"] if test_fraction is None else test_fraction
    cfg = loaded.model.config
    splits = prepare_splits(source, cfg, seed, test_fraction, classes=meta["data"].get("classes"), stats=loaded.stats)
    if split == "train":
        table = splits.train
    elif split == "test":
        table = splits.test
    else:
        table = loaded.stats.apply(splits.raw)
    return evaluate(loaded.model, table.features, table.targets)

MODEL_LABELS = {"pmffnn": "PMFFNN", "deep_ffnn": "Deep FFNN", "cnn1d": "1D CNN"}

def compare_architectures(cfg: ArchConfig, train_cfg: TrainConfig, source: DataSource, seed: int,
                          test_fraction: float = 0.2, threads: int = 1,
                          kinds=("pmffnn", "deep_ffnn", "cnn1d")) -> dict[str, RunResult]:
    """Train each architecture on identical data with an identical TrainConfig."""
    return {
        MODEL_LABELS[k]: train_run(cfg.with_kind(k), train_cfg, source, seed, test_fraction, threads)
        for k in kinds
    }
