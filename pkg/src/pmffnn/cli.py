"""Command-line interface.

Exit codes: 0 ok, 2 config/usage error, 3 data error, 4 training diverged.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ArchConfig
from .data import save_csv, synth_blockwise
from .errors import ConfigError, DataError, DivergenceError, DomainError, ShapeError
from .metrics import render_table
from .model_graph import build_model, count_parameters
from .runner import (
    MODEL_LABELS,
    DataSource,
    compare_architectures,
    eval_run,
    load_model,
    manifest_bytes,
    parse_synth,
    save_run,
    train_run,
)
from .training import TrainConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--synth", metavar="SPEC", help="synthetic data, e.g. groups=4,features=64,rows=2000,classes=4")
    p.add_argument("--data", metavar="CSV", help="CSV file with a header row")
    p.add_argument("--target", metavar="COLUMN", help="target column of --data")
    p.add_argument("--test-fraction", type=float, default=None)


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="architecture config (JSON)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=None, help="default 1e-3 (adam) / 1e-2 (sgd)")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="max concurrently executing pathways")
    _add_data_args(p)


def _source(args) -> DataSource | None:
    if args.synth is not None and args.data is not None:
        raise ConfigError("give either --synth or --data, not both", "data")
    if args.synth is not None:
        return DataSource(synth=parse_synth(args.synth))
    if args.data is not None:
        if not args.target:
            raise ConfigError("--data needs --target", "target")
        return DataSource(path=args.data, target=args.target)
    return None


def _train_config(args) -> TrainConfig:
    lr = args.lr if args.lr is not None else (1e-3 if args.optimizer == "adam" else 1e-2)
    return TrainConfig(
        optimizer=args.optimizer,
        lr=lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        shuffle=not args.no_shuffle,
    )


def _epoch_printer(total: int):
    def show(epoch, report):
        print(f"epoch {epoch + 1}/{total} loss={report.train_loss[-1]:.6f} ({report.epoch_seconds[-1]:.2f}s)", flush=True)

    return show


def cmd_train(args) -> int:
    cfg = ArchConfig.load(args.config)
    source = _source(args)
    if source is None:
        raise ConfigError("need --synth or --data", "data")
    train_cfg = _train_config(args)
    frac = 0.2 if args.test_fraction is None else args.test_fraction
    result = train_run(cfg, train_cfg, source, args.seed, frac, args.threads, on_epoch=_epoch_printer(args.epochs))
    model_path, manifest_path = save_run(result, args.out)
    print(render_table({"train": result.train_metrics, "test": result.test_metrics}))
    print(f"model: {model_path}\nmanifest: {manifest_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    loaded = load_model(args.model, threads=args.threads)
    report = eval_run(loaded, args.split, _source(args), args.seed, args.test_fraction)
    label = MODEL_LABELS.get(loaded.model.kind, loaded.model.kind)
    if args.json:
        print(report.to_json())
    else:
        print(render_table({label: report}))
    return EXIT_OK


def describe_lines(cfg: ArchConfig) -> list[str]:
    model = build_model(cfg, seed=0)
    b = count_parameters(model)
    rows = [("branch", "params", "first dense")]
    for name, count in b.branches.items():
        rows.append((name, str(count), str(b.first_dense_per_branch[name])))
    rows.append(("head", str(b.head), "-"))
    rows.append(("total", str(b.total), str(b.first_dense)))
    rows.append(("monolithic", str(b.monolithic_total), str(b.monolithic_first_dense)))
    w = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [f"kind={cfg.kind} n_features={cfg.n_features} n_outputs={cfg.n_outputs} branches={len(b.branches)}"]
    for i, r in enumerate(rows):
        lines.append(f"{r[0]:<{w[0]}}  {r[1]:>{w[1]}}  {r[2]:>{w[2]}}")
        if i == 0:
            lines.append("-" * (sum(w) + 4))
    lines.append(f"first-dense ratio vs width-matched monolithic: {b.first_dense_ratio:.4f}")
    lines.append(f"total ratio vs width-matched monolithic: {b.total_ratio:.4f}")
    return lines


def cmd_describe(args) -> int:
    cfg = ArchConfig.load(args.config)
    if args.json:
        b = count_parameters(build_model(cfg, seed=0))
        doc = {
            "branches": b.branches,
            "first_dense_per_branch": b.first_dense_per_branch,
            "head": b.head,
            "total": b.total,
            "first_dense": b.first_dense,
            "monolithic_total": b.monolithic_total,
            "monolithic_first_dense": b.monolithic_first_dense,
        }
        print(json.dumps(doc, indent=2))
    else:
        print("\n".join(describe_lines(cfg)))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        table = synth_blockwise(args.rows, args.features, args.groups, args.classes, args.noise, args.seed)
    except DomainError as exc:
        raise ConfigError(str(exc), "synth") from exc
    save_csv(table, args.out, target_column="label")
    print(f"wrote {table.n_rows}x{table.n_features} table to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = ArchConfig.load(args.config)
    source = _source(args)
    if source is None:
        raise ConfigError("need --synth or --data", "data")
    frac = 0.2 if args.test_fraction is None else args.test_fraction
    runs = compare_architectures(cfg, _train_config(args), source, args.seed, frac, args.threads)
    reports = {name: r.test_metrics for name, r in runs.items()}
    if args.json:
        print(json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2, sort_keys=True))
    else:
        print(render_table(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmffnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write model.pmfn + manifest.json")
    _add_train_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--seed", type=int, default=None, help="defaults to the training seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true")
    _add_data_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("describe", help="parameter accounting for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("synth", help="write a synthetic blockwise dataset as CSV")
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--features", type=int, default=64)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare", help="train PMFFNN, deep FFNN and 1D CNN under one training config")
    _add_train_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ShapeError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
