"""Command-line front end: ``gtr <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    TheoremParams,
    acf,
    channel_correlation,
    estimate_cycle_length,
    segment_correlation,
    theorem_grid,
    verify_theorem1,
)
from .autodiff import NonFiniteError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_pairs
from .data import DataError, SplitSpec, TimeSeriesDataset, ingest_csv, read_csv
from .synth import KINDS, SynthParams, synth_csv
from .training import TrainingDivergedError, build_model, evaluate, train

log = logging.getLogger("gtr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _seeds(arg: str | None, cfg: RunConfig) -> list[int]:
    if not arg:
        return [cfg.seed]
    try:
        seeds = [int(s) for s in arg.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {arg!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def load_dataset(cfg: RunConfig) -> TimeSeriesDataset:
    if not cfg.data:
        raise ConfigError("no data file configured (set data = PATH)")
    spec = SplitSpec(cfg.T, cfg.S, lengths=cfg.split, ratios=(cfg.train_ratio, cfg.val_ratio))
    ds = ingest_csv(cfg.data, spec)
    if cfg.dataset:
        ds.name = cfg.dataset
    return ds


def _resolve(cfg: RunConfig, ds: TimeSeriesDataset) -> RunConfig:
    if cfg.N and cfg.N != ds.num_channels:
        raise DataError(f"config says N={cfg.N} but {cfg.data} has {ds.num_channels} channels")
    return cfg.replace(N=ds.num_channels, dataset=cfg.dataset or ds.name)


def _record(cfg: RunConfig, seed: int, epoch, split: str, mse, mae) -> dict:
    return {"dataset": cfg.dataset, "T": cfg.T, "S": cfg.S, "seed": seed, "epoch": epoch, "split": split, "mse": mse, "mae": mae}


def _summary(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "values": [float(v) for v in arr]}


def run_seeds(cfg: RunConfig, ds: TimeSeriesDataset, seeds, out: Path | None, tag: str = "", metrics_fh=None):
    """Train one model per seed; returns per-seed (report, model) pairs."""
    results = []
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        model = build_model(run_cfg, ds.num_channels)

        def on_epoch(epoch, tr, vm, va, seed=seed):
            if metrics_fh is not None:
                metrics_fh.write(_dump(_record(run_cfg, seed, epoch, "train", tr, None)) + "\n")
                metrics_fh.write(_dump(_record(run_cfg, seed, epoch, "val", vm, va)) + "\n")

        report = train(model, ds, run_cfg, on_epoch=on_epoch)
        if metrics_fh is not None:
            metrics_fh.write(_dump(_record(run_cfg, seed, report.best_epoch, "test", report.test_mse, report.test_mae)) + "\n")
        if out is not None:
            save_checkpoint(model, run_cfg, out / f"{tag}model_seed{seed}.gtr")
        log.info("%sseed %d test_mse %.6f test_mae %.6f", tag, seed, report.test_mse, report.test_mae)
        results.append((seed, report, model))
    return results


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    ds = load_dataset(cfg)
    cfg = _resolve(cfg, ds)
    seeds = _seeds(args.seeds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "metrics.jsonl").open("w", encoding="utf-8") as fh:
        results = run_seeds(cfg, ds, seeds, out, metrics_fh=fh)
    summary = {
        "dataset": cfg.dataset,
        "T": cfg.T,
        "S": cfg.S,
        "seeds": seeds,
        "test_mse": _summary([r.test_mse for _, r, _ in results]),
        "test_mae": _summary([r.test_mae for _, r, _ in results]),
        "best_epoch": [r.best_epoch for _, r, _ in results],
    }
    _write_json(out / "summary.json", summary)
    _write_json(
        out / "manifest.json",
        {
            "command": "train",
            "version": __version__,
            "config": cfg.to_dict(),
            "seeds": seeds,
            "data": str(cfg.data),
            "data_sha256": ds.digest,
            "splits": [ds.train_len, ds.val_len, ds.test_len],
            "checkpoints": [f"model_seed{s}.gtr" for s in seeds],
        },
    )
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    _write_json(out / "timing.json", {str(s): r.wall_time for s, r, _ in results})
    print(_dump(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = None
    if args.manifest:
        mpath = Path(args.manifest)
        if not mpath.is_file():
            raise DataError(f"no such manifest: {mpath}")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        base = RunConfig(**{**manifest["config"], "split": tuple(manifest["config"]["split"]) if manifest["config"].get("split") else None})
        base = base.replace(**parse_pairs(args.override))
    else:
        base = load_config(args.config, args.override)
    model, cfg = load_checkpoint(args.checkpoint, base)
    ds = load_dataset(cfg)
    if manifest is not None and manifest.get("data_sha256") and manifest["data_sha256"] != ds.digest:
        raise DataError(f"{cfg.data} does not match the digest recorded in the manifest")
    records = []
    for split in args.splits.split(","):
        m, a = evaluate(model, ds, split)
        records.append(_record(cfg, cfg.seed, None, split, m, a))
    text = "".join(_dump(r) + "\n" for r in records)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.jsonl").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _parse_cells(items: list[str]) -> list[tuple[str, dict]]:
    cells = []
    for item in items:
        label, _, rest = item.partition(":")
        label = label.strip()
        if not label:
            raise UsageError(f"cell {item!r} has no label")
        pairs = [p for p in rest.replace(",", " ").split() if p]
        cells.append((label, parse_pairs(pairs)))
    if not cells:
        raise UsageError("ablation grid is empty")
    labels = [c[0] for c in cells]
    dupes = sorted({x for x in labels if labels.count(x) > 1})
    if dupes:
        raise UsageError(f"duplicate cell labels: {dupes}")
    return cells


def improvement(mse_orig: float, mse_new: float) -> float:
    """Relative gain reported as ``(orig - new) / new``."""
    return (mse_orig - mse_new) / mse_new


def cmd_ablate(args) -> int:
    items = list(args.cell or [])
    if args.grid:
        gpath = Path(args.grid)
        if not gpath.is_file():
            raise UsageError(f"no such grid file: {gpath}")
        for line in gpath.read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                items.append(line)
    cells = _parse_cells(items)
    base_cfg = load_config(args.config, args.override)
    ds = load_dataset(base_cfg)
    base_cfg = _resolve(base_cfg, ds)
    seeds = _seeds(args.seeds, base_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    baseline = args.baseline or cells[0][0]
    if baseline not in [c[0] for c in cells]:
        raise UsageError(f"baseline {baseline!r} is not a cell label")

    rows, partial = {}, False
    with (out / "metrics.jsonl").open("w", encoding="utf-8") as fh:
        for label, delta in cells:
            try:
                cfg = base_cfg.replace(**delta)
                cfg.validate()
                res = run_seeds(cfg, ds, seeds, None, tag=f"{label}:", metrics_fh=fh)
                rows[label] = {
                    "delta": delta,
                    "mse": _summary([r.test_mse for _, r, _ in res]),
                    "mae": _summary([r.test_mae for _, r, _ in res]),
                }
            except (ConfigError, TrainingDivergedError, NonFiniteError, ValueError) as exc:
                partial = True
                rows[label] = {"delta": delta, "error": str(exc)}
    base = rows[baseline]
    for label, row in rows.items():
        if "error" in row or "error" in base or label == baseline:
            continue
        row["improve_mse"] = improvement(base["mse"]["mean"], row["mse"]["mean"])
        row["improve_mae"] = improvement(base["mae"]["mean"], row["mae"]["mean"])
    table = {"dataset": base_cfg.dataset, "T": base_cfg.T, "S": base_cfg.S, "seeds": seeds, "baseline": baseline, "partial": partial, "cells": rows}
    _write_json(out / "ablation.json", table)
    _write_json(
        out / "manifest.json",
        {"command": "ablate", "version": __version__, "config": base_cfg.to_dict(), "cells": [[l, d] for l, d in cells], "seeds": seeds, "data_sha256": ds.digest},
    )
    print(f"{'cell':<20}{'mse':>10}{'mae':>10}{'improve':>10}")
    for label, row in rows.items():
        if "error" in row:
            print(f"{label:<20}  FAILED: {row['error']}")
            continue
        imp = row.get("improve_mse")
        print(f"{label:<20}{row['mse']['mean']:>10.4f}{row['mae']['mean']:>10.4f}{'' if imp is None else f'{imp:>9.1%}':>10}")
    return EXIT_DATA if partial else EXIT_OK


def _series_columns(path: str, column: str | None) -> tuple[list[str], np.ndarray]:
    names, values, _ = read_csv(path)
    if column is None:
        return names, values
    if column not in names:
        raise DataError(f"column {column!r} not in {names}")
    i = names.index(column)
    return [column], values[:, i : i + 1]


def cmd_estimate_cycle(args) -> int:
    names, values = _series_columns(args.data, args.column)
    results = {}
    for name, col in zip(names, values.T):
        results[name] = estimate_cycle_length(col, args.max_lag, args.min_lag)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            r = acf(col, args.max_lag)
            with (out / f"acf_{name}.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["lag", "acf"])
                w.writerows([k, repr(float(v))] for k, v in enumerate(r))
    for name, lag in results.items():
        print(f"{name}\t{lag}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    names, values = _series_columns(args.data, args.column if args.mode == "segments" else None)
    if args.mode == "channels":
        mat, labels = channel_correlation(values), names
    else:
        if not args.segment_len:
            raise UsageError("--segment-len is required for segment correlation")
        mat = segment_correlation(values[:, 0], args.segment_len)
        labels = [f"seg{i}" for i in range(mat.shape[0])]
    lines = [",".join([""] + labels)]
    lines += [",".join([lab] + [repr(float(v)) for v in row]) for lab, row in zip(labels, mat)]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"correlation_{args.mode}.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    single = [args.rho, args.var_eta, args.var_eps]
    if any(v is not None for v in single):
        cells = [
            TheoremParams(
                args.var_y,
                args.var_eta if args.var_eta is not None else 1.0,
                args.var_eps if args.var_eps is not None else 0.25,
                args.rho if args.rho is not None else 0.5,
                args.samples,
                args.seed,
                args.coupling,
            )
        ]
    else:
        cells = [TheoremParams(p.var_y, p.var_eta, p.var_eps, p.rho, args.samples, args.seed, args.coupling) for p in theorem_grid()]
    lines = [_dump(verify_theorem1(p)) for p in cells]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "theorem.jsonl").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    p = SynthParams(
        length=args.length,
        channels=args.channels,
        cycle=args.cycle,
        period=args.period,
        noise=args.noise,
        seed=args.seed,
        cycle_amp=args.cycle_amp,
        period_amp=args.period_amp,
    )
    synth_csv(args.kind, p, args.path)
    print(args.path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtr", description="Global temporal retriever forecasting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="per-epoch log lines on stderr")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="per-epoch log lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_opts(p, out_required=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="K=V", help="config override (repeatable)")
        p.add_argument("--seeds", help="comma-separated seeds; metrics reported as mean and std")

    p = sub.add_parser("train", parents=[common], help="train and evaluate on the test split")
    run_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="manifest.json written by train")
    p.add_argument("--config")
    p.add_argument("--override", action="append", default=[], metavar="K=V")
    p.add_argument("--splits", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train a grid of config variants")
    run_opts(p)
    p.add_argument("--cell", action="append", metavar="LABEL:K=V,...", help="grid cell (repeatable)")
    p.add_argument("--grid", help="file with one LABEL: K=V ... cell per line")
    p.add_argument("--baseline", help="label the improvement column is relative to (default: first cell)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("estimate-cycle", parents=[common], help="ACF-based cycle length per channel")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--max-lag", type=int, default=400)
    p.add_argument("--min-lag", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate_cycle)

    p = sub.add_parser("correlate", parents=[common], help="Pearson matrices between channels or segments")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("channels", "segments"), default="channels")
    p.add_argument("--segment-len", type=int)
    p.add_argument("--column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("verify-theorem", parents=[common], help="Monte-Carlo check of the correlation-error reduction")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coupling", choices=("shared", "independent"), default="shared")
    p.add_argument("--rho", type=float)
    p.add_argument("--var-y", type=float, default=1.0)
    p.add_argument("--var-eta", type=float)
    p.add_argument("--var-eps", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic CSV")
    p.add_argument("--kind", choices=KINDS, default="global-cycle")
    p.add_argument("--path", required=True)
    p.add_argument("--length", type=int, default=20_000)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--cycle", type=int, default=168)
    p.add_argument("--period", type=int, default=24)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--cycle-amp", type=float, default=1.0)
    p.add_argument("--period-amp", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"gtr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"gtr: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, NonFiniteError) as exc:
        print(f"gtr: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gtr: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
