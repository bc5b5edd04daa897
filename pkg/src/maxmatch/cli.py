"""Command-line entry point: synth, train, eval, sweep, gradcheck, inspect.

Exit codes: 0 success, 1 failed check, 2 usage or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .evaluation import MetricReport, multi_trial, write_reports_csv, write_reports_json
from .experiments import (
    ExperimentConfig,
    Splits,
    evaluate,
    fit,
    primary_metric,
    run_trial,
    split_records,
    task_spec,
)
from .gradcheck import format_report, run_gradcheck
from .matching import VARIANTS, max_matching_loss
from .model import VocabularyError, load_checkpoint, save_checkpoint
from .optim import NumericalError
from .synth import generate, truth_sidecar
from .tasks import TaskSpec, pll_pool, read_jsonl, to_groups, write_jsonl

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")
SWEEP_AXES = {"epsilon": "epsilon", "tau": "tau", "rho": "noise_rate"}


class UsageError(Exception):
    pass


# -- config and manifests ----------------------------------------------------

def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    blob = {}
    if path is not None:
        try:
            blob = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(blob, dict):
            raise UsageError(f"config {path} must hold a JSON object")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = blob
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    try:
        return ExperimentConfig.from_dict(blob)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def write_json(path, blob) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(blob, fh, indent=1, sort_keys=True)
        fh.write("\n")


class Manifest:
    """One per run: resolved config, inputs, outputs, version and timestamps."""

    def __init__(self, command: str, out_dir: Path, config=None, inputs=None):
        self.blob = {
            "command": command,
            "config": config,
            "inputs": {k: str(v) for k, v in (inputs or {}).items()},
            "out_dir": str(out_dir),
            "version": __version__,
            "backend": kernels.BACKEND,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        self.out_dir = out_dir

    def finish(self, outputs, **extra) -> None:
        self.blob["outputs"] = sorted(str(o) for o in outputs)
        self.blob["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.blob.update(extra)
        write_json(self.out_dir / "manifest.json", self.blob)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- datasets ----------------------------------------------------------------

def dataset_task(data_dir: Path, task=None) -> str:
    if task is not None:
        return task
    manifest = data_dir / "manifest.json"
    try:
        return json.loads(manifest.read_text(encoding="utf-8"))["config"]["task"]
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot tell the task of {data_dir}; pass --task") from exc


def read_split(data_dir: Path, kind: str, split: str, required: bool = True) -> list:
    path = data_dir / f"{split}.jsonl"
    if not path.exists():
        if required:
            raise UsageError(f"missing dataset file {path}")
        return []
    try:
        return read_jsonl(path, kind)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def load_splits(data_dir: Path, kind: str, need_val: bool) -> Splits:
    return Splits(read_split(data_dir, kind, "train"),
                  read_split(data_dir, kind, "val", required=need_val),
                  read_split(data_dir, kind, "test", required=False))


# -- verbs -------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    cfg = cfg.reseeded(cfg.seed)
    out = _out_dir(args.out)
    manifest = Manifest("synth", out, cfg.to_dict(), {"config": args.config})
    records = generate(cfg.task, cfg.synth)
    splits = split_records(cfg, records)
    outputs = []
    for name in SPLITS:
        path = out / f"{name}.jsonl"
        write_jsonl(path, getattr(splits, name))
        outputs.append(path)
    truth = truth_sidecar(cfg.task, records, cfg.synth)
    write_json(out / "truth.json", truth)
    outputs.append(out / "truth.json")
    counts = {name: len(getattr(splits, name)) for name in SPLITS}
    manifest.finish(outputs, counts=counts)
    print(json.dumps({"task": cfg.task, **counts}))
    return EXIT_OK


def _train_overrides(args) -> dict:
    lr = None
    if args.lr is not None and args.lr != "grid":
        try:
            lr = float(args.lr)
        except ValueError as exc:
            raise UsageError(f"--lr must be a number or 'grid', got {args.lr!r}") from exc
    return {"train.loss": args.loss, "train.lam": args.lam, "train.lr": lr,
            "train.epochs": args.epochs, "train.seed": args.seed, "dim": args.dim,
            "lr_grid": True if args.lr == "grid" else None}


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    overrides = _train_overrides(args)
    overrides["task"] = dataset_task(data_dir, args.task)
    cfg = load_config(args.config, overrides)
    if args.config is None and args.data is not None:
        cfg = _with_data_shape(cfg, data_dir)
    out = _out_dir(args.out)
    manifest = Manifest("train", out, cfg.to_dict(), {"data": data_dir, "config": args.config})
    splits = load_splits(data_dir, cfg.task, need_val=cfg.lr_grid)
    try:
        params, hist, lr = fit(cfg, splits, track_val=len(splits.val) > 0)
    except NumericalError as exc:
        dump = out / "nan_dump.json"
        write_json(dump, {"error": str(exc), **exc.info})
        print(f"error: {exc}; diagnostics in {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VocabularyError, ValueError) as exc:
        raise UsageError(f"dataset does not fit the configuration: {exc}") from exc
    spec = task_spec(cfg)
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, params, {"task_spec": spec.to_dict(), "config": cfg.to_dict(),
                                   "lr": lr, "lam": cfg.train.lam, "loss": cfg.train.loss})
    hist.write_csv(out / "history.csv")
    manifest.finish([ckpt, out / "history.csv"], lr=lr)
    print(json.dumps({"checkpoint": str(ckpt), "lr": lr, "final_loss": hist.losses[-1]}))
    return EXIT_OK


def _with_data_shape(cfg: ExperimentConfig, data_dir: Path) -> ExperimentConfig:
    """Adopt the synthetic generator settings recorded next to a dataset."""
    try:
        blob = json.loads((data_dir / "manifest.json").read_text(encoding="utf-8"))
        synth = ExperimentConfig.from_dict(blob["config"]).synth
    except (OSError, KeyError, TypeError, ValueError):
        return cfg
    return replace(cfg, synth=synth)


def _load_model(path):
    try:
        params, meta = load_checkpoint(path)
        spec = TaskSpec.from_dict(meta["task_spec"])
        cfg = ExperimentConfig.from_dict(meta["config"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc
    return params, spec, cfg, meta


def cmd_eval(args) -> int:
    params, spec, cfg, _ = _load_model(args.checkpoint)
    data_dir = Path(args.data)
    kind = dataset_task(data_dir, args.task)
    if kind != spec.kind:
        raise UsageError(f"checkpoint is a {spec.kind} model, dataset is {kind}")
    records = read_split(data_dir, kind, args.split)
    if not records:
        raise UsageError(f"{args.split} split of {data_dir} is empty")
    out = _out_dir(args.out)
    manifest = Manifest("eval", out, cfg.to_dict(),
                        {"checkpoint": args.checkpoint, "data": data_dir})
    try:
        metrics = evaluate(cfg, params, records, mode=args.mode)
    except (VocabularyError, ValueError, IndexError) as exc:
        raise UsageError(f"checkpoint and dataset do not match: {exc}") from exc
    reports = [MetricReport.from_values(name, [value], [cfg.seed])
               for name, value in sorted(metrics.items())]
    write_reports_csv(out / "metrics.csv", reports)
    write_reports_json(out / "metrics.json", reports)
    manifest.finish([out / "metrics.csv", out / "metrics.json"], split=args.split,
                    mode=args.mode or cfg.rs_mode)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _sweep_point(base: ExperimentConfig, field_name: str, value, variant: str, seed: int) -> dict:
    cfg = replace(base, synth=replace(base.synth, **{field_name: value}))
    return run_trial(cfg, seed=seed, variant=variant)


def _parse_values(axis: str, text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --values {text!r}") from exc
    if axis == "tau":
        if any(v != int(v) for v in vals):
            raise UsageError("tau values must be integers")
        vals = [int(v) for v in vals]
    if not vals:
        raise UsageError("--values is empty")
    return vals


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"axis must be one of {sorted(SWEEP_AXES)}")
    cfg = load_config(args.config, {"task": args.task})
    values = _parse_values(args.axis, args.values)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}")
    field_name = SWEEP_AXES[args.axis]
    for v in values:  # validate every point before spending compute
        try:
            replace(cfg.synth, **{field_name: v})
        except ValueError as exc:
            raise UsageError(f"{args.axis}={v}: {exc}") from exc
    out = _out_dir(args.out)
    manifest = Manifest("sweep", out, cfg.to_dict(), {"config": args.config})
    metric = primary_metric(cfg.task)
    executor = ProcessPoolExecutor(args.jobs) if args.jobs > 1 else None
    rows = []
    try:
        for variant in variants:
            for value in values:
                run = partial(_sweep_point, cfg, field_name, value, variant)
                rep = multi_trial(run, args.trials, cfg.seed, executor)[metric]
                rows.append([args.axis, value, variant, metric, repr(rep.mean),
                             repr(rep.std), len(rep.values)])
                print(f"{variant} {args.axis}={value} {metric}={rep.mean:.4f} "
                      f"(std {rep.std:.4f})", flush=True)
    finally:
        if executor is not None:
            executor.shutdown()
    with open(out / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "variant", "metric", "mean", "std_population", "n_trials"])
        w.writerows(rows)
    manifest.finish([out / "curve.csv"], axis=args.axis, values=values, variants=variants)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    backends = kernels.available_backends()
    names = [args.backend] if args.backend != "all" else sorted(backends)
    missing = [n for n in names if n not in backends]
    if missing:
        raise UsageError(f"backend not available: {missing}")
    ok = True
    for name in names:
        report = run_gradcheck(seed=args.seed, per_cell=args.per_cell, backend=backends[name])
        print(f"[{name}]")
        print(format_report(report))
        ok = ok and report.ok
    return EXIT_OK if ok else EXIT_CHECK


def _breakdown_blob(params, spec, meta, sample, pool, index):
    cfg = spec.match_config(lam=float(meta.get("lam", 1.0)))
    _, bd = max_matching_loss(params, sample, cfg, pool=pool)
    blob = bd.to_dict()
    blob["group_index"] = index
    return blob


def cmd_inspect(args) -> int:
    params, spec, cfg, meta = _load_model(args.checkpoint)
    data_dir = Path(args.data)
    kind = dataset_task(data_dir, args.task)
    if kind != spec.kind:
        raise UsageError(f"checkpoint is a {spec.kind} model, dataset is {kind}")
    records = read_split(data_dir, kind, args.split)
    samples = to_groups(kind, records)
    pool = pll_pool(records) if kind == "pll" else None
    if args.all:
        indices = range(len(samples))
    else:
        if args.index is None:
            raise UsageError("pass --index or --all")
        if not 0 <= args.index < len(samples):
            raise UsageError(f"group index {args.index} out of range [0, {len(samples)})")
        indices = [args.index]
    try:
        blobs = [_breakdown_blob(params, spec, meta, samples[i], pool, i) for i in indices]
    except (VocabularyError, ValueError) as exc:
        raise UsageError(f"checkpoint and dataset do not match: {exc}") from exc
    if not args.all:
        print(json.dumps(blobs[0], indent=1))
        return EXIT_OK
    summary = {"groups": len(blobs)}
    if kind == "mil" and all(r.instance_labels is not None for r in records):
        hits = [int(r.instance_labels[b["selected"]] == r.bag_label)
                for r, b in zip(records, blobs)]
        summary["selection_fidelity"] = float(np.mean(hits))
    if args.out:
        out = _out_dir(args.out)
        with open(out / "breakdowns.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for b in blobs:
                fh.write(json.dumps(b) + "\n")
        write_json(out / "summary.json", summary)
        Manifest("inspect", out, cfg.to_dict(),
                 {"checkpoint": args.checkpoint, "data": data_dir}).finish(
            [out / "breakdowns.jsonl", out / "summary.json"], split=args.split)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxmatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one loss variant")
    t.add_argument("--data", required=True, help="directory with train/val jsonl files")
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--task", choices=("mil", "pll", "rs"))
    t.add_argument("--loss", choices=tuple(VARIANTS))
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--lr", help="learning rate, or 'grid' to select by validation")
    t.add_argument("--epochs", type=int)
    t.add_argument("--dim", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    e.add_argument("--task", choices=("mil", "pll", "rs"))
    e.add_argument("--mode", choices=("mm", "mm+"))
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="noise sweep over seeds and loss variants")
    w.add_argument("--config", required=True)
    w.add_argument("--axis", required=True, choices=tuple(SWEEP_AXES))
    w.add_argument("--values", required=True, help="comma-separated axis values")
    w.add_argument("--out", required=True)
    w.add_argument("--task", choices=("mil", "pll", "rs"))
    w.add_argument("--variants", help="comma-separated subset of loss variants")
    w.add_argument("--trials", type=int, default=5)
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-cell", type=int, default=6,
                   help="random problems per (task, group size) cell")
    g.add_argument("--backend", default=kernels.BACKEND,
                   choices=("python", "cython", "all"))
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="per-group matching diagnostics as JSON")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="train", choices=SPLITS)
    i.add_argument("--task", choices=("mil", "pll", "rs"))
    i.add_argument("--index", type=int)
    i.add_argument("--all", action="store_true", help="every group, plus a summary")
    i.add_argument("--out", help="directory for breakdowns.jsonl with --all")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
