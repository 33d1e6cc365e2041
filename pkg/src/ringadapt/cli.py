"""Command-line entry point.

Every subcommand is deterministic given a config and its seeds, writes its
outputs as CSV/JSON under --out, and exits nonzero with a machine-readable
error line on stderr when something is wrong.  Plots are never rendered;
matrices are emitted as CSV for external tooling.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import gradcheck, training
from .analysis import analyze_class_similarity, analyze_drift, analyze_layer_similarity
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DatasetError
from .model import DualEncoderModel
from .ring import trainable_param_count

THREADS_ENV = "RINGADAPT_THREADS"
LAMBDA_GRID = (0.0, 0.1, 0.3, 0.5, 1.0)
RANK_GRID = (1, 2, 4, 8)


def _load_cfg(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    if getattr(args, "seed", None) is not None:
        cfg["model"]["adapter_seed"] = args.seed
        cfg["train"]["shuffle_seed"] = args.seed
        cfg["data"]["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        cfg["train"]["lambda"] = args.lam
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    return cfg


def _resolve(path: str, args) -> Path:
    """Relative dataset paths resolve against the config file's directory."""
    p = Path(path)
    if not p.is_absolute() and args.config:
        p = Path(args.config).parent / p
    return p


def _load_dataset(cfg, args):
    samples = _resolve(cfg["paths"]["samples"], args)
    protos = _resolve(cfg["paths"]["prototypes"], args)
    return datamod.load_dataset(samples, protos)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_matrix_csv(path, matrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(x)) for x in row])


def _emit(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    path.write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    d = cfg["data"]
    ds = datamod.gen_data(d["classes"], d["per_class"], cfg["model"]["d_in"],
                          d["cluster_std"], d["seed"], d["min_angle_deg"])
    datamod.save_dataset(ds, out / "samples.jsonl", out / "prototypes.jsonl")
    print(json.dumps({"samples": str(out / "samples.jsonl"),
                      "prototypes": str(out / "prototypes.jsonl"),
                      "classes": ds.num_classes, "count": int(ds.labels.size)}))
    return 0


def _run_training(cfg: dict, out: Path) -> list[training.Metrics]:
    ds = datamod.load_dataset(cfg["paths"]["samples"], cfg["paths"]["prototypes"])
    model = DualEncoderModel.build(cfgmod.model_dims(cfg))
    metrics = training.train(model, ds, cfgmod.train_config(cfg), log_path=out / "run_log.csv")
    save_checkpoint(model, out / "checkpoint")
    return metrics


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = _load_dataset(cfg, args)
    model = DualEncoderModel.build(cfgmod.model_dims(cfg))
    metrics = training.train(model, ds, cfgmod.train_config(cfg), log_path=out / "run_log.csv")
    save_checkpoint(model, out / "checkpoint")
    final = metrics[-1]
    _emit(out / "final_metrics.json", {f: getattr(final, f) for f in training.Metrics.CSV_FIELDS})
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = _load_dataset(cfg, args)
    model = load_checkpoint(args.checkpoint)
    shots = cfg["train"]["shots"]
    base = training.evaluate(model, ds, "base", shots)
    novel = training.evaluate(model, ds, "novel", shots)
    _emit(out / "eval.json", {"base_acc": base, "novel_acc": novel,
                              "hm": training.harmonic_mean(base, novel)})
    return 0


def cmd_param_count(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    dims = cfgmod.model_dims(cfg)
    per_stack = {f"layer_rank_{rank}": trainable_param_count(dims.plan(rank))
                 for rank in dims.layer_ranks}
    tr_per_encoder = sum(per_stack.values())
    comb_per_encoder = len(dims.layer_ranks) * dims.d + len(dims.layer_ranks)
    max_rank = max(dims.layer_ranks)
    baseline = (dims.d + dims.d) * max_rank * dims.layers
    payload = {
        "per_stack": per_stack,
        "tr_params_per_encoder": tr_per_encoder,
        "combinator_params_per_encoder": comb_per_encoder,
        "total_trainable": 2 * (tr_per_encoder + comb_per_encoder),
        "matrix_adapter_baseline_per_encoder": baseline,
        "tr_to_baseline_ratio": tr_per_encoder / baseline,
    }
    _emit(out / "param_count.json", payload)
    return 0


def cmd_grad_check(args) -> int:
    out = _out_dir(args)
    report = gradcheck.default_suite(seed=args.seed if args.seed is not None else 0)
    _emit(out / "grad_check.json", report)
    return 0 if all(entry["pass"] for entry in report) else 1


def cmd_analyze_layers(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = _load_dataset(cfg, args)
    model = load_checkpoint(args.checkpoint)
    samples = ds.features[: args.samples]
    for branch in ("visual", "textual"):
        sim = analyze_layer_similarity(model, samples, branch)
        _write_matrix_csv(out / f"layer_similarity_{branch}.csv", sim)
    print(json.dumps({"out": str(out), "samples": int(samples.shape[0])}))
    return 0


def cmd_analyze_classes(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = _load_dataset(cfg, args)
    model = load_checkpoint(args.checkpoint)
    sim = analyze_class_similarity(model, ds.prototypes)
    _write_matrix_csv(out / "class_similarity.csv", sim)
    off_diag = sim[~np.eye(sim.shape[0], dtype=bool)]
    print(json.dumps({"off_diagonal_mean": float(off_diag.mean()), "out": str(out)}))
    return 0


def cmd_analyze_drift(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = _load_dataset(cfg, args)
    model = load_checkpoint(args.checkpoint)
    reference = DualEncoderModel.build(model.dims)
    summary = analyze_drift(model, reference, ds.features)
    _emit(out / "drift.json", summary.to_dict())
    return 0


def _sweep_point(cfg: dict, point_dir: str) -> dict:
    out = Path(point_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = _run_training(cfg, out)
    final = metrics[-1]
    return {f: getattr(final, f) for f in training.Metrics.CSV_FIELDS}


def _run_sweep(points: list[tuple[dict, dict, Path]], out: Path, name: str) -> int:
    """points: (tag-columns, config, point-dir) triples, run with <= env-cap workers."""
    workers = max(1, int(os.environ.get(THREADS_ENV, "1")))
    rows = []
    if workers == 1 or len(points) == 1:
        for tag, cfg, pdir in points:
            rows.append({**tag, **_sweep_point(cfg, str(pdir))})
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(points))) as pool:
            futures = [pool.submit(_sweep_point, cfg, str(pdir)) for _, cfg, pdir in points]
            for (tag, _, _), fut in zip(points, futures):
                rows.append({**tag, **fut.result()})
    fields = list(rows[0].keys())
    with open(out / f"{name}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"out": str(out / f"{name}.csv"), "points": len(rows)}))
    return 0


def _materialized_cfg(cfg: dict, args) -> dict:
    """Sweep configs carry absolute dataset paths so workers need no cwd."""
    out = dict(cfg)
    out["paths"] = {
        "samples": str(_resolve(cfg["paths"]["samples"], args)),
        "prototypes": str(_resolve(cfg["paths"]["prototypes"], args)),
    }
    return out


def cmd_sweep_lambda(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    _load_dataset(cfg, args)  # fail fast if files are missing
    points = []
    for lam in LAMBDA_GRID:
        point = cfgmod.merge_config(cfg, {"train": {"lambda": lam}})
        points.append(({"lambda": lam}, _materialized_cfg(point, args), out / f"lambda_{lam}"))
    return _run_sweep(points, out, "sweep_lambda")


def cmd_sweep_rank(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    _load_dataset(cfg, args)
    dims = cfgmod.model_dims(cfg)
    points = []
    for rank in RANK_GRID:
        point = cfgmod.merge_config(cfg, {"model": {"layer_ranks": [rank, 1]}})
        tag = {"fine_layer_rank": rank,
               "tr_params": trainable_param_count(dims.plan(rank))
               + trainable_param_count(dims.plan(1))}
        points.append((tag, _materialized_cfg(point, args), out / f"rank_{rank}"))
    return _run_sweep(points, out, "sweep_rank")


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringadapt",
        description="Cross-layer tensor-ring adapter training and analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, samples=False):
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override adapter/data/shuffle seeds")
        p.add_argument("--lambda", dest="lam", type=float, help="override the drift-regularizer weight")
        p.add_argument("--epochs", type=int, help="override the epoch count")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        if samples:
            p.add_argument("--samples", type=int, default=16, help="samples to analyze")

    handlers = {}
    for name, fn, kwargs in (
        ("gen-data", cmd_gen_data, {}),
        ("train", cmd_train, {}),
        ("eval", cmd_eval, {"checkpoint": True}),
        ("param-count", cmd_param_count, {}),
        ("grad-check", cmd_grad_check, {}),
        ("analyze-layers", cmd_analyze_layers, {"checkpoint": True, "samples": True}),
        ("analyze-classes", cmd_analyze_classes, {"checkpoint": True}),
        ("analyze-drift", cmd_analyze_drift, {"checkpoint": True}),
        ("sweep-lambda", cmd_sweep_lambda, {}),
        ("sweep-rank", cmd_sweep_rank, {}),
    ):
        p = sub.add_parser(name)
        common(p, **kwargs)
        handlers[name] = fn
    parser.set_defaults(_handlers=handlers)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args._handlers[args.command](args)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError, RuntimeError, IndexError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
