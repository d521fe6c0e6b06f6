"""Command-line entry point.

Verbs: gen-data, train, eval, assemble, gradcheck, bench-scaling, grid.
Every run prints its resolved config (JSON) and seed; outputs land in an
explicit --out directory or a timestamped run directory under --run-dir
(default $FRACAS_RUN_DIR or ./runs). Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .dataset import GenConfig, generate_dataset, load_dataset, split
from .errors import ContractError, DatasetFormatError, NumericError, ShapeMismatchError
from .geometry import save_ply
from .metrics import MetricThresholds
from .model import AssemblyModel, ModelConfig, coarse_to_fine
from .nn import Rng, derive_seed, grad_check
from .trainer import (
    TrainConfig,
    evaluate,
    load_model_checkpoint,
    train,
    train_coarse_to_fine,
)

class CliValidationError(ValueError):
    pass


# DatasetFormatError, ContractError, NumericError, ShapeMismatchError all
# derive from ValueError: bad inputs exit 1, everything else exits 2
VALIDATION_ERRORS = (ValueError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def _run_directory(args, verb: str) -> Path:
    if getattr(args, "out", None):
        path = Path(args.out)
    else:
        base = Path(getattr(args, "run_dir", None) or os.environ.get("FRACAS_RUN_DIR", "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = base / f"{verb}-{stamp}-seed{getattr(args, 'seed', 0)}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CliValidationError(f"config file {path}: {err}") from err


def _print_resolved(verb: str, seed: int, payload: dict) -> None:
    print(f"[fracas {verb}] seed={seed}")
    print(json.dumps(payload, indent=1, sort_keys=True))


def _model_config(args, file_cfg: dict) -> ModelConfig:
    base = ModelConfig.from_dict(file_cfg["model"]) if "model" in file_cfg else ModelConfig()
    overrides = {
        "n_pc": args.n_pc if getattr(args, "n_pc", None) else None,
        "top_k": getattr(args, "top_k", None),
        "stages": getattr(args, "stages", None),
        "w_collision": getattr(args, "w_collision", None),
        "collision_scale": getattr(args, "collision_scale", None),
        "ctf_stages": getattr(args, "ctf_x", None),
    }
    d = base.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(d)


def _train_config(args, file_cfg: dict) -> TrainConfig:
    base = TrainConfig.from_dict(file_cfg["train"]) if "train" in file_cfg else TrainConfig()
    overrides = {
        "lr": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "mon_n": getattr(args, "mon_n", None),
        "seed": getattr(args, "seed", None),
        "checkpoint_interval": getattr(args, "checkpoint_interval", None),
        "ctf_stages": getattr(args, "ctf_x", None),
    }
    d = base.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise CliValidationError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _splits(records, args):
    fractions = _parse_fractions(args.split)
    return split(records, fractions, args.split_seed)


def _load_predictor(checkpoint_path):
    """Single checkpoint file -> model.forward; directory -> composed CTF stack."""
    path = Path(checkpoint_path)
    if path.is_dir():
        stage_files = sorted(path.glob("stage-*/final.ckpt"))
        if not stage_files:
            raise CliValidationError(f"{path}: no stage-*/final.ckpt files found")
        models = [load_model_checkpoint(f)[0] for f in stage_files]
        return (lambda clouds, seed: coarse_to_fine(clouds, seed, models)), models
    model, _, _ = load_model_checkpoint(path)
    return model.forward, [model]


def cmd_gen_data(args) -> int:
    file_cfg = _load_config_file(args.config)
    base = GenConfig.from_dict(file_cfg["gen"]) if "gen" in file_cfg else GenConfig()
    d = base.to_dict()
    cuts = tuple(int(v) for v in args.cuts.split(",")) if args.cuts else None
    for key, value in (
        ("count", args.count),
        ("seed", args.seed),
        ("n_pc", args.n_pc),
        ("primitive", args.primitive),
        ("cuts", cuts if cuts is None or len(cuts) > 1 else cuts[0]),
        ("jitter", args.jitter),
    ):
        if value is not None:
            d[key] = value
    config = GenConfig.from_dict(d)
    _print_resolved("gen-data", config.seed, {"gen": config.to_dict(), "out": str(args.out)})
    records = generate_dataset(config)
    from .dataset import save_dataset

    save_dataset(records, args.out)
    counts = sorted(r.n_parts for r in records)
    print(f"wrote {len(records)} shapes to {args.out} (parts per shape: {counts})")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_cfg = _model_config(args, file_cfg)
    train_cfg = _train_config(args, file_cfg)
    run_dir = _run_directory(args, "train")
    _print_resolved(
        "train",
        train_cfg.seed,
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": args.data,
         "run_dir": str(run_dir)},
    )
    (run_dir / "config.json").write_text(
        json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, indent=1, sort_keys=True)
    )
    records = load_dataset(args.data)
    train_records, val_records, _ = _splits(records, args)
    if train_cfg.ctf_stages > 1:
        models, results = train_coarse_to_fine(train_records, model_cfg, train_cfg, run_dir, val_records)
        print(f"trained {len(models)} coarse-to-fine stages")
        for s, result in enumerate(results):
            print(f"  stage {s}: steps={result.steps} final_loss={result.final_loss:.6f}")
    else:
        model = AssemblyModel(model_cfg, seed=derive_seed(train_cfg.seed, "model"))
        result = train(train_records, model, train_cfg, run_dir, val_records=val_records)
        print(f"steps={result.steps} final_loss={result.final_loss:.6f} "
              f"best_val_scd={result.best_val_scd:.6f}")
        print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    predictor, _ = _load_predictor(args.checkpoint)
    records = load_dataset(args.data)
    subset = {"train": 0, "val": 1, "test": 2}.get(args.subset)
    if subset is not None:
        records = _splits(records, args)[subset]
    if not records:
        raise CliValidationError(f"no records in subset {args.subset!r}")
    run_dir = _run_directory(args, "eval")
    thresholds = MetricThresholds(tau=args.tau, tau_c=args.tau_c)
    _print_resolved(
        "eval",
        args.seed,
        {"checkpoint": str(args.checkpoint), "data": args.data, "subset": args.subset,
         "mon_n": args.mon_n, "tau": args.tau, "tau_c": args.tau_c, "run_dir": str(run_dir)},
    )
    report = evaluate(records, predictor, args.mon_n, args.seed, thresholds)
    print(report.format_table())
    (run_dir / "metrics.csv").write_text(report.to_csv())
    print(f"metrics csv: {run_dir / 'metrics.csv'}")
    return 0


def cmd_assemble(args) -> int:
    predictor, _ = _load_predictor(args.checkpoint)
    records = load_dataset(args.data)
    if args.shape_id:
        matches = [r for r in records if r.shape_id == args.shape_id]
        if not matches:
            raise CliValidationError(f"shape id {args.shape_id!r} not in dataset")
        record = matches[0]
    else:
        record = records[args.index]
    run_dir = _run_directory(args, "assemble")
    _print_resolved(
        "assemble",
        args.seed,
        {"checkpoint": str(args.checkpoint), "shape": record.shape_id, "run_dir": str(run_dir)},
    )
    trace: list | None = [] if args.trace else None
    if args.trace:
        model, _, _ = load_model_checkpoint(args.checkpoint)
        prediction = model.forward(record.parts, args.seed, trace=trace)
    else:
        prediction = predictor(record.parts, args.seed)
    placed = [pose.apply(part) for pose, part in zip(prediction.poses, record.parts)]
    ply_path = run_dir / f"{record.shape_id}.ply"
    save_ply(ply_path, placed)
    pose_path = run_dir / f"{record.shape_id}_poses.txt"
    pose_path.write_text(
        "\n".join(
            f"{i} " + " ".join(repr(float(v)) for v in pose.as_array())
            for i, pose in enumerate(prediction.poses)
        )
        + "\n"
    )
    if args.trace:
        trace_path = run_dir / f"{record.shape_id}_attention.jsonl"
        trace_path.write_text("\n".join(json.dumps(row) for row in trace) + "\n")
        print(f"attention trace: {trace_path}")
    print(f"assembly: {ply_path}")
    print(f"poses: {pose_path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .losses import LossWeights, total_loss

    cfg = ModelConfig(
        n_pc=6, d_a=8, d_l=8, d_e=8, workspace_slots=2, heads=2, stages=1, top_k=4,
        noise_dim=2, encoder_widths=(6, 8), predictor_hidden=8, predictor_init_scale=0.05,
    )
    _print_resolved("gradcheck", args.seed, {"tol": args.tol, "model": cfg.to_dict()})
    model = AssemblyModel(cfg, seed=args.seed)
    rng = Rng(args.seed, ("data",))
    clouds = [rng.derive("c", i).normal((cfg.n_pc, 3)) * 0.3 for i in range(3)]
    clouds = [c - c.mean(axis=0) for c in clouds]
    from .geometry import Pose, quat_normalize

    gt = [
        Pose(quat_normalize(rng.derive("q", i).normal((4,))), rng.derive("t", i).normal((3,)) * 0.3)
        for i in range(3)
    ]
    weights = LossWeights.from_config(cfg)
    noise = model.sample_noise(3, seed=9)

    def loss_fn():
        pred = model.forward(clouds, noise=noise)
        return total_loss(pred, gt, clouds, weights).total

    report = grad_check(loss_fn, model.parameters(), tol=args.tol)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_bench_scaling(args) -> int:
    sizes = tuple(int(v) for v in args.n.split(","))
    run_dir = _run_directory(args, "bench")
    _print_resolved("bench-scaling", args.seed, {"sizes": list(sizes), "d": args.d, "run_dir": str(run_dir)})
    result = bench_mod.bench_workspace_scaling(sizes=sizes, d=args.d, seed=args.seed)
    csv_path = run_dir / "scaling.csv"
    csv_path.write_text(result.to_csv())
    for n, tw, tr in zip(result.sizes, result.workspace_times, result.reference_times):
        print(f"N={n:<4d} workspace {tw * 1e6:10.1f} us   pairwise {tr * 1e6:10.1f} us")
    print(f"workspace slope {result.workspace_slope:.3f}  pairwise slope {result.reference_slope:.3f}")
    print(f"csv: {csv_path}")
    return 0


def cmd_grid(args) -> int:
    file_cfg = _load_config_file(args.config)
    run_dir = _run_directory(args, "grid")
    records = load_dataset(args.data)
    train_records, val_records, _ = _splits(records, args)
    eval_records = val_records or train_records
    rows = ["param,value,scd,pa,ca,rmse_r,rmse_t,final_loss"]
    _print_resolved(
        "grid",
        args.seed,
        {"param": args.param, "values": args.values, "data": args.data, "run_dir": str(run_dir)},
    )
    for raw_value in args.values.split(","):
        model_cfg = _model_config(args, file_cfg)
        train_cfg = _train_config(args, file_cfg)
        d = model_cfg.to_dict()
        if args.param == "top-k":
            d["top_k"] = int(raw_value)
            label = raw_value
        elif args.param == "collision":
            wc, scale = raw_value.split(":")
            d["w_collision"] = float(wc)
            if float(wc) > 0:
                d["collision_scale"] = float(scale)
            label = raw_value.replace(":", "/")
        else:
            raise CliValidationError(f"unknown grid parameter {args.param!r}")
        model_cfg = ModelConfig.from_dict(d)
        model = AssemblyModel(model_cfg, seed=derive_seed(train_cfg.seed, "model"))
        result = train(train_records, model, train_cfg, run_dir / f"{args.param}-{label.replace('/', '_')}")
        report = evaluate(eval_records, model.forward, train_cfg.mon_n, train_cfg.seed)
        rows.append(
            f"{args.param},{label},{report.scd!r},{report.pa!r},{report.ca!r},"
            f"{report.rmse_r!r},{report.rmse_t!r},{result.final_loss!r}"
        )
        print(f"{args.param}={label}: scd={report.scd:.6f} pa={report.pa:.3f} ca={report.ca:.3f}")
    (run_dir / "grid.csv").write_text("\n".join(rows) + "\n")
    print(f"grid csv: {run_dir / 'grid.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fracas", description="Workspace-attention 3D fracture assembly")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, with_split=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (overrides --run-dir)")
        p.add_argument("--run-dir", default=None, help="base directory for timestamped runs")
        if with_split:
            p.add_argument("--split", default="0.8,0.1,0.1")
            p.add_argument("--split-seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate a synthetic fracture dataset")
    add_common(p, with_split=False)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--n-pc", type=int, default=None)
    p.add_argument("--primitive", choices=("box", "cylinder", "sphere-shell"), default=None)
    p.add_argument("--cuts", default=None, help="plane count, e.g. '3' or '1,6'")
    p.add_argument("--jitter", type=float, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--mon-n", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--ctf-x", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--n-pc", type=int, default=None)
    p.add_argument("--w-collision", type=float, default=None)
    p.add_argument("--collision-scale", type=float, default=None)
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (file) or CTF run dir")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subset", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--mon-n", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--tau-c", type=float, default=0.01)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("assemble", help="predict poses for one shape, write PLY")
    add_common(p, with_split=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--shape-id", default=None)
    p.add_argument("--trace", action="store_true", help="dump attention trace JSONL")
    p.set_defaults(fn=cmd_assemble)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    add_common(p, with_split=False)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-scaling", help="workspace vs pairwise attention timing")
    add_common(p, with_split=False)
    p.add_argument("--n", default="16,32,64,128")
    p.add_argument("--d", type=int, default=128)
    p.set_defaults(fn=cmd_bench_scaling)

    p = sub.add_parser("grid", help="hyperparameter sweep (top-k or collision)")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--param", choices=("top-k", "collision"), required=True)
    p.add_argument("--values", required=True, help="e.g. '1,5,10' or '0.1:30,0:0'")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--mon-n", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-pc", type=int, default=None)
    p.set_defaults(fn=cmd_grid)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
