"""Deterministic training and evaluation loops.

All randomness (batch shuffling, MoN noise seeds, evaluation seeds) is
derived from (train seed, counters), never from consumed stream state, so a
resumed run reproduces the uninterrupted one bit for bit and two runs with
identical seeds produce byte-identical checkpoints and logs.

Logs per run directory:
  loss.csv  step,collision,translation,rotation,shape,total,lr (batch means)
  mon.csv   step,sample_index,selected,mon_0..mon_{n-1} (per-sample audit)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import ShapeRecord
from .errors import CheckpointFormatError, TrainingDiverged
from .losses import LossWeights, mon_loss
from .metrics import MetricsReport, MetricThresholds, evaluate_prediction, min_matching_select, shape_cd
from .model import AssemblyModel, ModelConfig, PosePrediction, coarse_to_fine
from .nn import Adam, Rng, clip_grad_norm, derive_seed, load_checkpoint, no_grad, save_checkpoint

__all__ = [
    "TrainConfig",
    "TrainResult",
    "lr_at",
    "train",
    "evaluate",
    "train_coarse_to_fine",
    "save_model_checkpoint",
    "load_model_checkpoint",
]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 400
    warmup_ratio: float = 0.05
    batch_size: int = 16
    mon_n: int = 5
    seed: int = 0
    checkpoint_interval: int = 1000
    ctf_stages: int = 1
    grad_clip: float = 1.0
    lr_decay_factor: float = 100.0

    def __post_init__(self):
        if not (0.0 <= self.warmup_ratio < 1.0):
            raise ValueError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.mon_n < 1:
            raise ValueError(f"mon_n must be >= 1, got {self.mon_n}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr must be positive, epochs and batch_size >= 1")
        if self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    best_val_scd: float
    checkpoint_path: str
    log_path: str


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to lr, then cosine decay to lr / lr_decay_factor."""
    warm = int(round(config.warmup_ratio * total_steps))
    if warm > 0 and step < warm:
        return config.lr * step / warm
    if total_steps <= warm:
        return config.lr
    floor = config.lr / config.lr_decay_factor
    progress = (step - warm) / (total_steps - warm)
    return floor + 0.5 * (config.lr - floor) * (1.0 + math.cos(math.pi * progress))


def save_model_checkpoint(
    path,
    model: AssemblyModel,
    optimizer: Adam | None,
    step: int,
    config: TrainConfig | None,
    extra: dict | None = None,
) -> None:
    arrays = model.arrays()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    meta = {
        "step": step,
        "seed": config.seed if config else 0,
        "model_seed": model.seed,
        "rng_algorithm": Rng.algorithm,
        "adam_t": optimizer.t if optimizer else 0,
        "model_config": model.config.to_dict(),
        "train_config": config.to_dict() if config else None,
        "extra": extra or {},
    }
    save_checkpoint(path, arrays, meta)


def load_model_checkpoint(path) -> tuple[AssemblyModel, dict, dict]:
    """Rebuild a model from a checkpoint; returns (model, arrays, meta)."""
    arrays, meta = load_checkpoint(path)
    model = AssemblyModel(ModelConfig.from_dict(meta["model_config"]), seed=meta.get("model_seed", 0))
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    return model, arrays, meta


def _format_row(values) -> str:
    return ",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in values)


def train(
    records: Sequence[ShapeRecord],
    model: AssemblyModel,
    config: TrainConfig,
    run_dir,
    val_records: Sequence[ShapeRecord] = (),
    resume_from=None,
) -> TrainResult:
    """Run the batched MoN training loop; fully determined by seeds and config."""
    if not records:
        raise ValueError("train: empty training set")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    weights = LossWeights.from_config(model.config)
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)

    n = len(records)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * steps_per_epoch

    start_step = 0
    best_val = math.inf
    if resume_from is not None:
        arrays, meta = load_checkpoint(resume_from)
        if meta.get("train_config") != config.to_dict():
            raise CheckpointFormatError("resume: train config differs from checkpoint")
        if meta.get("model_config") != model.config.to_dict():
            raise CheckpointFormatError("resume: model config differs from checkpoint")
        model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
        optimizer.load_state_arrays(arrays, meta["adam_t"])
        start_step = int(meta["step"])
        best_val = float(meta["extra"].get("best_val_scd", math.inf))

    loss_path = run_dir / "loss.csv"
    mon_path = run_dir / "mon.csv"
    mode = "a" if start_step > 0 else "w"
    loss_log = open(loss_path, mode)
    mon_log = open(mon_path, mode)
    if start_step == 0:
        loss_log.write("step,collision,translation,rotation,shape,total,lr\n")
        mon_log.write("step,sample_index," + ",".join(f"mon_{j}" for j in range(config.mon_n)) + ",selected\n")

    final_loss = math.nan
    try:
        step = 0
        for epoch in range(config.epochs):
            order = Rng(config.seed, ("shuffle", epoch)).permutation(n)
            for b in range(steps_per_epoch):
                step += 1
                if step <= start_step:
                    continue
                batch = [records[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
                batch_total = None
                sums = {"collision": 0.0, "translation": 0.0, "rotation": 0.0, "shape": 0.0, "total": 0.0}
                for pos, rec in enumerate(batch):
                    seeds = [derive_seed(config.seed, "mon", step, pos, j) for j in range(config.mon_n)]
                    best, best_idx, totals = mon_loss(
                        model.forward, rec.parts, rec.gt_poses, config.mon_n, seeds, weights
                    )
                    mon_log.write(_format_row([step, pos, *totals, totals[best_idx]]) + "\n")
                    for key, value in best.values().items():
                        sums[key] += value
                    batch_total = best.total if batch_total is None else batch_total + best.total
                batch_total = batch_total * (1.0 / len(batch))
                loss_value = batch_total.item()
                rate = lr_at(step, total_steps, config)
                means = {k: v / len(batch) for k, v in sums.items()}
                loss_log.write(
                    _format_row(
                        [step, means["collision"], means["translation"], means["rotation"],
                         means["shape"], means["total"], rate]
                    )
                    + "\n"
                )
                if not math.isfinite(loss_value):
                    raise TrainingDiverged(f"non-finite loss at step {step}: {means}")

                optimizer.zero_grad()
                batch_total.backward()
                if config.grad_clip > 0:
                    clip_grad_norm(params, config.grad_clip)
                if rate > 0:
                    optimizer.step(lr=rate)
                final_loss = loss_value

                if config.checkpoint_interval > 0 and step % config.checkpoint_interval == 0:
                    save_model_checkpoint(
                        run_dir / f"step-{step:06d}.ckpt", model, optimizer, step, config,
                        {"best_val_scd": best_val},
                    )

            if val_records:
                report = evaluate(val_records, model.forward, config.mon_n, config.seed)
                if report.scd < best_val:
                    best_val = report.scd
                    save_model_checkpoint(
                        run_dir / "best.ckpt", model, optimizer, step, config,
                        {"best_val_scd": best_val},
                    )
    finally:
        loss_log.close()
        mon_log.close()

    final_path = run_dir / "final.ckpt"
    save_model_checkpoint(final_path, model, optimizer, total_steps, config, {"best_val_scd": best_val})
    return TrainResult(
        steps=total_steps,
        final_loss=final_loss,
        best_val_scd=best_val,
        checkpoint_path=str(final_path),
        log_path=str(loss_path),
    )


def evaluate(
    records: Sequence[ShapeRecord],
    predictor: Callable[[Sequence[np.ndarray], int], PosePrediction],
    mon_n: int,
    seed: int,
    thresholds: MetricThresholds = MetricThresholds(),
) -> MetricsReport:
    """Per shape: mon_n forwards, keep the min-SCD sample, report its metrics."""
    report = MetricsReport(thresholds=thresholds)
    with no_grad():
        for idx, rec in enumerate(records):
            candidates = [
                predictor(rec.parts, derive_seed(seed, "eval", idx, j)) for j in range(mon_n)
            ]
            scds = [shape_cd(c.poses, rec.gt_poses, rec.parts) for c in candidates]
            chosen = min_matching_select(scds)
            report.shapes.append(
                evaluate_prediction(
                    rec.shape_id,
                    candidates[chosen].poses,
                    rec.gt_poses,
                    rec.parts,
                    rec.contacts,
                    thresholds,
                    selected_sample=chosen,
                )
            )
    return report


def _transfer_records(
    records: Sequence[ShapeRecord],
    model: AssemblyModel,
    stage: int,
    seed: int,
) -> list[ShapeRecord]:
    """Transform each record by the stage's predictions for the next stage.

    Part clouds and contact points move with the predicted pose; gt poses
    compose with its inverse so the target world placement is unchanged.
    """
    out = []
    with no_grad():
        for idx, rec in enumerate(records):
            pred = model.forward(rec.parts, derive_seed(seed, "ctf-transfer", stage, idx))
            parts = [p.apply(c) for p, c in zip(pred.poses, rec.parts)]
            gt = [p.inverse().then(g) for p, g in zip(pred.poses, rec.gt_poses)]
            contacts = [
                type(c)(c.i, c.j, pred.poses[c.i].apply(c.point_i.reshape(1, 3))[0],
                        pred.poses[c.j].apply(c.point_j.reshape(1, 3))[0])
                for c in rec.contacts
            ]
            out.append(
                ShapeRecord(rec.shape_id, rec.category, parts, gt, contacts)
            )
    return out


def train_coarse_to_fine(
    records: Sequence[ShapeRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    run_dir,
    val_records: Sequence[ShapeRecord] = (),
) -> tuple[list[AssemblyModel], list[TrainResult]]:
    """Sequentially train ctf_stages independent networks.

    Stage s trains on the clouds left after applying stages < s; the final
    predictor composes all stage poses (``model.coarse_to_fine``).
    """
    run_dir = Path(run_dir)
    models: list[AssemblyModel] = []
    results: list[TrainResult] = []
    stage_records = list(records)
    stage_val = list(val_records)
    for s in range(config.ctf_stages):
        model = AssemblyModel(model_config, seed=derive_seed(config.seed, "ctf-model", s))
        result = train(stage_records, model, config, run_dir / f"stage-{s}", val_records=stage_val)
        models.append(model)
        results.append(result)
        if s + 1 < config.ctf_stages:
            stage_records = _transfer_records(stage_records, model, s, config.seed)
            if stage_val:
                stage_val = _transfer_records(stage_val, model, s, config.seed)
    return models, results
