"""Training objectives: collision, translation, rotation, shape, MoN.

All losses operate on the graph-attached (N, 7) head output so gradients
reach the raw pose head. The collision term penalizes coincident part
centroids with 1 - log(C * d) per pair; its pull strengthens like 1/d as
parts approach, which is what lets it break coincident local optima without
disturbing well-separated parts. Distances are floored smoothly at
epsilon_d (d_eff = sqrt(d^2 + epsilon_d^2)) so the term stays finite and
differentiable when centroids coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .geometry import Pose, assemble_shape
from .model import PosePrediction
from .nn import Tensor, concat, log, matmul, reduce_min, relu, reshape, sqrt, transpose, tsum, tmean

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "rotate_cloud",
    "transform_cloud",
    "graph_chamfer",
    "collision_loss",
    "translation_loss",
    "rotation_chamfer_loss",
    "shape_chamfer_loss",
    "total_loss",
    "mon_loss",
]


@dataclass(frozen=True)
class LossWeights:
    collision: float = 0.10
    translation: float = 1.0
    rotation: float = 10.0
    shape: float = 10.0
    collision_scale: float = 30.0
    epsilon_d: float = 1e-6
    clamp_negative_collision: bool = False

    def __post_init__(self):
        if self.collision_scale <= 0:
            raise ValueError("collision_scale must be positive")
        if self.epsilon_d <= 0:
            raise ValueError("epsilon_d must be positive")
        for name in ("collision", "translation", "rotation", "shape"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    @staticmethod
    def from_config(cfg) -> "LossWeights":
        return LossWeights(
            collision=cfg.w_collision,
            translation=cfg.w_translation,
            rotation=cfg.w_rotation,
            shape=cfg.w_shape,
            collision_scale=cfg.collision_scale,
            epsilon_d=cfg.epsilon_d,
            clamp_negative_collision=cfg.clamp_negative_collision,
        )


@dataclass
class LossBreakdown:
    """Graph-attached loss terms; total is their weighted sum."""

    collision: Tensor
    translation: Tensor
    rotation: Tensor
    shape: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "collision": self.collision.item(),
            "translation": self.translation.item(),
            "rotation": self.rotation.item(),
            "shape": self.shape.item(),
            "total": self.total.item(),
        }


def rotate_cloud(quat: Tensor, cloud: np.ndarray) -> Tensor:
    """Rotate a constant (n, 3) cloud by a graph-attached unit quaternion.

    p' = p + 2w(v x p) + 2 v x (v x p), built from column slices so the
    gradient reaches all four quaternion components.
    """
    pts = Tensor(np.asarray(cloud, dtype=np.float64))
    w = quat[0:1]
    vx, vy, vz = quat[1:2], quat[2:3], quat[3:4]

    def cross_cols(ax, ay, az, bx, by, bz):
        return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx

    px, py, pz = pts[:, 0:1], pts[:, 1:2], pts[:, 2:3]
    tx, ty, tz = cross_cols(vx, vy, vz, px, py, pz)
    tx, ty, tz = 2.0 * tx, 2.0 * ty, 2.0 * tz
    ux, uy, uz = cross_cols(vx, vy, vz, tx, ty, tz)
    return concat([px + w * tx + ux, py + w * ty + uy, pz + w * tz + uz], axis=1)


def transform_cloud(raw_row: Tensor, cloud: np.ndarray) -> Tensor:
    """Apply one [quat(4), translation(3)] head row to a constant cloud."""
    return rotate_cloud(raw_row[:4], cloud) + reshape(raw_row[4:7], (1, 3))


def graph_chamfer(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable Chamfer: bidirectional sum of squared NN distances.

    Uses the |a|^2 + |b|^2 - 2ab expansion; the metric-grade exact version
    lives in geometry.chamfer_distance and stays independent of this one.
    """
    a_sq = tsum(a * a, axis=1, keepdims=True)
    b_sq = tsum(b * b, axis=1, keepdims=True)
    d2 = a_sq + transpose(b_sq) - 2.0 * matmul(a, transpose(b))
    return tsum(reduce_min(d2, axis=1)) + tsum(reduce_min(d2, axis=0))


def collision_loss(
    pred_clouds: Sequence[Tensor],
    collision_scale: float,
    epsilon_d: float,
    clamp_negative: bool = False,
) -> Tensor:
    """Mean over part pairs of 1 - log(C * d_ij), d_ij = centroid distance.

    Negative terms (well separated pairs, C*d > e) are kept unless
    ``clamp_negative``; see LossWeights. N >= 2 required.
    """
    n = len(pred_clouds)
    if n < 2:
        raise ContractError(f"collision_loss: need at least 2 parts, got {n}")
    centroids = [tmean(c, axis=0) for c in pred_clouds]
    eps_sq = epsilon_d * epsilon_d
    terms = []
    for i in range(n):
        for j in range(i):
            diff = centroids[i] - centroids[j]
            d_eff = sqrt(tsum(diff * diff) + eps_sq)
            term = 1.0 - log(collision_scale * d_eff)
            terms.append(relu(term) if clamp_negative else term)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (2.0 / (n * (n - 1)))


def translation_loss(pred_t: Tensor, gt_t: np.ndarray) -> Tensor:
    """Sum over parts of squared translation error (no averaging)."""
    diff = pred_t - Tensor(np.asarray(gt_t, dtype=np.float64))
    return tsum(diff * diff)


def rotation_chamfer_loss(pred_quats: Tensor, gt_poses: Sequence[Pose], clouds: Sequence[np.ndarray]) -> Tensor:
    """Sum over parts of Chamfer between predicted- and gt-rotated clouds.

    Rotation only, no translation; clouds are the canonical part clouds.
    Deliberately tolerant of a part's rotational symmetries.
    """
    total = None
    for i, (pose, cloud) in enumerate(zip(gt_poses, clouds)):
        pred = rotate_cloud(pred_quats[i], cloud)
        target = Tensor(pose.rotation.rotate(cloud))
        term = graph_chamfer(pred, target)
        total = term if total is None else total + term
    return total


def shape_chamfer_loss(raw: Tensor, gt_poses: Sequence[Pose], clouds: Sequence[np.ndarray]) -> Tensor:
    """Chamfer between the predicted assembled shape and the gt assembly."""
    pred_union = concat([transform_cloud(raw[i], c) for i, c in enumerate(clouds)], axis=0)
    gt_union = Tensor(assemble_shape(gt_poses, clouds))
    return graph_chamfer(pred_union, gt_union)


def total_loss(
    pred: PosePrediction,
    gt_poses: Sequence[Pose],
    clouds: Sequence[np.ndarray],
    weights: LossWeights,
) -> LossBreakdown:
    raw = pred.raw_head_output
    if raw is None:
        raise ContractError("total_loss: prediction carries no graph-attached head output")
    n = raw.shape[0]
    pred_clouds = [transform_cloud(raw[i], c) for i, c in enumerate(clouds)]
    collision = collision_loss(
        pred_clouds, weights.collision_scale, weights.epsilon_d, weights.clamp_negative_collision
    )
    translation = translation_loss(raw[:, 4:7], np.stack([p.translation for p in gt_poses]))
    rotation = rotation_chamfer_loss(raw[:, 0:4], gt_poses, clouds)
    shape = shape_chamfer_loss(raw, gt_poses, clouds)
    total = (
        weights.collision * collision
        + weights.translation * translation
        + weights.rotation * rotation
        + weights.shape * shape
    )
    return LossBreakdown(collision, translation, rotation, shape, total)


def mon_loss(
    model_fn: Callable[[Sequence[np.ndarray], int], PosePrediction],
    clouds: Sequence[np.ndarray],
    gt_poses: Sequence[Pose],
    n: int,
    seeds: Sequence[int],
    weights: LossWeights,
) -> tuple[LossBreakdown, int, list[float]]:
    """Min-over-n loss: keep the best of n noise-perturbed predictions.

    Returns the winning breakdown (graph-attached, so the gradient flows
    only through the argmin branch), its index, and all n totals.
    """
    if n < 1:
        raise ContractError(f"mon_loss: n must be >= 1, got {n}")
    if len(seeds) != n:
        raise ContractError(f"mon_loss: expected {n} seeds, got {len(seeds)}")
    best: LossBreakdown | None = None
    best_idx = -1
    best_value = math.inf
    totals: list[float] = []
    for j, seed in enumerate(seeds):
        breakdown = total_loss(model_fn(clouds, int(seed)), gt_poses, clouds, weights)
        value = breakdown.total.item()
        totals.append(value)
        if value < best_value:
            best, best_idx, best_value = breakdown, j, value
    return best, best_idx, totals
