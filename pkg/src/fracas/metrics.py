"""Evaluation metrics: SCD, PA, CA, RMSE(R), RMSE(T), min-matching selection.

Conventions, all recorded in the report metadata:
  - Chamfer values use the mean form (raw bidirectional sum divided by the
    total point count of both clouds) so thresholds are density-independent.
  - Rotation RMSE is over intrinsic X-Y-Z Euler components in degrees, each
    difference wrapped to (-180, 180]; a geodesic-angle RMSE is reported as
    an auxiliary column.
  - CLI tables print SCD scaled by 1e3.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .geometry import (
    EULER_CONVENTION,
    Pose,
    apply_pose,
    assemble_shape,
    mean_chamfer,
    quat_to_euler_deg,
    wrap_angle_deg,
)

__all__ = [
    "MetricThresholds",
    "ShapeMetrics",
    "MetricsReport",
    "min_matching_select",
    "shape_cd",
    "part_accuracy",
    "connectivity_accuracy",
    "rmse_rotation",
    "rmse_translation",
    "rmse_rotation_geodesic",
    "evaluate_prediction",
]


@dataclass(frozen=True)
class MetricThresholds:
    tau: float = 0.01     # per-part mean Chamfer bound for PA
    tau_c: float = 0.01   # squared contact gap bound for CA

    def __post_init__(self):
        if self.tau <= 0 or self.tau_c <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class ShapeMetrics:
    shape_id: str
    n_parts: int
    scd: float
    pa: float
    ca: float
    rmse_r: float
    rmse_t: float
    rmse_r_geodesic: float
    selected_sample: int = 0


@dataclass
class MetricsReport:
    shapes: list[ShapeMetrics] = field(default_factory=list)
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    euler_convention: str = EULER_CONVENTION
    chamfer_normalization: str = "sum / (|A| + |B|)"

    def _mean(self, attr: str) -> float:
        if not self.shapes:
            return math.nan
        return float(np.mean([getattr(s, attr) for s in self.shapes]))

    @property
    def scd(self) -> float:
        return self._mean("scd")

    @property
    def pa(self) -> float:
        return self._mean("pa")

    @property
    def ca(self) -> float:
        return self._mean("ca")

    @property
    def rmse_r(self) -> float:
        return self._mean("rmse_r")

    @property
    def rmse_t(self) -> float:
        return self._mean("rmse_t")

    def to_csv(self) -> str:
        header = "shape_id,n_parts,scd,pa,ca,rmse_r_deg,rmse_t,rmse_r_geodesic_deg,selected_sample"
        rows = [header]
        for s in self.shapes:
            rows.append(
                f"{s.shape_id},{s.n_parts},{s.scd!r},{s.pa!r},{s.ca!r},"
                f"{s.rmse_r!r},{s.rmse_t!r},{s.rmse_r_geodesic!r},{s.selected_sample}"
            )
        rows.append(
            f"AGGREGATE,{sum(s.n_parts for s in self.shapes)},{self.scd!r},{self.pa!r},"
            f"{self.ca!r},{self.rmse_r!r},{self.rmse_t!r},{self._mean('rmse_r_geodesic')!r},-1"
        )
        return "\n".join(rows) + "\n"

    def format_table(self) -> str:
        lines = [
            f"metrics over {len(self.shapes)} shapes "
            f"(tau={self.thresholds.tau:g}, tau_c={self.thresholds.tau_c:g}, "
            f"euler={self.euler_convention}, chamfer={self.chamfer_normalization})",
            f"{'shape':<16}{'N':>4}{'SCD(x1e3)':>12}{'PA':>8}{'CA':>8}{'RMSE(R)':>10}{'RMSE(T)':>10}",
        ]
        for s in self.shapes:
            lines.append(
                f"{s.shape_id:<16}{s.n_parts:>4}{s.scd * 1e3:>12.4f}{s.pa:>8.3f}"
                f"{s.ca:>8.3f}{s.rmse_r:>10.3f}{s.rmse_t:>10.4f}"
            )
        lines.append(
            f"{'MEAN':<16}{'':>4}{self.scd * 1e3:>12.4f}{self.pa:>8.3f}"
            f"{self.ca:>8.3f}{self.rmse_r:>10.3f}{self.rmse_t:>10.4f}"
        )
        return "\n".join(lines)


def min_matching_select(scds: Sequence[float]) -> int:
    """Index of the sample closest to ground truth (lowest SCD, ties -> lowest index)."""
    if len(scds) < 1:
        raise ContractError("min_matching_select: need at least one sample")
    return int(np.argmin(scds))


def shape_cd(pred_poses: Sequence[Pose], gt_poses: Sequence[Pose], clouds: Sequence[np.ndarray]) -> float:
    """Mean-form Chamfer between predicted and ground-truth assemblies."""
    return mean_chamfer(assemble_shape(pred_poses, clouds), assemble_shape(gt_poses, clouds))


def part_accuracy(
    pred_poses: Sequence[Pose],
    gt_poses: Sequence[Pose],
    clouds: Sequence[np.ndarray],
    tau: float = 0.01,
) -> float:
    """Fraction of parts whose mean Chamfer to their gt placement is below tau."""
    correct = sum(
        1
        for pred, gt, cloud in zip(pred_poses, gt_poses, clouds)
        if mean_chamfer(apply_pose(pred, cloud), apply_pose(gt, cloud)) < tau
    )
    return correct / len(clouds)


def connectivity_accuracy(pred_poses: Sequence[Pose], contacts, tau_c: float = 0.01) -> float:
    """Fraction of gt contact point pairs still touching under predicted poses.

    A pair (i, j, c_ij, c_ji) counts when the squared gap between the
    transformed contact points is below tau_c. No contacts is vacuously 1.0
    (with a warning).
    """
    if not contacts:
        warnings.warn("connectivity_accuracy: no contact pairs; reporting 1.0", stacklevel=2)
        return 1.0
    correct = 0
    for i, j, c_ij, c_ji in contacts:
        a = pred_poses[i].apply(np.asarray(c_ij, dtype=np.float64).reshape(1, 3))[0]
        b = pred_poses[j].apply(np.asarray(c_ji, dtype=np.float64).reshape(1, 3))[0]
        if float(((a - b) ** 2).sum()) < tau_c:
            correct += 1
    return correct / len(contacts)


def rmse_rotation(pred_poses: Sequence[Pose], gt_poses: Sequence[Pose]) -> float:
    """RMSE in degrees over all 3N wrapped Euler-component differences."""
    diffs = []
    for pred, gt in zip(pred_poses, gt_poses):
        e_pred = quat_to_euler_deg(pred.rotation)
        e_gt = quat_to_euler_deg(gt.rotation)
        diffs.extend(wrap_angle_deg(a - b) for a, b in zip(e_pred, e_gt))
    return float(np.sqrt(np.mean(np.square(diffs))))


def rmse_rotation_geodesic(pred_poses: Sequence[Pose], gt_poses: Sequence[Pose]) -> float:
    """Auxiliary RMSE of per-part geodesic rotation angles (degrees)."""
    angles = []
    for pred, gt in zip(pred_poses, gt_poses):
        dot = abs(float(np.dot(pred.rotation.as_array(), gt.rotation.as_array())))
        angles.append(math.degrees(2.0 * math.acos(min(1.0, dot))))
    return float(np.sqrt(np.mean(np.square(angles))))


def rmse_translation(pred_poses: Sequence[Pose], gt_poses: Sequence[Pose]) -> float:
    """RMSE over all 3N translation components."""
    diffs = np.stack([p.translation - g.translation for p, g in zip(pred_poses, gt_poses)])
    return float(np.sqrt(np.mean(diffs**2)))


def evaluate_prediction(
    shape_id: str,
    pred_poses: Sequence[Pose],
    gt_poses: Sequence[Pose],
    clouds: Sequence[np.ndarray],
    contacts,
    thresholds: MetricThresholds = MetricThresholds(),
    selected_sample: int = 0,
) -> ShapeMetrics:
    return ShapeMetrics(
        shape_id=shape_id,
        n_parts=len(clouds),
        scd=shape_cd(pred_poses, gt_poses, clouds),
        pa=part_accuracy(pred_poses, gt_poses, clouds, thresholds.tau),
        ca=connectivity_accuracy(pred_poses, contacts, thresholds.tau_c),
        rmse_r=rmse_rotation(pred_poses, gt_poses),
        rmse_t=rmse_translation(pred_poses, gt_poses),
        rmse_r_geodesic=rmse_rotation_geodesic(pred_poses, gt_poses),
        selected_sample=selected_sample,
    )
