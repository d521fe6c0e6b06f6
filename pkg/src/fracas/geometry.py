"""Point clouds, quaternion poses, rigid transforms, and Chamfer distance.

Clouds are plain (n, 3) float64 numpy arrays in normalized object units.
Rotations are unit quaternions canonicalized to w >= 0 (q and -q denote the
same rotation). Euler angles use the intrinsic X-Y-Z convention; the rotation
metric module records this in its report metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError

__all__ = [
    "Quaternion",
    "Pose",
    "quat_normalize",
    "random_quaternion",
    "apply_pose",
    "chamfer_distance",
    "mean_chamfer",
    "centroid",
    "assemble_shape",
    "quat_to_euler_deg",
    "euler_deg_to_matrix",
    "wrap_angle_deg",
    "save_ply",
]

EULER_CONVENTION = "intrinsic-xyz"


@dataclass(frozen=True)
class Quaternion:
    """Rotation as (w, x, y, z); unit-norm after normalized()."""

    w: float
    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def normalized(self) -> "Quaternion":
        return quat_normalize(self)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product; (a * b) rotates by b first, then a."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def rotate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.to_matrix().T

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)


def quat_normalize(q) -> Quaternion:
    """Project a 4-vector onto unit quaternions with w >= 0."""
    if isinstance(q, Quaternion):
        vals = (q.w, q.x, q.y, q.z)
    else:
        vals = tuple(float(v) for v in np.asarray(q, dtype=np.float64).reshape(-1))
        if len(vals) != 4:
            raise ContractError(f"quat_normalize: need 4 components, got {len(vals)}")
    n = math.sqrt(sum(v * v for v in vals))
    if n <= 1e-12:
        raise NumericError(f"quat_normalize: norm {n:.3e} too close to zero")
    w, x, y, z = (v / n for v in vals)
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return Quaternion(w, x, y, z)


def random_quaternion(rng) -> Quaternion:
    """Uniform random rotation (normalized 4-dim Gaussian)."""
    return quat_normalize(rng.normal((4,)))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotate by ``rotation`` then add ``translation``."""

    rotation: Quaternion
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, cloud: np.ndarray) -> np.ndarray:
        return self.rotation.rotate(cloud) + self.translation

    def then(self, after: "Pose") -> "Pose":
        """Pose equal to applying self first, then ``after``."""
        return Pose(
            quat_normalize(after.rotation * self.rotation),
            after.rotation.rotate(self.translation) + after.translation,
        )

    def inverse(self) -> "Pose":
        inv = self.rotation.conjugate()
        return Pose(inv, -inv.rotate(self.translation))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rotation.as_array(), self.translation])

    @staticmethod
    def identity() -> "Pose":
        return Pose(Quaternion.identity(), np.zeros(3))

    @staticmethod
    def from_array(values) -> "Pose":
        v = np.asarray(values, dtype=np.float64).reshape(7)
        return Pose(Quaternion(*v[:4]), v[4:])


def apply_pose(pose: Pose, cloud: np.ndarray) -> np.ndarray:
    return pose.apply(cloud)


def _check_cloud(c, name: str) -> np.ndarray:
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise ContractError(f"{name}: expected non-empty (n, 3) cloud, got shape {arr.shape}")
    return arr


def chamfer_distance(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> float:
    """Bidirectional sum of squared nearest-neighbor distances.

    Exact brute force over all pairs, computed from direct coordinate
    differences (row-chunked to bound memory, values unchanged).
    """
    a = _check_cloud(a, "chamfer_distance: a")
    b = _check_cloud(b, "chamfer_distance: b")
    min_ab = np.empty(len(a))
    min_ba = np.full(len(b), np.inf)
    for i in range(0, len(a), chunk):
        block = a[i : i + chunk]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        min_ab[i : i + chunk] = d2.min(axis=1)
        np.minimum(min_ba, d2.min(axis=0), out=min_ba)
    return float(min_ab.sum() + min_ba.sum())


def mean_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Chamfer distance divided by the total point count of both clouds."""
    return chamfer_distance(a, b) / (len(a) + len(b))


def centroid(cloud: np.ndarray) -> np.ndarray:
    return _check_cloud(cloud, "centroid").mean(axis=0)


def assemble_shape(poses: Sequence[Pose], clouds: Sequence[np.ndarray]) -> np.ndarray:
    """Union of per-part transformed clouds, concatenated in part order."""
    if len(poses) != len(clouds):
        raise ContractError(f"assemble_shape: {len(poses)} poses vs {len(clouds)} clouds")
    return np.concatenate([p.apply(c) for p, c in zip(poses, clouds)], axis=0)


def wrap_angle_deg(angle: float) -> float:
    """Wrap into (-180, 180]."""
    w = math.remainder(angle, 360.0)
    return 180.0 if w == -180.0 else w


def euler_deg_to_matrix(angles) -> np.ndarray:
    """Rotation matrix for intrinsic X-Y-Z angles in degrees."""
    ax, ay, az = (math.radians(v) for v in np.asarray(angles, dtype=np.float64).reshape(3))
    ca, sa = math.cos(ax), math.sin(ax)
    cb, sb = math.cos(ay), math.sin(ay)
    cc, sc = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rx @ ry @ rz


def quat_to_euler_deg(q: Quaternion) -> np.ndarray:
    """Intrinsic X-Y-Z angles in degrees, each in (-180, 180].

    In the gimbal-lock neighborhood (|pitch| at 90 degrees) roll is set to 0
    and the remaining freedom goes to yaw.
    """
    m = q.to_matrix()
    s = min(1.0, max(-1.0, m[0, 2]))
    if abs(s) >= 1.0 - 1e-12:
        pitch = math.copysign(math.pi / 2, s)
        roll = 0.0
        yaw = math.atan2(m[1, 0], m[1, 1])
    else:
        pitch = math.asin(s)
        roll = math.atan2(-m[1, 2], m[2, 2])
        yaw = math.atan2(-m[0, 1], m[0, 0])
    return np.array([wrap_angle_deg(math.degrees(roll)),
                     wrap_angle_deg(math.degrees(pitch)),
                     wrap_angle_deg(math.degrees(yaw))])


def save_ply(path, clouds: Sequence[np.ndarray]) -> None:
    """ASCII PLY export with an integer part_id per vertex."""
    parts = [_check_cloud(c, f"save_ply: part {i}") for i, c in enumerate(clouds)]
    total = sum(len(p) for p in parts)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {total}",
        "property float x",
        "property float y",
        "property float z",
        "property int part_id",
        "end_header",
    ]
    for pid, part in enumerate(parts):
        for x, y, z in part:
            lines.append(f"{x:.9g} {y:.9g} {z:.9g} {pid}")
    Path(path).write_text("\n".join(lines) + "\n")
