"""Synthetic fracture dataset: generation, canonicalization, storage, splits.

A shape is a dense point sample of a primitive (box, cylinder, sphere shell)
normalized to a unit bounding box, partitioned into cells by random planes.
Undersized cells merge into their nearest neighbor; each surviving cell is
resampled to exactly n_pc points, contact point pairs are extracted across
touching parts, and each part is canonicalized (zero centroid, random
rotation) with a ground-truth pose that undoes the canonicalization.

On-disk format: one ``manifest.json`` per dataset (version, shapes, poses as
decimal text, contacts) plus one raw little-endian float32 file per part.
Canonical part coordinates are float32-exact by construction, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, DatasetFormatError
from .geometry import Pose, Quaternion, quat_normalize, random_quaternion
from .nn import Rng, derive_seed

__all__ = [
    "Contact",
    "ShapeRecord",
    "GenConfig",
    "generate_shape",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "split",
]

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "fracas-dataset"
FORMAT_VERSION = 1

PRIMITIVES = ("box", "cylinder", "sphere-shell")


class Contact(NamedTuple):
    """A ground-truth touch point: canonical-frame coordinates on both parts."""

    i: int
    j: int
    point_i: np.ndarray
    point_j: np.ndarray


@dataclass
class ShapeRecord:
    """One training sample: canonical part clouds, gt poses, contacts.

    ``source_points`` holds the pre-canonicalization per-part samples for
    generation-time validation only; it is not serialized.
    """

    shape_id: str
    category: str
    parts: list[np.ndarray]
    gt_poses: list[Pose]
    contacts: list[Contact]
    source_points: list[np.ndarray] | None = None

    @property
    def n_parts(self) -> int:
        return len(self.parts)


@dataclass
class GenConfig:
    primitive: str = "box"
    cuts: int | tuple[int, int] = (1, 6)  # planes per shape; int or inclusive range
    n_pc: int = 1000
    seed: int = 0
    jitter: float = 0.0
    count: int = 64
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    min_share: float = 0.02
    max_parts: int = 20
    contact_radius: float = 0.02
    max_contacts_per_pair: int = 32

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"primitive must be one of {PRIMITIVES}, got {self.primitive!r}")
        lo, hi = self.cut_range()
        if lo < 1 or hi < lo:
            raise ValueError(f"cuts must be >= 1, got {self.cuts!r}")
        if self.n_pc < 1 or self.count < 0:
            raise ValueError("n_pc must be >= 1 and count >= 0")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split_fractions}")
        if not (2 <= self.max_parts):
            raise ValueError("max_parts must be >= 2")

    def cut_range(self) -> tuple[int, int]:
        if isinstance(self.cuts, int):
            return (self.cuts, self.cuts)
        lo, hi = self.cuts
        return (int(lo), int(hi))

    def to_dict(self) -> dict:
        return {
            "primitive": self.primitive,
            "cuts": list(self.cut_range()),
            "n_pc": self.n_pc,
            "seed": self.seed,
            "jitter": self.jitter,
            "count": self.count,
            "split_fractions": list(self.split_fractions),
            "min_share": self.min_share,
            "max_parts": self.max_parts,
            "contact_radius": self.contact_radius,
            "max_contacts_per_pair": self.max_contacts_per_pair,
        }

    @staticmethod
    def from_dict(d: dict) -> "GenConfig":
        d = dict(d)
        if "cuts" in d and isinstance(d["cuts"], list):
            d["cuts"] = tuple(d["cuts"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return GenConfig(**d)


def _sample_primitive(primitive: str, m: int, rng: Rng) -> np.ndarray:
    if primitive == "box":
        pts = rng.uniform((m, 3)) - 0.5
    elif primitive == "cylinder":
        u = rng.uniform((m, 3))
        r = 0.5 * np.sqrt(u[:, 0])
        theta = 2.0 * np.pi * u[:, 1]
        pts = np.stack([r * np.cos(theta), r * np.sin(theta), u[:, 2] - 0.5], axis=1)
    else:  # sphere-shell
        u = rng.uniform((m,))
        r = (0.35**3 + (0.5**3 - 0.35**3) * u) ** (1.0 / 3.0)
        direction = rng.normal((m, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        pts = direction * r[:, None]
    # normalize to a unit bounding box centered at the origin
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return (pts - (lo + hi) / 2.0) / (hi - lo).max()


def _partition(points: np.ndarray, n_planes: int, rng: Rng) -> np.ndarray:
    """Cell id per point from the sign pattern over random cutting planes."""
    labels = np.zeros(len(points), dtype=np.int64)
    for p in range(n_planes):
        normal = rng.derive("normal", p).normal((3,))
        normal /= np.linalg.norm(normal)
        anchor = points[int(rng.derive("anchor", p).integers(0, len(points)))]
        side = ((points - anchor) @ normal) > 0.0
        labels = labels * 2 + side
    return labels


def _merge_cells(labels: np.ndarray, points: np.ndarray, min_points: int, max_parts: int) -> list[np.ndarray]:
    """Indices per cell after merging undersized cells into their nearest neighbor."""
    cells = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}

    def centroid_of(idx):
        return points[idx].mean(axis=0)

    while len(cells) > 1:
        sizes = {c: len(idx) for c, idx in cells.items()}
        too_small = [c for c, s in sizes.items() if s < min_points]
        if not too_small and len(cells) <= max_parts:
            break
        victim = min(too_small, key=lambda c: (sizes[c], c)) if too_small else min(
            sizes, key=lambda c: (sizes[c], c)
        )
        v_centroid = centroid_of(cells[victim])
        others = [c for c in cells if c != victim]
        target = min(others, key=lambda c: (float(np.sum((centroid_of(cells[c]) - v_centroid) ** 2)), c))
        cells[target] = np.concatenate([cells[target], cells[victim]])
        del cells[victim]
    return [cells[c] for c in sorted(cells)]


def _f32_center(points: np.ndarray) -> np.ndarray:
    """Quantization-aware centering: float32-exact values, centroid ~1e-11.

    Rounding a zero-mean cloud to float32 shifts its centroid by up to a few
    1e-9; single-ulp nudges of greedily chosen points cancel the residual so
    the stored cloud satisfies the zero-centroid contract exactly as loaded.
    """
    out = np.empty_like(points)
    for axis in range(points.shape[1]):
        col = points[:, axis]
        q = (col - col.mean()).astype(np.float32)
        for _ in range(256):
            residual = float(q.astype(np.float64).sum())
            if abs(residual) <= len(q) * 1e-11:
                break
            toward = np.float32(-np.inf) if residual > 0 else np.float32(np.inf)
            neighbors = np.nextafter(q, toward)
            steps = neighbors.astype(np.float64) - q.astype(np.float64)
            scores = np.abs(residual + steps)
            i = int(np.argmin(scores))
            if scores[i] >= abs(residual):
                break
            q[i] = neighbors[i]
        out[:, axis] = q.astype(np.float64)
    return out


def _mutual_contacts(
    assembled: list[np.ndarray],
    canonical: list[np.ndarray],
    radius: float,
    cap: int,
) -> list[Contact]:
    trees = [cKDTree(a) for a in assembled]
    contacts: list[Contact] = []
    n = len(assembled)
    for i in range(n):
        for j in range(i + 1, n):
            d_ij, nn_ij = trees[j].query(assembled[i])
            d_ji, nn_ji = trees[i].query(assembled[j])
            pairs = [
                (float(d_ij[a]), a, int(nn_ij[a]))
                for a in range(len(assembled[i]))
                if d_ij[a] < radius and nn_ji[nn_ij[a]] == a
            ]
            pairs.sort()
            for dist, a, b in pairs[:cap]:
                contacts.append(Contact(i, j, canonical[i][a].copy(), canonical[j][b].copy()))
    return contacts


def generate_shape(config: GenConfig, seed: int, shape_id: str = "shape") -> ShapeRecord:
    """Deterministic single-shape generation; retries degenerate cuts."""
    lo, hi = config.cut_range()
    last_err = "no attempt"
    for attempt in range(20):
        rng = Rng(seed, ("gen", attempt))
        n_planes = int(rng.derive("cuts").integers(lo, hi + 1))
        m = max(4000, 4 * config.n_pc * min(2**n_planes, config.max_parts))
        dense = _sample_primitive(config.primitive, m, rng.derive("points"))
        labels = _partition(dense, n_planes, rng.derive("planes"))
        min_points = max(32, int(config.min_share * m))
        cells = _merge_cells(labels, dense, min_points, config.max_parts)
        if len(cells) < 2:
            last_err = f"degenerate cut left {len(cells)} cell(s)"
            continue

        assembled_parts = []
        for p, idx in enumerate(cells):
            part_rng = rng.derive("resample", p)
            take = part_rng.choice(len(idx), config.n_pc, replace=len(idx) < config.n_pc)
            pts = dense[idx[np.sort(take)]]
            if config.jitter > 0:
                pts = pts + config.jitter * part_rng.derive("jitter").normal(pts.shape)
            assembled_parts.append(pts.astype(np.float32).astype(np.float64))

        parts: list[np.ndarray] = []
        gt_poses: list[Pose] = []
        for p, pts in enumerate(assembled_parts):
            rot = random_quaternion(rng.derive("rot", p))
            shift = pts.mean(axis=0)
            canonical = _f32_center(rot.rotate(pts - shift))
            parts.append(canonical)
            gt_poses.append(Pose(rot.conjugate(), shift))

        placed = [pose.apply(part) for pose, part in zip(gt_poses, parts)]
        contacts = _mutual_contacts(placed, parts, config.contact_radius, config.max_contacts_per_pair)
        return ShapeRecord(
            shape_id=shape_id,
            category=config.primitive,
            parts=parts,
            gt_poses=gt_poses,
            contacts=contacts,
            source_points=assembled_parts,
        )
    raise ContractError(f"generate_shape: gave up after 20 attempts ({last_err})")


def generate_dataset(config: GenConfig) -> list[ShapeRecord]:
    return [
        generate_shape(config, derive_seed(config.seed, "shape", i), shape_id=f"shape_{i:04d}")
        for i in range(config.count)
    ]


def save_dataset(records: Sequence[ShapeRecord], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = []
    for rec in records:
        part_entries = []
        for p, (part, pose) in enumerate(zip(rec.parts, rec.gt_poses)):
            fname = f"{rec.shape_id}_part{p:02d}.f32"
            part.astype("<f4").tofile(directory / fname)
            part_entries.append({"file": fname, "pose": [float(v) for v in pose.as_array()]})
        shapes.append(
            {
                "id": rec.shape_id,
                "category": rec.category,
                "n_parts": rec.n_parts,
                "n_pc": len(rec.parts[0]),
                "parts": part_entries,
                "contacts": [
                    [c.i, c.j, [float(v) for v in c.point_i], [float(v) for v in c.point_j]]
                    for c in rec.contacts
                ],
            }
        )
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "shapes": shapes}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")


def load_dataset(directory) -> list[ShapeRecord]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetFormatError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"{manifest_path}: invalid JSON: {err}") from err
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{manifest_path}: field 'format' is {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{manifest_path}: field 'version' is {manifest.get('version')!r}, expected {FORMAT_VERSION}"
        )
    records = []
    for shape in manifest.get("shapes", []):
        parts = []
        poses = []
        for entry in shape["parts"]:
            fpath = directory / entry["file"]
            if not fpath.exists():
                raise DatasetFormatError(f"{manifest_path}: missing part file {entry['file']!r}")
            raw = np.fromfile(fpath, dtype="<f4")
            n_pc = int(shape["n_pc"])
            if raw.size != n_pc * 3:
                raise DatasetFormatError(
                    f"{fpath}: field 'n_pc' promises {n_pc * 3} floats, file has {raw.size}"
                )
            parts.append(raw.reshape(n_pc, 3).astype(np.float64))
            pose_vals = entry["pose"]
            poses.append(Pose(Quaternion(*pose_vals[:4]), np.array(pose_vals[4:])))
        contacts = [
            Contact(int(c[0]), int(c[1]), np.array(c[2], dtype=np.float64), np.array(c[3], dtype=np.float64))
            for c in shape.get("contacts", [])
        ]
        records.append(
            ShapeRecord(
                shape_id=shape["id"],
                category=shape["category"],
                parts=parts,
                gt_poses=poses,
                contacts=contacts,
            )
        )
    return records


def split(
    records: Sequence[ShapeRecord],
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[list[ShapeRecord], list[ShapeRecord], list[ShapeRecord]]:
    """Disjoint seed-deterministic train/val/test split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    order = Rng(seed, ("split",)).permutation(len(records))
    n_train = int(round(fractions[0] * len(records)))
    n_val = int(round(fractions[1] * len(records)))
    n_val = min(n_val, len(records) - n_train)
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train : n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val :]]
    return train, val, test
