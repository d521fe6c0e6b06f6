import json

import numpy as np
import pytest

from fracas.dataset import (
    Contact,
    GenConfig,
    ShapeRecord,
    generate_dataset,
    generate_shape,
    load_dataset,
    save_dataset,
    split,
)
from fracas.errors import DatasetFormatError
from fracas.geometry import assemble_shape, mean_chamfer
from fracas.nn import derive_seed


def small_config(**kw):
    base = dict(n_pc=64, count=6, cuts=(1, 3), seed=11)
    base.update(kw)
    return GenConfig(**base)


@pytest.fixture(scope="module")
def records():
    return generate_dataset(small_config())


class TestGeneration:
    def test_every_part_has_n_pc_points(self, records):
        for rec in records:
            for part in rec.parts:
                assert part.shape == (64, 3)

    def test_part_count_in_range(self, records):
        for rec in records:
            assert 2 <= rec.n_parts <= 20

    def test_canonical_parts_zero_centroid(self, records):
        for rec in records:
            for part in rec.parts:
                assert np.linalg.norm(part.mean(axis=0)) < 1e-9

    def test_gt_rotations_unit_norm(self, records):
        for rec in records:
            for pose in rec.gt_poses:
                assert pose.rotation.norm() == pytest.approx(1.0, abs=1e-9)

    def test_assembly_reproduces_source_shape(self):
        cfg = small_config(n_pc=128)
        rec = generate_shape(cfg, seed=5)
        union = assemble_shape(rec.gt_poses, rec.parts)
        source = np.concatenate(rec.source_points, axis=0)
        assert mean_chamfer(union, source) < 1e-3
        # unit bounding box, centered
        extent = union.max(axis=0) - union.min(axis=0)
        assert extent.max() == pytest.approx(1.0, abs=0.05)
        # per-part inverse: gt pose undoes canonicalization up to quantization
        for pose, part, src in zip(rec.gt_poses, rec.parts, rec.source_points):
            assert np.allclose(pose.apply(part), src, atol=1e-5)

    def test_contacts_touch_under_gt(self, records):
        for rec in records:
            for c in rec.contacts:
                a = rec.gt_poses[c.i].apply(c.point_i.reshape(1, 3))[0]
                b = rec.gt_poses[c.j].apply(c.point_j.reshape(1, 3))[0]
                assert np.linalg.norm(a - b) < 0.02

    def test_seed_determinism(self):
        cfg = small_config()
        a = generate_shape(cfg, seed=3)
        b = generate_shape(cfg, seed=3)
        assert a.n_parts == b.n_parts
        for pa, pb in zip(a.parts, b.parts):
            assert np.array_equal(pa, pb)
        for qa, qb in zip(a.gt_poses, b.gt_poses):
            assert qa.rotation == qb.rotation
            assert np.array_equal(qa.translation, qb.translation)

    def test_different_seeds_differ(self):
        cfg = small_config()
        a = generate_shape(cfg, seed=3)
        b = generate_shape(cfg, seed=4)
        assert a.n_parts != b.n_parts or not np.array_equal(a.parts[0], b.parts[0])

    def test_primitives_all_work(self):
        for primitive in ("box", "cylinder", "sphere-shell"):
            rec = generate_shape(small_config(primitive=primitive), seed=2)
            assert rec.category == primitive
            assert rec.n_parts >= 2

    def test_n_distribution_spreads(self):
        cfg = small_config(count=24, cuts=(1, 6), n_pc=32, min_share=0.01)
        recs = generate_dataset(cfg)
        ns = sorted({r.n_parts for r in recs})
        assert ns[0] == 2
        assert ns[-1] >= 6
        assert all(2 <= n <= 20 for n in ns)

    def test_parts_are_float32_exact(self, records):
        for rec in records:
            for part in rec.parts:
                assert np.array_equal(part, part.astype(np.float32).astype(np.float64))


class TestStorage:
    def test_roundtrip_bit_exact(self, tmp_path, records):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        save_dataset(records, d1)
        loaded = load_dataset(d1)
        assert len(loaded) == len(records)
        for rec, back in zip(records, loaded):
            assert back.shape_id == rec.shape_id
            assert back.category == rec.category
            for pa, pb in zip(rec.parts, back.parts):
                assert np.array_equal(pa, pb)
            for qa, qb in zip(rec.gt_poses, back.gt_poses):
                assert qa.rotation == qb.rotation
                assert np.array_equal(qa.translation, qb.translation)
            assert len(back.contacts) == len(rec.contacts)
            for ca, cb in zip(rec.contacts, back.contacts):
                assert (ca.i, ca.j) == (cb.i, cb.j)
                assert np.array_equal(ca.point_i, cb.point_i)
                assert np.array_equal(ca.point_j, cb.point_j)
        save_dataset(loaded, d2)
        assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
        for f in sorted(d1.glob("*.f32")):
            assert f.read_bytes() == (d2 / f.name).read_bytes()

    def test_missing_part_file_named(self, tmp_path, records):
        save_dataset(records[:1], tmp_path)
        victim = next(tmp_path.glob("*.f32"))
        victim.unlink()
        with pytest.raises(DatasetFormatError, match=victim.name):
            load_dataset(tmp_path)

    def test_version_mismatch_rejected(self, tmp_path, records):
        save_dataset(records[:1], tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["version"] = 999
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DatasetFormatError, match="version"):
            load_dataset(tmp_path)

    def test_malformed_manifest_named(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(DatasetFormatError, match="manifest.json"):
            load_dataset(tmp_path)

    def test_truncated_part_file_names_field(self, tmp_path, records):
        save_dataset(records[:1], tmp_path)
        victim = next(tmp_path.glob("*.f32"))
        victim.write_bytes(victim.read_bytes()[:-8])
        with pytest.raises(DatasetFormatError, match="n_pc"):
            load_dataset(tmp_path)


class TestSplit:
    def test_sizes(self):
        records = [ShapeRecord(f"s{i}", "box", [np.zeros((1, 3))], [], []) for i in range(100)]
        train, val, test = split(records, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (80, 10, 10)

    def test_disjoint_and_complete(self):
        records = [ShapeRecord(f"s{i}", "box", [np.zeros((1, 3))], [], []) for i in range(23)]
        train, val, test = split(records, (0.6, 0.2, 0.2), seed=1)
        ids = [r.shape_id for r in train + val + test]
        assert len(ids) == 23
        assert len(set(ids)) == 23

    def test_deterministic(self):
        records = [ShapeRecord(f"s{i}", "box", [np.zeros((1, 3))], [], []) for i in range(17)]
        a = split(records, (0.5, 0.25, 0.25), seed=9)
        b = split(records, (0.5, 0.25, 0.25), seed=9)
        assert [r.shape_id for r in a[0]] == [r.shape_id for r in b[0]]

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError):
            split([], (0.5, 0.2, 0.2), seed=0)


class TestGenConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GenConfig(primitive="torus")
        with pytest.raises(ValueError):
            GenConfig(cuts=0)
        with pytest.raises(ValueError):
            GenConfig(split_fractions=(0.5, 0.2, 0.2))

    def test_dict_roundtrip(self):
        cfg = small_config()
        assert GenConfig.from_dict(cfg.to_dict()) == cfg
