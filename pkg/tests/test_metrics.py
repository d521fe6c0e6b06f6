import math

import numpy as np
import pytest

from fracas.errors import ContractError
from fracas.geometry import Pose, Quaternion, quat_normalize
from fracas.metrics import (
    MetricThresholds,
    MetricsReport,
    connectivity_accuracy,
    evaluate_prediction,
    min_matching_select,
    part_accuracy,
    rmse_rotation,
    rmse_rotation_geodesic,
    rmse_translation,
    shape_cd,
)
from fracas.nn import Rng


def random_scene(seed=0, n_parts=3, n_pc=8):
    rng = Rng(seed)
    clouds = [rng.derive("c", i).normal((n_pc, 3)) * 0.2 for i in range(n_parts)]
    poses = [
        Pose(quat_normalize(rng.derive("q", i).normal((4,))), rng.derive("t", i).normal((3,)) * 0.5)
        for i in range(n_parts)
    ]
    return clouds, poses


class TestMinMatching:
    def test_single(self):
        assert min_matching_select([3.0]) == 0

    def test_picks_minimum(self):
        assert min_matching_select([3.0, 1.0, 2.0]) == 1

    def test_ties_lowest_index(self):
        assert min_matching_select([2.0, 1.0, 1.0]) == 1

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            min_matching_select([])


class TestShapeCd:
    def test_perfect_zero(self):
        clouds, poses = random_scene()
        assert shape_cd(poses, poses, clouds) == 0.0

    def test_density_invariance_mean_form(self):
        # doubled point density of an identical mismatch keeps the value
        cloud = np.array([[0.0, 0.0, 0.0]])
        gt = [Pose.identity(), Pose(Quaternion.identity(), [1.0, 0, 0])]
        pred = [Pose(Quaternion.identity(), [0.2, 0, 0]), Pose(Quaternion.identity(), [1.2, 0, 0])]
        v1 = shape_cd(pred, gt, [cloud, cloud])
        dense = np.repeat(cloud, 2, axis=0)
        v2 = shape_cd(pred, gt, [dense, dense])
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_hand_case(self):
        # one part, single points 0.1 apart: chamfer = 2 * 0.01, mean over 2 pts
        cloud = np.array([[0.0, 0.0, 0.0]])
        gt = [Pose.identity(), Pose(Quaternion.identity(), [5.0, 0, 0])]
        pred = [Pose(Quaternion.identity(), [0.1, 0.0, 0.0]), gt[1]]
        got = shape_cd(pred, gt, [cloud, cloud])
        assert got == pytest.approx((0.01 + 0.01) / 4.0, abs=1e-15)


class TestPartAccuracy:
    def test_perfect(self):
        clouds, poses = random_scene(seed=1)
        assert part_accuracy(poses, poses, clouds) == 1.0

    def test_one_of_two_displaced(self):
        clouds, poses = random_scene(seed=2, n_parts=2)
        pred = [poses[0], Pose(poses[1].rotation, poses[1].translation + 10.0)]
        assert part_accuracy(pred, poses, clouds) == 0.5

    def test_threshold_sensitivity(self):
        # a part at mean chamfer exactly 2*tau is wrong; at tau/2 it is right
        tau = 0.01
        cloud = np.array([[0.0, 0.0, 0.0]])
        gt = [Pose.identity(), Pose.identity()]
        # mean chamfer for equal-size single-point clouds offset by t: t^2
        t_wrong = math.sqrt(2 * tau)
        t_right = math.sqrt(tau / 2)
        pred = [
            Pose(Quaternion.identity(), [t_wrong, 0, 0]),
            Pose(Quaternion.identity(), [t_right, 0, 0]),
        ]
        assert part_accuracy(pred, gt, [cloud, cloud], tau) == 0.5

    def test_monotone_in_tau(self):
        clouds, gt = random_scene(seed=3, n_parts=4)
        rng = Rng(4)
        pred = [Pose(p.rotation, p.translation + rng.derive(i).normal((3,)) * 0.05) for i, p in enumerate(gt)]
        accs = [part_accuracy(pred, gt, clouds, tau) for tau in (1e-5, 1e-3, 1e-1, 10.0)]
        assert all(a <= b for a, b in zip(accs, accs[1:]))


class TestConnectivityAccuracy:
    def test_perfect_poses(self):
        clouds, poses = random_scene(seed=5)
        # contact pair consistent under gt: same world point pulled back per part
        world = np.array([0.05, 0.02, -0.01])
        c01 = poses[0].inverse().apply(world.reshape(1, 3))[0]
        c10 = poses[1].inverse().apply(world.reshape(1, 3))[0]
        contacts = [(0, 1, c01, c10)]
        assert connectivity_accuracy(poses, contacts) == 1.0

    def test_no_contacts_vacuous_with_warning(self):
        clouds, poses = random_scene(seed=6)
        with pytest.warns(UserWarning):
            assert connectivity_accuracy(poses, []) == 1.0

    def test_constructed_two_part_case(self):
        # squared gap 0.0225 > tau_c 0.01 -> wrong; 0.0001 < 0.01 -> right
        p0 = Pose.identity()
        p_bad = Pose(Quaternion.identity(), [0.15, 0.0, 0.0])
        p_good = Pose(Quaternion.identity(), [0.01, 0.0, 0.0])
        zero = np.zeros(3)
        contacts = [(0, 1, zero, zero)]
        assert connectivity_accuracy([p0, p_bad], contacts) == 0.0
        assert connectivity_accuracy([p0, p_good], contacts) == 1.0


class TestRmse:
    def test_identical_zero(self):
        _, poses = random_scene(seed=7)
        assert rmse_rotation(poses, poses) == 0.0
        assert rmse_translation(poses, poses) == 0.0
        # acos rounding makes the auxiliary geodesic column only near-zero
        assert rmse_rotation_geodesic(poses, poses) == pytest.approx(0.0, abs=1e-5)

    def test_single_part_90_about_z(self):
        q90 = quat_normalize((math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)))
        pred = [Pose(q90, np.zeros(3))]
        gt = [Pose.identity(), ]
        assert rmse_rotation(pred, gt) == pytest.approx(90.0 / math.sqrt(3.0), abs=1e-9)

    def test_wrap_case(self):
        q_a = quat_normalize((math.cos(math.radians(179 / 2)), 0, 0, math.sin(math.radians(179 / 2))))
        q_b = quat_normalize((math.cos(math.radians(-179 / 2)), 0, 0, math.sin(math.radians(-179 / 2))))
        val = rmse_rotation([Pose(q_a, np.zeros(3))], [Pose(q_b, np.zeros(3))])
        assert val == pytest.approx(2.0 / math.sqrt(3.0), abs=1e-6)

    def test_translation_rmse(self):
        pred = [Pose(Quaternion.identity(), [1.0, 0.0, 0.0])]
        gt = [Pose.identity()]
        assert rmse_translation(pred, gt) == pytest.approx(1.0 / math.sqrt(3.0))


class TestReport:
    def test_perfect_prediction_fixed_point(self):
        clouds, poses = random_scene(seed=8)
        world = poses[0].apply(clouds[0][:1])[0]
        contacts = [(0, 1, poses[0].inverse().apply(world.reshape(1, 3))[0],
                     poses[1].inverse().apply(world.reshape(1, 3))[0])]
        m = evaluate_prediction("s0", poses, poses, clouds, contacts)
        assert m.scd == 0.0
        assert m.pa == 1.0
        assert m.ca == 1.0
        assert m.rmse_r == 0.0
        assert m.rmse_t == 0.0

    def test_reindexing_invariance(self):
        clouds, poses = random_scene(seed=9, n_parts=4)
        rng = Rng(10)
        pred = [Pose(p.rotation, p.translation + rng.derive(i).normal((3,)) * 0.02) for i, p in enumerate(poses)]
        base = evaluate_prediction("a", pred, poses, clouds, [])
        perm = [2, 0, 3, 1]
        permuted = evaluate_prediction(
            "a",
            [pred[i] for i in perm],
            [poses[i] for i in perm],
            [clouds[i] for i in perm],
            [],
        )
        assert permuted.scd == pytest.approx(base.scd, abs=1e-12)
        assert permuted.pa == base.pa
        assert permuted.rmse_r == pytest.approx(base.rmse_r, abs=1e-9)
        assert permuted.rmse_t == pytest.approx(base.rmse_t, abs=1e-12)

    def test_csv_and_table(self):
        clouds, poses = random_scene(seed=11)
        m = evaluate_prediction("s0", poses, poses, clouds, [])
        report = MetricsReport(shapes=[m])
        csv = report.to_csv()
        assert csv.startswith("shape_id,")
        assert "AGGREGATE" in csv
        table = report.format_table()
        assert "SCD(x1e3)" in table
        assert "tau=0.01" in table
        assert report.pa == 1.0

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            MetricThresholds(tau=0.0)
