import math

import numpy as np
import pytest

from fracas.errors import ContractError
from fracas.geometry import Pose, Quaternion, chamfer_distance, quat_normalize
from fracas.losses import (
    LossBreakdown,
    LossWeights,
    collision_loss,
    graph_chamfer,
    mon_loss,
    rotate_cloud,
    rotation_chamfer_loss,
    shape_chamfer_loss,
    total_loss,
    transform_cloud,
    translation_loss,
)
from fracas.model import AssemblyModel, ModelConfig, PosePrediction
from fracas.nn import Rng, Tensor, backward

from conftest import analytic_grads, finite_diff, max_rel_err
from test_model import random_clouds, tiny_config


def point_cloud_tensor(*points):
    return Tensor(np.array(points, dtype=np.float64))


class TestCollisionLoss:
    def test_zero_at_d_equals_e_over_c(self):
        d = math.e / 30.0
        clouds = [point_cloud_tensor((0, 0, 0)), point_cloud_tensor((d, 0, 0))]
        value = collision_loss(clouds, collision_scale=30.0, epsilon_d=1e-6).item()
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_one_at_d_equals_inverse_c(self):
        d = 1.0 / 30.0
        clouds = [point_cloud_tensor((0, 0, 0)), point_cloud_tensor((d, 0, 0))]
        value = collision_loss(clouds, collision_scale=30.0, epsilon_d=1e-6).item()
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_three_part_hand_case(self):
        clouds = [
            point_cloud_tensor((0, 0, 0)),
            point_cloud_tensor((1 / 30, 0, 0)),
            point_cloud_tensor((2 / 30, 0, 0)),
        ]
        value = collision_loss(clouds, collision_scale=30.0, epsilon_d=1e-6).item()
        assert value == pytest.approx((3.0 - math.log(2.0)) / 3.0, abs=1e-9)

    def test_derivative_matches_inverse_distance(self):
        # N=2: dL/dd must equal -1/d; moving one centroid along the line
        # joining them changes d one-to-one
        for d in (0.01, 1 / 30, 0.1, 0.5):
            x = Tensor(np.array([[d, 0.0, 0.0]]), requires_grad=True)
            other = point_cloud_tensor((0, 0, 0))

            def loss():
                return collision_loss([x, other], collision_scale=30.0, epsilon_d=1e-6)

            (num,) = finite_diff(loss, [x], step=1e-7)
            assert num[0, 0] == pytest.approx(-1.0 / d, rel=1e-6)
            (ana,) = analytic_grads(loss, [x])
            assert ana[0, 0] == pytest.approx(-1.0 / d, rel=1e-6)

    def test_strictly_decreasing_in_distance(self):
        values = []
        for d in (0.01, 0.05, 0.2, 1.0, 3.0):
            clouds = [point_cloud_tensor((0, 0, 0)), point_cloud_tensor((d, 0, 0))]
            values.append(collision_loss(clouds, 30.0, 1e-6).item())
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_negative_for_far_parts_unless_clamped(self):
        d = 1.0  # C*d = 30 > e
        clouds = [point_cloud_tensor((0, 0, 0)), point_cloud_tensor((d, 0, 0))]
        assert collision_loss(clouds, 30.0, 1e-6).item() < 0
        assert collision_loss(clouds, 30.0, 1e-6, clamp_negative=True).item() == 0.0

    def test_coincident_centroids_finite_with_floor(self):
        clouds = [point_cloud_tensor((0, 0, 0)), point_cloud_tensor((0, 0, 0))]
        value = collision_loss(clouds, 30.0, 1e-6).item()
        assert np.isfinite(value)
        assert value == pytest.approx(1.0 - math.log(30.0 * 1e-6), abs=1e-9)

    def test_single_part_rejected(self):
        with pytest.raises(ContractError):
            collision_loss([point_cloud_tensor((0, 0, 0))], 30.0, 1e-6)

    def test_uses_centroid_of_cloud(self):
        # two-point clouds whose centroids sit 1/30 apart
        a = point_cloud_tensor((0, 0.5, 0), (0, -0.5, 0))
        b = point_cloud_tensor((1 / 30, 0.5, 0), (1 / 30, -0.5, 0))
        assert collision_loss([a, b], 30.0, 1e-6).item() == pytest.approx(1.0, abs=1e-9)


class TestTranslationLoss:
    def test_exact_match_zero(self):
        t = Tensor(np.array([[1.0, 2.0, 3.0]]))
        assert translation_loss(t, np.array([[1.0, 2.0, 3.0]])).item() == 0.0

    def test_single_offset(self):
        t = Tensor(np.array([[1.0, 0.0, 0.0]]))
        assert translation_loss(t, np.zeros((1, 3))).item() == pytest.approx(1.0)

    def test_two_offsets_sum(self):
        t = Tensor(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]))
        assert translation_loss(t, np.zeros((2, 3))).item() == pytest.approx(5.0)


class TestRotationLoss:
    def test_matching_rotations_zero(self):
        rng = Rng(0)
        q = quat_normalize(rng.normal((4,)))
        cloud = rng.derive("c").normal((8, 3))
        quats = Tensor(q.as_array().reshape(1, 4))
        poses = [Pose(q, np.zeros(3))]
        assert rotation_chamfer_loss(quats, poses, [cloud]).item() == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_part_tolerance(self):
        # points on the z-axis are invariant to any rotation about z
        cloud = np.array([[0.0, 0.0, 0.3], [0.0, 0.0, -0.7], [0.0, 0.0, 1.0]])
        pred = Tensor(Quaternion.identity().as_array().reshape(1, 4))
        gt_q = quat_normalize((math.cos(0.6), 0.0, 0.0, math.sin(0.6)))
        assert rotation_chamfer_loss(pred, [Pose(gt_q, np.zeros(3))], [cloud]).item() == pytest.approx(
            0.0, abs=1e-12
        )

    def test_single_point_180_flip(self):
        cloud = np.array([[1.0, 0.0, 0.0]])
        pred = Tensor(Quaternion.identity().as_array().reshape(1, 4))
        gt = [Pose(Quaternion(0.0, 0.0, 0.0, 1.0), np.zeros(3))]  # 180 about z
        assert rotation_chamfer_loss(pred, gt, [cloud]).item() == pytest.approx(8.0, abs=1e-12)


class TestShapeLoss:
    def _raw(self, poses):
        return Tensor(np.stack([p.as_array() for p in poses]))

    def test_perfect_poses_zero(self):
        rng = Rng(1)
        clouds = [rng.derive(i).normal((6, 3)) for i in range(3)]
        poses = [
            Pose(quat_normalize(rng.derive("q", i).normal((4,))), rng.derive("t", i).normal((3,)))
            for i in range(3)
        ]
        val = shape_chamfer_loss(self._raw(poses), poses, clouds).item()
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_swapping_identical_parts_zero(self):
        rng = Rng(2)
        cloud = rng.normal((5, 3))
        clouds = [cloud, cloud.copy()]
        pose_a = Pose(Quaternion.identity(), np.array([1.0, 0.0, 0.0]))
        pose_b = Pose(Quaternion.identity(), np.array([-1.0, 0.0, 0.0]))
        swapped = self._raw([pose_b, pose_a])
        val = shape_chamfer_loss(swapped, [pose_a, pose_b], clouds).item()
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_hand_built_two_part_case(self):
        # independent enumeration oracle via geometry.chamfer_distance
        clouds = [np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]),
                  np.array([[0.0, 0.2, 0.0], [0.0, 0.3, 0.0]])]
        gt = [Pose(Quaternion.identity(), np.zeros(3)),
              Pose(Quaternion.identity(), np.array([0.0, 0.0, 0.5]))]
        pred = [Pose(Quaternion.identity(), np.array([0.05, 0.0, 0.0])),
                Pose(Quaternion.identity(), np.array([0.0, 0.0, 0.45]))]
        from fracas.geometry import assemble_shape

        expected = chamfer_distance(assemble_shape(pred, clouds), assemble_shape(gt, clouds))
        got = shape_chamfer_loss(self._raw(pred), gt, clouds).item()
        assert got == pytest.approx(expected, abs=1e-12)


class TestGraphChamfer:
    def test_matches_geometry_chamfer(self, np_rng):
        for _ in range(10):
            a = np_rng.random((12, 3))
            b = np_rng.random((9, 3))
            graph_val = graph_chamfer(Tensor(a), Tensor(b)).item()
            assert graph_val == pytest.approx(chamfer_distance(a, b), abs=1e-9)

    def test_gradient(self, np_rng):
        a = Tensor(np_rng.random((5, 3)), requires_grad=True)
        b = Tensor(np_rng.random((4, 3)))
        ana = analytic_grads(lambda: graph_chamfer(a, b), [a])
        num = finite_diff(lambda: graph_chamfer(a, b), [a])
        assert max_rel_err(ana[0], num[0]) <= 1e-5


class TestRotateCloud:
    def test_matches_quaternion_rotate(self):
        rng = Rng(3)
        q = quat_normalize(rng.normal((4,)))
        cloud = rng.derive("c").normal((7, 3))
        out = rotate_cloud(Tensor(q.as_array()), cloud).data
        assert np.allclose(out, q.rotate(cloud), atol=1e-12)

    def test_gradient(self):
        rng = Rng(4)
        q = Tensor(quat_normalize(rng.normal((4,))).as_array(), requires_grad=True)
        cloud = rng.derive("c").normal((5, 3))
        from fracas.nn import tsum

        w = Tensor(rng.derive("w").normal((5, 3)))
        loss = lambda: tsum(rotate_cloud(q, cloud) * w)
        ana = analytic_grads(loss, [q])
        num = finite_diff(loss, [q])
        assert max_rel_err(ana[0], num[0]) <= 1e-6


class TestTotalLoss:
    def _setup(self, seed=5, n_parts=3):
        rng = Rng(seed)
        clouds = [rng.derive("c", i).normal((6, 3)) * 0.3 for i in range(n_parts)]
        clouds = [c - c.mean(axis=0) for c in clouds]
        gt = [
            Pose(quat_normalize(rng.derive("q", i).normal((4,))), rng.derive("t", i).normal((3,)) * 0.3)
            for i in range(n_parts)
        ]
        raw = Tensor(
            np.stack([
                np.concatenate([quat_normalize(rng.derive("pq", i).normal((4,))).as_array(),
                                rng.derive("pt", i).normal((3,)) * 0.3])
                for i in range(n_parts)
            ]),
            requires_grad=True,
        )
        pred = PosePrediction(poses=[], raw_head_output=raw)
        return pred, gt, clouds, raw

    def test_zero_weights_zero_total(self):
        pred, gt, clouds, _ = self._setup()
        weights = LossWeights(collision=0.0, translation=0.0, rotation=0.0, shape=0.0)
        assert total_loss(pred, gt, clouds, weights).total.item() == 0.0

    def test_collision_weight_zero_drops_term(self):
        pred, gt, clouds, _ = self._setup()
        with_c = total_loss(pred, gt, clouds, LossWeights(collision=0.10))
        without_c = total_loss(pred, gt, clouds, LossWeights(collision=0.0))
        diff = with_c.total.item() - without_c.total.item()
        assert diff == pytest.approx(0.10 * with_c.collision.item(), rel=1e-9)

    def test_total_is_weighted_recombination(self):
        pred, gt, clouds, _ = self._setup(seed=6)
        w = LossWeights(collision=0.3, translation=1.5, rotation=2.0, shape=0.7)
        b = total_loss(pred, gt, clouds, w)
        manual = (
            0.3 * b.collision.item()
            + 1.5 * b.translation.item()
            + 2.0 * b.rotation.item()
            + 0.7 * b.shape.item()
        )
        assert b.total.item() == pytest.approx(manual, abs=1e-12)

    def test_gradient_through_total(self):
        pred, gt, clouds, raw = self._setup(seed=7, n_parts=2)
        w = LossWeights()
        loss = lambda: total_loss(PosePrediction([], raw), gt, clouds, w).total
        ana = analytic_grads(loss, [raw])
        num = finite_diff(loss, [raw])
        assert max_rel_err(ana[0], num[0]) <= 1e-4

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(collision_scale=0.0)
        with pytest.raises(ValueError):
            LossWeights(epsilon_d=0.0)
        with pytest.raises(ValueError):
            LossWeights(rotation=-1.0)


class TestMonLoss:
    def _model_setup(self):
        model = AssemblyModel(tiny_config(), seed=8)
        clouds = random_clouds(3, seed=9)
        clouds = [c - c.mean(axis=0) for c in clouds]
        rng = Rng(10)
        gt = [
            Pose(quat_normalize(rng.derive("q", i).normal((4,))), rng.derive("t", i).normal((3,)) * 0.2)
            for i in range(3)
        ]
        return model, clouds, gt

    def test_n1_equals_total_loss(self):
        model, clouds, gt = self._model_setup()
        w = LossWeights()
        best, idx, totals = mon_loss(model.forward, clouds, gt, 1, [77], w)
        direct = total_loss(model.forward(clouds, 77), gt, clouds, w)
        assert idx == 0
        assert best.total.item() == direct.total.item()

    def test_min_not_above_any_sample(self):
        model, clouds, gt = self._model_setup()
        best, idx, totals = mon_loss(model.forward, clouds, gt, 5, list(range(5)), LossWeights())
        assert best.total.item() == min(totals)
        assert all(best.total.item() <= t for t in totals)

    def test_argmin_matches_brute_force(self):
        model, clouds, gt = self._model_setup()
        w = LossWeights()
        seeds = [11, 22, 33, 44, 55]
        best, idx, totals = mon_loss(model.forward, clouds, gt, 5, seeds, w)
        recomputed = [total_loss(model.forward(clouds, s), gt, clouds, w).total.item() for s in seeds]
        assert totals == recomputed
        assert idx == int(np.argmin(recomputed))

    def test_gradient_flows_through_argmin_branch_only(self):
        model, clouds, gt = self._model_setup()
        w = LossWeights()
        seeds = [1, 2, 3]
        best, idx, _ = mon_loss(model.forward, clouds, gt, 3, seeds, w)
        params = model.parameters()
        for _, t in params:
            t.grad = None
        backward(best.total)
        grads_mon = {n: t.grad.copy() for n, t in params if t.grad is not None}

        for _, t in params:
            t.grad = None
        backward(total_loss(model.forward(clouds, seeds[idx]), gt, clouds, w).total)
        grads_direct = {n: t.grad.copy() for n, t in params if t.grad is not None}
        assert grads_mon.keys() == grads_direct.keys()
        for n in grads_mon:
            assert np.allclose(grads_mon[n], grads_direct[n], atol=1e-12)

    def test_seed_count_mismatch_rejected(self):
        model, clouds, gt = self._model_setup()
        with pytest.raises(ContractError):
            mon_loss(model.forward, clouds, gt, 3, [1, 2], LossWeights())
