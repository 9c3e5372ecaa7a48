import numpy as np
import pytest

import oracles
from handvox.heatmap import JointSet, make_heatmaps
from handvox.metrics import (
    LossReport,
    bce_voxel,
    displacement_loss,
    euclidean_vertex_loss,
    heatmap_loss,
    joint_error,
    shape_error,
    total_loss,
    vertex_error,
)
from handvox.registration import DisplacementField
from handvox.voxgrid import CubeFrame, GridKind, Mesh, VoxelGrid


def occupancy(data, n=8):
    return VoxelGrid(np.asarray(data, dtype=np.uint8), (0, 0, 0), 1.0, GridKind.OCCUPANCY)


def probability(data):
    return VoxelGrid(np.asarray(data, dtype=np.float32), (0, 0, 0), 1.0, GridKind.PROBABILITY)


def tri_mesh(verts):
    return Mesh(verts, [[0, 1, 2]])


class TestBceVoxel:
    def test_perfect_binary_prediction_is_clamped_epsilon(self):
        rng = np.random.default_rng(1)
        g = (rng.random((8, 8, 8)) > 0.5).astype(np.uint8)
        loss = bce_voxel(occupancy(g), occupancy(g))
        assert loss.value == pytest.approx(-np.log(1 - 1e-7), rel=1e-6)

    def test_uniform_half_prediction_is_log_two(self):
        g = (np.arange(512).reshape(8, 8, 8) % 2).astype(np.uint8)
        p = probability(np.full((8, 8, 8), 0.5))
        assert bce_voxel(p, occupancy(g)).value == pytest.approx(np.log(2.0))

    def test_random_pair_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        pred = probability(rng.random((8, 8, 8)))
        gt = occupancy((rng.random((8, 8, 8)) > 0.4).astype(np.uint8))
        expected = oracles.bce_mean(pred.data.astype(np.float64), gt.data)
        assert bce_voxel(pred, gt).value == pytest.approx(expected, rel=1e-10)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bce_voxel(probability(np.zeros((4, 4, 4))), occupancy(np.zeros((5, 5, 5))))

    def test_non_binary_gt_rejected(self):
        with pytest.raises(ValueError):
            bce_voxel(probability(np.zeros((4, 4, 4))), probability(np.full((4, 4, 4), 0.5)))

    def test_always_finite(self):
        ones = probability(np.ones((4, 4, 4)))
        zeros = occupancy(np.zeros((4, 4, 4)))
        assert np.isfinite(bce_voxel(ones, zeros).value)


class TestEuclideanVertexLoss:
    def test_identical_is_zero(self):
        m = tri_mesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        assert euclidean_vertex_loss(m, m).value == 0.0

    def test_unit_offset_gives_half(self):
        a = tri_mesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        b = tri_mesh([[1.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        assert euclidean_vertex_loss(b, a).value == pytest.approx(0.5)

    def test_random_k1193_matches_scalar_loop(self):
        rng = np.random.default_rng(3)
        faces = np.array([[0, 1, 2]])
        a = Mesh(rng.normal(size=(1193, 3)), faces)
        b = Mesh(rng.normal(size=(1193, 3)), faces)
        expected = oracles.half_sum_sq(a.vertices, b.vertices)
        assert euclidean_vertex_loss(a, b).value == pytest.approx(expected, rel=1e-10)

    def test_count_mismatch_rejected(self):
        a = tri_mesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        b = Mesh(np.zeros((4, 3)), [[0, 1, 2]])
        with pytest.raises(ValueError):
            euclidean_vertex_loss(a, b)

    def test_topology_mismatch_rejected(self):
        a = Mesh(np.eye(3), [[0, 1, 2]])
        b = Mesh(np.eye(3), [[0, 2, 1]])
        with pytest.raises(ValueError):
            euclidean_vertex_loss(a, b)


class TestDisplacementLoss:
    def test_identical_is_zero(self):
        f = DisplacementField(np.ones((4, 4, 4, 3)), (0, 0, 0), 1.0)
        assert displacement_loss(f, f).value == 0.0

    def test_single_unit_vector_on_64_grid(self):
        v = np.zeros((64, 64, 64, 3))
        v[10, 20, 30, 0] = 1.0
        pred = DisplacementField(v, (0, 0, 0), 1.0)
        gt = DisplacementField.zeros(64, (0, 0, 0), 1.0)
        assert displacement_loss(pred, gt).value == pytest.approx(1 / 64**3, rel=1e-12)

    def test_random_pair_matches_scalar_loop(self):
        rng = np.random.default_rng(4)
        a = DisplacementField(rng.normal(size=(8, 8, 8, 3)), (0, 0, 0), 1.0)
        b = DisplacementField(rng.normal(size=(8, 8, 8, 3)), (0, 0, 0), 1.0)
        expected = oracles.mean_sq_vec(a.vectors, b.vectors)
        assert displacement_loss(a, b).value == pytest.approx(expected, rel=1e-10)

    def test_geometry_mismatch_rejected(self):
        a = DisplacementField.zeros(4, (0, 0, 0), 1.0)
        b = DisplacementField.zeros(4, (1, 0, 0), 1.0)
        with pytest.raises(ValueError):
            displacement_loss(a, b)


class TestPointErrors:
    def test_identical_joints_zero(self):
        j = JointSet(np.arange(63).reshape(21, 3).astype(float))
        assert joint_error(j, j) == 0.0

    def test_uniform_offset(self):
        j = JointSet(np.zeros((21, 3)))
        k = JointSet(np.zeros((21, 3)) + [3.0, 0.0, 0.0])
        assert joint_error(k, j) == pytest.approx(3.0)
        m = Mesh(np.zeros((5, 3)), np.zeros((0, 3), dtype=np.int64))
        n = Mesh(np.zeros((5, 3)) + [0.0, 3.0, 0.0], np.zeros((0, 3), dtype=np.int64))
        assert vertex_error(n, m) == pytest.approx(3.0)

    def test_random_matches_scalar_loop(self):
        rng = np.random.default_rng(5)
        a = JointSet(rng.normal(size=(21, 3)))
        b = JointSet(rng.normal(size=(21, 3)))
        assert joint_error(a, b) == pytest.approx(oracles.mean_distance(a.joints, b.joints), rel=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = JointSet(rng.normal(size=(10, 3)))
        b = JointSet(rng.normal(size=(10, 3)))
        assert joint_error(a, b) == joint_error(b, a)

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(10, 3))
        t = np.array([12.0, -7.0, 31.0])
        assert joint_error(JointSet(a + t), JointSet(b + t)) == pytest.approx(
            joint_error(JointSet(a), JointSet(b)), abs=1e-9
        )

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            joint_error(JointSet(np.zeros((3, 3))), JointSet(np.zeros((4, 3))))


class TestShapeError:
    def test_equals_bce(self):
        rng = np.random.default_rng(8)
        pred = probability(rng.random((8, 8, 8)))
        gt = occupancy((rng.random((8, 8, 8)) > 0.5).astype(np.uint8))
        assert shape_error(pred, gt) == bce_voxel(pred, gt).value


class TestHeatmapLoss:
    def test_identical_stacks_zero(self):
        frame = CubeFrame((0, 0, 0), 300)
        s = make_heatmaps(JointSet([[0.0, 0, 0], [20.0, 10, -5]]), frame)
        assert heatmap_loss(s, s).value == 0.0

    def test_matches_mse_oracle(self):
        frame = CubeFrame((0, 0, 0), 300)
        a = make_heatmaps(JointSet([[0.0, 0, 0]]), frame, dim=16)
        b = make_heatmaps(JointSet([[10.0, 5, 0]]), frame, dim=16)
        pa = a.maps[0].data.astype(np.float64)
        pb = b.maps[0].data.astype(np.float64)
        expected = float(((pa - pb) ** 2).sum() / pa.size)
        assert heatmap_loss(a, b).value == pytest.approx(expected, rel=1e-10)

    def test_count_mismatch_rejected(self):
        frame = CubeFrame((0, 0, 0), 300)
        a = make_heatmaps(JointSet([[0.0, 0, 0]]), frame, dim=8)
        b = make_heatmaps(JointSet([[0.0, 0, 0], [1.0, 0, 0]]), frame, dim=8)
        with pytest.raises(ValueError):
            heatmap_loss(a, b)


class TestTotalLoss:
    def test_synthetic_sums_all_terms(self):
        assert total_loss(1, 1, 1, 1, 1, is_synthetic=True).value == 5.0

    def test_real_gates_shape_terms(self):
        assert total_loss(1, 1, 1, 1, 1, is_synthetic=False).value == 3.0

    def test_random_matches_hand_sum(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            parts = rng.random(5)
            flag = bool(rng.integers(0, 2))
            expected = parts[0] + parts[3] + parts[4] + (parts[1] + parts[2] if flag else 0.0)
            got = total_loss(*parts, is_synthetic=flag).value
            assert got == pytest.approx(expected, rel=1e-12)

    def test_real_output_invariant_to_gated_terms(self):
        base = total_loss(0.5, 0.1, 0.2, 0.3, 0.4, is_synthetic=False).value
        changed = total_loss(0.5, 99.0, 77.0, 0.3, 0.4, is_synthetic=False).value
        assert base == changed

    def test_negative_part_rejected(self):
        with pytest.raises(ValueError):
            total_loss(1, -0.1, 1, 1, 1, is_synthetic=True)

    def test_non_finite_part_rejected(self):
        with pytest.raises(ValueError):
            total_loss(np.inf, 0, 0, 0, 0, is_synthetic=True)


class TestLossReport:
    def test_rejects_negative_value(self):
        with pytest.raises(ValueError):
            LossReport(-1.0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            LossReport(float("nan"))
