import csv
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from egoplex.ep_body import BodyModelDef
from egoplex.ep_metrics import (
    CSV_COLUMNS,
    MetricRow,
    SimilarityTransform,
    aligned_residuals,
    pa_mpjpe,
    pa_mpvpe,
    summarize,
    umeyama_align,
    write_metric_csv,
)
from egoplex.exceptions import DegenerateConfiguration, InvariantViolation, ShapeMismatch


def _cost(transform: SimilarityTransform, source: np.ndarray, target: np.ndarray) -> float:
    return float(np.sum((transform.apply(source) - target) ** 2))


def _unit(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    return axis / np.linalg.norm(axis)


def _random_similarity(rng: np.random.Generator) -> SimilarityTransform:
    return SimilarityTransform(
        scale=float(rng.uniform(0.2, 5.0)),
        rotation=Rotation.from_rotvec(rng.uniform(0.0, math.pi) * _unit(rng)).as_matrix(),
        translation=rng.normal(scale=2.0, size=3),
    )


@pytest.fixture
def skeleton(rng: np.random.Generator) -> np.ndarray:
    return rng.normal(scale=0.3, size=(16, 3)) + np.array([0.0, 0.0, 2.5])


class TestSimilarityTransform:
    def test_identity(self, skeleton: np.ndarray) -> None:
        np.testing.assert_array_equal(SimilarityTransform.identity().apply(skeleton), skeleton)

    def test_rejects_non_positive_scale(self) -> None:
        with pytest.raises(InvariantViolation):
            SimilarityTransform(scale=0.0, rotation=np.eye(3), translation=np.zeros(3))

    def test_rejects_reflection(self) -> None:
        with pytest.raises(InvariantViolation) as info:
            SimilarityTransform(scale=1.0, rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3))
        assert info.value.invariant == "rotation_proper"

    def test_rejects_non_orthonormal(self) -> None:
        with pytest.raises(InvariantViolation):
            SimilarityTransform(scale=1.0, rotation=2.0 * np.eye(3), translation=np.zeros(3))


class TestUmeyama:
    def test_identity_alignment(self, skeleton: np.ndarray) -> None:
        transform = umeyama_align(skeleton, skeleton)
        assert transform.scale == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(transform.translation, 0.0, atol=1e-12)
        assert pa_mpjpe(skeleton, skeleton) == pytest.approx(0.0, abs=1e-6)

    def test_recovers_known_transform(self, skeleton: np.ndarray) -> None:
        rz = Rotation.from_euler("z", 90, degrees=True).as_matrix()
        target = 2.0 * skeleton @ rz.T + np.array([1.0, 0.0, 0.0])
        transform = umeyama_align(skeleton, target)
        assert transform.scale == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(transform.rotation, rz, atol=1e-10)
        np.testing.assert_allclose(transform.translation, [1.0, 0.0, 0.0], atol=1e-10)
        assert pa_mpjpe(skeleton, target) == pytest.approx(0.0, abs=1e-6)

    def test_mirrored_target_keeps_proper_rotation(self, skeleton: np.ndarray) -> None:
        mirrored = skeleton * np.array([-1.0, 1.0, 1.0])
        transform = umeyama_align(skeleton, mirrored)
        assert np.linalg.det(transform.rotation) == pytest.approx(1.0, abs=1e-12)
        assert pa_mpjpe(skeleton, mirrored) > 0.0

    def test_matches_kabsch_oracle(self, skeleton: np.ndarray, rng: np.random.Generator) -> None:
        target = _random_similarity(rng).apply(skeleton) + rng.normal(scale=0.01, size=skeleton.shape)
        source_c = skeleton - skeleton.mean(axis=0)
        target_c = target - target.mean(axis=0)
        oracle_rotation, _ = Rotation.align_vectors(target_c, source_c)
        rotation = oracle_rotation.as_matrix()
        scale = float(np.sum(target_c * (source_c @ rotation.T)) / np.sum(source_c * source_c))

        transform = umeyama_align(skeleton, target)
        np.testing.assert_allclose(transform.rotation, rotation, atol=1e-9)
        assert transform.scale == pytest.approx(scale, rel=1e-9)

        rigid = umeyama_align(skeleton, target, with_scale=False)
        assert rigid.scale == 1.0
        np.testing.assert_allclose(rigid.rotation, rotation, atol=1e-9)

    def test_no_random_transform_does_better(
        self, skeleton: np.ndarray, rng: np.random.Generator
    ) -> None:
        target = skeleton + rng.normal(scale=0.02, size=skeleton.shape)
        best = umeyama_align(skeleton, target)
        best_cost = _cost(best, skeleton, target)
        for _ in range(1000):
            nudge = Rotation.from_rotvec(rng.normal(scale=0.02, size=3)).as_matrix()
            candidate = SimilarityTransform(
                scale=best.scale * float(np.exp(rng.normal(scale=0.02))),
                rotation=nudge @ best.rotation,
                translation=best.translation + rng.normal(scale=0.01, size=3),
            )
            assert _cost(candidate, skeleton, target) >= best_cost - 1e-12

    def test_invariant_to_similarity_of_prediction(
        self, skeleton: np.ndarray, rng: np.random.Generator
    ) -> None:
        gt = skeleton + rng.normal(scale=0.02, size=skeleton.shape)
        reference = pa_mpjpe(skeleton, gt)
        for _ in range(100):
            moved = _random_similarity(rng).apply(skeleton)
            assert pa_mpjpe(moved, gt) == pytest.approx(reference, abs=1e-6)


class TestDegenerateInputs:
    def test_coincident_points(self) -> None:
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(np.ones((5, 3)), np.zeros((5, 3)))

    def test_collinear_points(self) -> None:
        line = np.outer(np.arange(6.0), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(line, line)

    def test_target_collapsed_to_point(self, skeleton: np.ndarray) -> None:
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(skeleton, np.zeros_like(skeleton))
        rigid = umeyama_align(skeleton, np.zeros_like(skeleton), with_scale=False)
        assert rigid.scale == 1.0

    def test_too_few_points(self) -> None:
        with pytest.raises(ValueError):
            umeyama_align(np.eye(3)[:2], np.eye(3)[:2])

    def test_wrong_dimension(self) -> None:
        with pytest.raises(ValueError):
            umeyama_align(np.zeros((4, 2)), np.zeros((4, 2)))

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatch):
            pa_mpjpe(np.zeros((5, 3)), np.zeros((6, 3)))


class TestPaErrors:
    def test_single_joint_displacement(self, skeleton: np.ndarray) -> None:
        pred = skeleton.copy()
        pred[3] += [0.01, 0.0, 0.0]
        error = pa_mpjpe(pred, skeleton)
        # среднее не больше RMS, а RMS не больше, чем у тождественного выравнивания
        assert 0.0 < error <= 10.0 / math.sqrt(16) + 1e-9

        transform = umeyama_align(pred, skeleton)
        oracle = np.mean(np.linalg.norm(transform.apply(pred) - skeleton, axis=1)) * 1000.0
        assert error == pytest.approx(oracle, rel=1e-12)

    def test_reported_in_millimetres(self, skeleton: np.ndarray, rng: np.random.Generator) -> None:
        pred = skeleton + rng.normal(scale=0.005, size=skeleton.shape)
        assert pa_mpjpe(pred, skeleton) == pytest.approx(
            1000.0 * float(aligned_residuals(pred, skeleton).mean()), rel=1e-12
        )

    def test_scaled_mesh(self, body16: BodyModelDef) -> None:
        vertices = body16.template_vertices
        scaled = 1.1 * vertices + np.array([0.0, 0.0, 2.0])
        assert pa_mpvpe(scaled, vertices) == pytest.approx(0.0, abs=1e-6)
        assert pa_mpvpe(scaled, vertices, with_scale=False) > 1.0

    def test_rigid_is_never_better(self, skeleton: np.ndarray, rng: np.random.Generator) -> None:
        pred = 0.9 * skeleton + rng.normal(scale=0.01, size=skeleton.shape)
        with_scale = float(np.sum(aligned_residuals(pred, skeleton) ** 2))
        rigid = float(np.sum(aligned_residuals(pred, skeleton, with_scale=False) ** 2))
        assert with_scale <= rigid + 1e-12


class TestReports:
    def test_summarize(self) -> None:
        summary = summarize([1.0, 2.0, 3.0, 10.0], skipped=2)
        assert summary.mean == 4.0
        assert summary.median == 2.5
        assert summary.count == 4
        assert summary.skipped == 2

    def test_summarize_empty(self) -> None:
        summary = summarize([], skipped=3)
        assert summary.mean is None
        assert summary.median is None
        assert summary.count == 0

    def test_csv(self, tmp_path) -> None:
        rows = [
            MetricRow(frame_id=0, pa_mpjpe_mm=1.25, pa_mpvpe_mm=2.5),
            MetricRow(frame_id=1, pa_mpjpe_mm=None, pa_mpvpe_mm=None),
        ]
        path = tmp_path / "metrics.csv"
        write_metric_csv(rows, path)
        with path.open(newline="") as handle:
            table = list(csv.reader(handle))
        assert tuple(table[0]) == CSV_COLUMNS
        assert table[1] == ["0", "1.25", "2.5"]
        assert table[2] == ["1", "", ""]
