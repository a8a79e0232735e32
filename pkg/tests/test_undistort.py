import math

import numpy as np
import pytest

from egoplex.ep_camera import FisheyeCamera
from egoplex.ep_undistort import (
    PatchGridConfig,
    PatchSidecar,
    UndistortedPatchSet,
    bilinear,
    build_mosaic,
    crop_boundary,
    generate_patches,
    patch_centers,
    sample_grid,
    save_mosaic,
    save_sidecar,
    tangent_frame,
)
from egoplex.exceptions import DegenerateNeighbor, InvalidCrop, ShapeMismatch
from egoplex.internal.images import load_image
from egoplex.internal.schemas import read_json_file


@pytest.fixture(scope="module")
def default_config() -> PatchGridConfig:
    return PatchGridConfig()


@pytest.fixture(scope="module")
def gray_patches(toy_camera: FisheyeCamera, default_config: PatchGridConfig) -> UndistortedPatchSet:
    image = np.full((256, 256), 77, dtype=np.uint8)
    return generate_patches(image, toy_camera, default_config)


def _reference_sample_coords(
    camera: FisheyeCamera, config: PatchGridConfig, row: int, col: int
) -> np.ndarray:
    """Независимая прямолинейная реализация цепочки центр → базис → сетка → проекция"""
    n = config.n_patches_per_side
    u = camera.image_width / n * (col + 0.5)
    v = camera.image_height / n * (row + 0.5)
    cx, cy = camera.principal_point

    def to_sphere(px: float, py: float) -> np.ndarray:
        du, dv = px - cx, py - cy
        axial = np.polynomial.polynomial.polyval(math.hypot(du, dv), camera.inverse_coeffs)
        ray = np.array([du, dv, axial])
        return ray / np.linalg.norm(ray)

    p_c = to_sphere(u, v)
    p_u = to_sphere(u + config.neighbor_offset_px, v)
    p_x = p_u * (p_c @ p_c) / (p_u @ p_c)
    v_x = (p_x - p_c) / np.linalg.norm(p_x - p_c)
    v_y = np.cross(p_c, v_x)
    v_y /= np.linalg.norm(v_y)

    m_count = config.samples_per_patch
    step = config.tangent_square_side / m_count
    coords = np.empty((m_count, m_count, 2))
    for n_idx in range(m_count):
        for m_idx in range(m_count):
            point = p_c + step * (
                (m_idx - (m_count - 1) / 2) * v_x + (n_idx - (m_count - 1) / 2) * v_y
            )
            planar = math.hypot(point[0], point[1])
            rho = math.atan2(point[2], planar)
            radius = np.polynomial.polynomial.polyval(rho, camera.forward_coeffs)
            coords[n_idx, m_idx] = (
                point[0] / planar * radius + cx,
                point[1] / planar * radius + cy,
            )
    return coords


class TestPatchCenters:
    def test_first_and_last(self, default_config: PatchGridConfig) -> None:
        centers = patch_centers(default_config, 256, 256)
        assert centers.shape == (16, 16, 2)
        np.testing.assert_array_equal(centers[0, 0], [8.0, 8.0])
        np.testing.assert_array_equal(centers[15, 15], [248.0, 248.0])

    def test_single_patch(self) -> None:
        centers = patch_centers(PatchGridConfig(n_patches_per_side=1), 256, 256)
        np.testing.assert_array_equal(centers[0, 0], [128.0, 128.0])

    def test_row_major_layout(self, default_config: PatchGridConfig) -> None:
        centers = patch_centers(default_config, 256, 128)
        np.testing.assert_array_equal(centers[1, 3], [56.0, 12.0])

    def test_non_positive_size(self, default_config: PatchGridConfig) -> None:
        with pytest.raises(ValueError):
            patch_centers(default_config, 0, 256)


class TestTangentFrame:
    def test_center_of_image(self, toy_camera: FisheyeCamera) -> None:
        frame = tangent_frame(toy_camera, (128.0, 128.0), 8.0)
        np.testing.assert_allclose(frame.center_on_sphere, [0.0, 0.0, 1.0], atol=1e-6)
        np.testing.assert_allclose(frame.axis_x, [1.0, 0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(frame.axis_y, [0.0, 1.0, 0.0], atol=1e-6)

    def test_zero_offset_is_degenerate(self, toy_camera: FisheyeCamera) -> None:
        with pytest.raises(DegenerateNeighbor):
            tangent_frame(toy_camera, (100.0, 90.0), 0.0)

    def test_geometry_over_default_grid(
        self, toy_camera: FisheyeCamera, default_config: PatchGridConfig
    ) -> None:
        centers = patch_centers(default_config, 256, 256)
        for center in centers.reshape(-1, 2):
            frame = tangent_frame(toy_camera, center, default_config.neighbor_offset_px)
            axes = np.stack([frame.axis_x, frame.axis_y, frame.axis_z])
            assert abs(np.linalg.norm(frame.center_on_sphere) - 1.0) < 1e-9
            assert np.max(np.abs(axes @ axes.T - np.eye(3))) < 1e-9
            # касание: p^x − p^c лежит в плоскости с нормалью p^c
            assert abs(frame.axis_x @ frame.center_on_sphere) < 1e-9


class TestSampleGrid:
    def test_centroid_is_center(
        self, toy_camera: FisheyeCamera, default_config: PatchGridConfig
    ) -> None:
        frame = tangent_frame(toy_camera, (40.0, 200.0), 8.0)
        grid = sample_grid(frame, default_config)
        assert grid.shape == (16, 16, 3)
        np.testing.assert_allclose(
            grid.reshape(-1, 3).mean(axis=0), frame.center_on_sphere, rtol=0, atol=1e-12
        )

    def test_points_on_tangent_plane(
        self, toy_camera: FisheyeCamera, default_config: PatchGridConfig
    ) -> None:
        frame = tangent_frame(toy_camera, (200.0, 72.0), 8.0)
        grid = sample_grid(frame, default_config)
        heights = (grid - frame.center_on_sphere) @ frame.axis_z
        assert np.max(np.abs(heights)) < 1e-12

    def test_two_by_two(self, toy_camera: FisheyeCamera) -> None:
        config = PatchGridConfig(samples_per_patch=2, tangent_square_side=0.2)
        frame = tangent_frame(toy_camera, (150.0, 110.0), 8.0)
        grid = sample_grid(frame, config).reshape(-1, 3)
        distances = np.linalg.norm(grid - frame.center_on_sphere, axis=-1)
        np.testing.assert_allclose(distances, 0.2 / 2 * math.sqrt(2) / 2, atol=1e-12)


class TestBilinear:
    def test_constant_image(self, rng: np.random.Generator) -> None:
        image = np.full((5, 7), 7.0)
        coords = rng.uniform(-3.0, 10.0, size=(30, 2))
        np.testing.assert_array_equal(bilinear(image, coords), 7.0)

    def test_integer_pixel(self) -> None:
        image = np.arange(12.0).reshape(3, 4)
        assert bilinear(image, [[2.0, 1.0]])[0] == image[1, 2]

    def test_cell_center(self) -> None:
        image = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear(image, [[0.5, 0.5]])[0] == pytest.approx(1.5)

    def test_clamped_outside(self) -> None:
        image = np.array([[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(bilinear(image, [[-5.0, -5.0], [9.0, 9.0]]), [0.0, 3.0])

    def test_color_channels(self) -> None:
        image = np.zeros((2, 2, 3))
        image[:, 1] = [10.0, 20.0, 30.0]
        np.testing.assert_allclose(bilinear(image, [[0.5, 0.0]])[0], [5.0, 10.0, 15.0])

    def test_empty_image(self) -> None:
        with pytest.raises(ValueError):
            bilinear(np.zeros((0, 0)), [[0.0, 0.0]])


class TestGeneratePatches:
    def test_default_grid_shape(self, gray_patches: UndistortedPatchSet) -> None:
        assert gray_patches.grid_shape == (16, 16)
        assert gray_patches.num_patches == 256
        assert gray_patches.patches.shape == (16, 16, 16, 16, 1)
        assert gray_patches.sample_coords.shape == (16, 16, 16, 16, 2)

    def test_constant_image_gives_constant_patches(self, gray_patches: UndistortedPatchSet) -> None:
        assert np.all(gray_patches.patches == 77.0)

    def test_clamped_fraction(self, gray_patches: UndistortedPatchSet) -> None:
        assert np.all((gray_patches.clamped_fraction >= 0.0) & (gray_patches.clamped_fraction <= 1.0))
        assert gray_patches.clamped_fraction[8, 8] == 0.0

    def test_matches_reference(
        self,
        gray_patches: UndistortedPatchSet,
        toy_camera: FisheyeCamera,
        default_config: PatchGridConfig,
        rng: np.random.Generator,
    ) -> None:
        cells = [(8, 8)] + [tuple(cell) for cell in rng.integers(0, 16, size=(5, 2))]
        for row, col in cells:
            np.testing.assert_allclose(
                gray_patches.sample_coords[row, col],
                _reference_sample_coords(toy_camera, default_config, row, col),
                rtol=0,
                atol=1e-9,
            )

    def test_deterministic(
        self, toy_camera: FisheyeCamera, rng: np.random.Generator
    ) -> None:
        image = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
        config = PatchGridConfig(n_patches_per_side=4, samples_per_patch=8)
        first = generate_patches(image, toy_camera, config)
        second = generate_patches(image, toy_camera, config)
        assert first.patches.shape == (4, 4, 8, 8, 3)
        np.testing.assert_array_equal(first.patches, second.patches)
        np.testing.assert_array_equal(first.sample_coords, second.sample_coords)

    def test_wrong_image_size(self, toy_camera: FisheyeCamera, default_config: PatchGridConfig) -> None:
        with pytest.raises(ShapeMismatch):
            generate_patches(np.zeros((128, 256)), toy_camera, default_config)

    def test_degenerate_cell_is_reported(self, toy_camera: FisheyeCamera) -> None:
        config = PatchGridConfig(n_patches_per_side=2, neighbor_offset_px=1e-30)
        with pytest.raises(DegenerateNeighbor) as info:
            generate_patches(np.zeros((256, 256)), toy_camera, config)
        assert info.value.cell == (0, 0)


class TestCropBoundary:
    def test_two_column_crop(self, gray_patches: UndistortedPatchSet) -> None:
        cropped = crop_boundary(gray_patches, 2)
        assert cropped.grid_shape == (16, 12)
        assert cropped.num_patches == 192
        assert cropped.first_col == 2
        np.testing.assert_array_equal(
            cropped.sample_coords[:, 0], gray_patches.sample_coords[:, 2]
        )

    def test_zero_is_identity(self, gray_patches: UndistortedPatchSet) -> None:
        assert crop_boundary(gray_patches, 0) is gray_patches

    @pytest.mark.parametrize("cols", [8, 9, -1])
    def test_invalid(self, gray_patches: UndistortedPatchSet, cols: int) -> None:
        with pytest.raises(InvalidCrop):
            crop_boundary(gray_patches, cols)


class TestExport:
    def test_mosaic_layout(self, gray_patches: UndistortedPatchSet) -> None:
        mosaic = build_mosaic(gray_patches)
        assert mosaic.shape == (256, 256, 1)
        np.testing.assert_array_equal(mosaic[16:32, 48:64, 0], gray_patches.patches[1, 3, :, :, 0])

    def test_files(
        self,
        gray_patches: UndistortedPatchSet,
        toy_camera: FisheyeCamera,
        default_config: PatchGridConfig,
        tmp_path,
    ) -> None:
        cropped = crop_boundary(gray_patches, 2)
        save_mosaic(cropped, tmp_path / "mosaic.pgm")
        save_sidecar(cropped, default_config, toy_camera, tmp_path / "patches.json")

        mosaic = load_image(tmp_path / "mosaic.pgm")
        assert mosaic.shape == (256, 192)
        assert np.all(mosaic == 77)

        sidecar = read_json_file(tmp_path / "patches.json", PatchSidecar)
        assert sidecar.grid_shape == (16, 12)
        assert len(sidecar.cells) == 192
        assert sidecar.cells[0].col == 2
        assert sidecar.calibration_digest == toy_camera.digest()
