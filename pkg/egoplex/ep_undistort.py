"""Детерминированная развёртка fisheye-изображения в патчи касательных плоскостей"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from egoplex.ep_camera import FisheyeCamera
from egoplex.exceptions import (
    DegenerateNeighbor,
    InvalidCrop,
    InvariantViolation,
    ShapeMismatch,
)
from egoplex.internal.images import save_image
from egoplex.internal.schemas import write_json_file
from egoplex.internal.types import FloatArray, ImageArray

logger = logging.getLogger(__name__)

_COINCIDENT_EPS = 1e-12


class PatchGridConfig(BaseModel):
    """
    Параметры сетки касательных патчей

    Attributes:
        n_patches_per_side: N — число центров патчей по каждой оси изображения
        samples_per_patch: M — разрешение патча (M×M выборок)
        neighbor_offset_px: d — горизонтальное смещение соседней точки в пикселях
        tangent_square_side: l — сторона квадрата на касательной плоскости (единичная сфера)
    """

    n_patches_per_side: int = Field(default=16, ge=1)
    samples_per_patch: int = Field(default=16, ge=2)
    neighbor_offset_px: float = Field(default=8.0, gt=0.0)
    tangent_square_side: float = Field(default=0.2, gt=0.0)

    model_config = ConfigDict(extra="forbid", frozen=True)


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """
    Локальный ортонормированный базис касательной плоскости

    Attributes:
        center_on_sphere: p^c — центр патча на единичной сфере
        axis_x: v^x — направление на пересечение соседнего луча с плоскостью
        axis_y: v^y = v^z × v^x
        axis_z: v^z = p^c (нормаль плоскости)
    """

    center_on_sphere: FloatArray
    axis_x: FloatArray
    axis_y: FloatArray
    axis_z: FloatArray


@dataclass(frozen=True, eq=False)
class UndistortedPatchSet:
    """
    Сетка развёрнутых патчей

    Ячейки хранятся построчно: индекс [row, col] соответствует центру
    (u_col, v_row). Внутри патча значения индексируются [n, m]: строка —
    смещение по v^y, столбец — по v^x.

    Attributes:
        patches: Массив (rows, cols, M, M, C) значений
        sample_coords: Массив (rows, cols, M, M, 2) пиксельных координат c^{mn}
        frames: Базисы касательных плоскостей, frames[row][col]
        clamped_fraction: Доля выборок каждой ячейки, прижатых к границе кадра
        first_col: Индекс первого сохранённого столбца исходной сетки (после обрезки)
    """

    patches: FloatArray
    sample_coords: FloatArray
    frames: tuple[tuple[TangentFrame, ...], ...]
    clamped_fraction: FloatArray
    first_col: int = 0

    def __post_init__(self) -> None:
        rows, cols = self.patches.shape[:2]
        if self.sample_coords.shape[:2] != (rows, cols):
            raise InvariantViolation(
                "grid_shape_consistent", f"coords {self.sample_coords.shape[:2]}"
            )
        if len(self.frames) != rows or any(len(row) != cols for row in self.frames):
            raise InvariantViolation("grid_shape_consistent", "frames")
        if self.clamped_fraction.shape != (rows, cols):
            raise InvariantViolation("grid_shape_consistent", "clamped_fraction")
        if not np.all(np.isfinite(self.sample_coords)):
            raise InvariantViolation("sample_coords_finite")

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Форма сетки (rows, cols)"""
        rows, cols = self.patches.shape[:2]
        return int(rows), int(cols)

    @property
    def num_patches(self) -> int:
        """Число патчей в сетке"""
        rows, cols = self.grid_shape
        return rows * cols


def patch_centers(config: PatchGridConfig, width: int, height: int) -> FloatArray:
    """
    Центры патчей в абсолютных пикселях

    c_ij = (W/N·(i + ½), H/N·(j + ½)).

    Args:
        config: Параметры сетки
        width: Ширина изображения W
        height: Высота изображения H

    Returns:
        Массив (N, N, 2), элемент [j, i] равен (u_i, v_j)
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"patch_centers: размеры должны быть > 0, получено {width}x{height}")
    n = config.n_patches_per_side
    u = width / n * (np.arange(n) + 0.5)
    v = height / n * (np.arange(n) + 0.5)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    return np.stack([uu, vv], axis=-1)


def tangent_frame(
    camera: FisheyeCamera, center_px: npt.ArrayLike, d: float
) -> TangentFrame:
    """
    Построить базис касательной плоскости в центре патча

    p^c = P⁻¹(u, v, 1), p^u = P⁻¹(u + d, v, 1),
    p^x = ⟨p^c, p^c⟩ / ⟨p^u, p^c⟩ · p^u — пересечение луча через p^u
    с касательной плоскостью в p^c. Оси: v^x ∥ p^x − p^c, v^z = p^c,
    v^y = v^z × v^x.

    Args:
        camera: Fisheye-камера
        center_px: Центр патча (u, v) в абсолютных пикселях
        d: Горизонтальное смещение соседней точки

    Returns:
        Базис TangentFrame

    Raises:
        DegenerateNeighbor: ⟨p^u, p^c⟩ <= 0 или p^x совпадает с p^c
    """
    center = np.asarray(center_px, dtype=np.float64)
    neighbor = center + np.array([d, 0.0])
    if max(np.hypot(*(center - camera.center)), np.hypot(*(neighbor - camera.center))) > (
        camera.horizon_radius
    ):
        logger.debug("Центр %s вне области обратного полинома", center)

    p_c = camera.unproject(center, 1.0)
    p_u = camera.unproject(neighbor, 1.0)

    along = float(np.dot(p_u, p_c))
    if along <= 0.0:
        raise DegenerateNeighbor(f"⟨p^u, p^c⟩ = {along:.3e} <= 0")
    p_x = (float(np.dot(p_c, p_c)) / along) * p_u

    offset = p_x - p_c
    offset_norm = float(np.linalg.norm(offset))
    if offset_norm < _COINCIDENT_EPS:
        raise DegenerateNeighbor("p^x совпадает с p^c")

    axis_x = offset / offset_norm
    axis_z = p_c
    cross = np.cross(axis_z, axis_x)
    axis_y = cross / np.linalg.norm(cross)
    return TangentFrame(
        center_on_sphere=p_c, axis_x=axis_x, axis_y=axis_y, axis_z=axis_z
    )


def sample_grid(frame: TangentFrame, config: PatchGridConfig) -> FloatArray:
    """
    M×M точек квадрата l×l на касательной плоскости

    p^{mn} = p^c + l/M·(m̃·v^x + ñ·v^y), m̃ = m − (M−1)/2.

    Returns:
        Массив (M, M, 3), элемент [n, m]
    """
    m_count = config.samples_per_patch
    offsets = np.arange(m_count) - (m_count - 1) / 2.0
    step = config.tangent_square_side / m_count
    m_tilde = offsets[None, :, None]
    n_tilde = offsets[:, None, None]
    return frame.center_on_sphere + step * (
        m_tilde * frame.axis_x + n_tilde * frame.axis_y
    )


def _bilinear_clamped(
    image: ImageArray, coords: npt.ArrayLike
) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
    """Билинейная выборка с прижатием к границе; возвращает значения и маску прижатия"""
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.size == 0:
        raise ValueError("bilinear: изображение пусто")
    squeeze = pixels.ndim == 2
    if squeeze:
        pixels = pixels[..., None]
    height, width = pixels.shape[:2]

    uv = np.asarray(coords, dtype=np.float64)
    u = np.clip(uv[..., 0], 0.0, width - 1)
    v = np.clip(uv[..., 1], 0.0, height - 1)
    clamped = (u != uv[..., 0]) | (v != uv[..., 1])

    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    tx = (u - x0)[..., None]
    ty = (v - y0)[..., None]

    # форма a + (b − a)·t сохраняет постоянные значения бит-в-бит
    top = pixels[y0, x0] + (pixels[y0, x1] - pixels[y0, x0]) * tx
    bottom = pixels[y1, x0] + (pixels[y1, x1] - pixels[y1, x0]) * tx
    values = top + (bottom - top) * ty
    if squeeze:
        values = values[..., 0]
    return values, clamped


def bilinear(image: ImageArray, coords: npt.ArrayLike) -> FloatArray:
    """
    Билинейная интерполяция изображения в точках (u, v)

    Пиксель [row, col] имеет координаты (u=col, v=row). Координаты вне
    изображения прижимаются к граничному пикселю.

    Args:
        image: Массив H×W или H×W×C
        coords: Массив (..., 2) координат (u, v)

    Returns:
        Значения формы (...) для H×W или (..., C) для H×W×C
    """
    values, _ = _bilinear_clamped(image, coords)
    return values


def generate_patches(
    image: ImageArray, camera: FisheyeCamera, config: PatchGridConfig
) -> UndistortedPatchSet:
    """
    Развернуть fisheye-изображение в N×N патчей касательных плоскостей

    Для каждой ячейки: базис касательной плоскости, сетка M×M, проекция
    точек сетки в изображение и билинейная выборка. Функция чистая:
    одинаковые входы дают одинаковый результат.

    Args:
        image: Изображение H×W или H×W×C, совпадающее по размеру с камерой
        camera: Fisheye-камера
        config: Параметры сетки

    Returns:
        Набор патчей UndistortedPatchSet

    Raises:
        ShapeMismatch: Размер изображения не совпадает с камерой
        DegenerateNeighbor: Вырожденный сосед в ячейке (индекс ячейки в cell)
    """
    pixels = np.asarray(image)
    expected = (camera.image_height, camera.image_width)
    if pixels.shape[:2] != expected:
        raise ShapeMismatch("image", tuple(pixels.shape[:2]), expected)

    centers = patch_centers(config, camera.image_width, camera.image_height)
    rows, cols = centers.shape[:2]
    m_count = config.samples_per_patch
    channels = 1 if pixels.ndim == 2 else pixels.shape[2]

    patches = np.empty((rows, cols, m_count, m_count, channels), dtype=np.float64)
    coords = np.empty((rows, cols, m_count, m_count, 2), dtype=np.float64)
    clamped_fraction = np.empty((rows, cols), dtype=np.float64)
    frames: list[tuple[TangentFrame, ...]] = []

    for row in range(rows):
        row_frames: list[TangentFrame] = []
        for col in range(cols):
            try:
                frame = tangent_frame(camera, centers[row, col], config.neighbor_offset_px)
            except DegenerateNeighbor as exc:
                raise DegenerateNeighbor(exc.reason, cell=(col, row)) from exc
            grid = sample_grid(frame, config)
            cell_coords = camera.project(grid)
            values, clamped = _bilinear_clamped(pixels, cell_coords)

            coords[row, col] = cell_coords
            patches[row, col] = values.reshape(m_count, m_count, channels)
            clamped_fraction[row, col] = float(np.mean(clamped))
            row_frames.append(frame)
        frames.append(tuple(row_frames))

    logger.info(
        "Развёрнуто %d патчей %dx%d, средняя доля прижатых выборок %.4f",
        rows * cols,
        m_count,
        m_count,
        float(clamped_fraction.mean()),
    )
    return UndistortedPatchSet(
        patches=patches,
        sample_coords=coords,
        frames=tuple(frames),
        clamped_fraction=clamped_fraction,
    )


def crop_boundary(
    patch_set: UndistortedPatchSet, cols_each_side: int
) -> UndistortedPatchSet:
    """
    Удалить по cols_each_side крайних столбцов сетки слева и справа

    Args:
        patch_set: Исходный набор патчей
        cols_each_side: Число столбцов, удаляемых с каждой стороны

    Returns:
        Новый набор патчей; строки не меняются

    Raises:
        InvalidCrop: 2·cols_each_side >= число столбцов сетки или cols_each_side < 0
    """
    _, cols = patch_set.grid_shape
    if cols_each_side < 0 or 2 * cols_each_side >= cols:
        raise InvalidCrop(cols_each_side, cols)
    if cols_each_side == 0:
        return patch_set

    keep = slice(cols_each_side, cols - cols_each_side)
    return UndistortedPatchSet(
        patches=patch_set.patches[:, keep].copy(),
        sample_coords=patch_set.sample_coords[:, keep].copy(),
        frames=tuple(row[keep] for row in patch_set.frames),
        clamped_fraction=patch_set.clamped_fraction[:, keep].copy(),
        first_col=patch_set.first_col + cols_each_side,
    )


# ==================== ЭКСПОРТ ====================


class PatchCellRecord(BaseModel):
    """Ячейка сетки в JSON-сайдкаре"""

    row: int
    col: int
    center_on_sphere: tuple[float, float, float]
    axis_x: tuple[float, float, float]
    axis_y: tuple[float, float, float]
    axis_z: tuple[float, float, float]
    clamped_fraction: float
    sample_coords: list[list[tuple[float, float]]]


class PatchSidecar(BaseModel):
    """JSON-сайдкар набора патчей: параметры сетки, базисы и координаты выборок"""

    config: PatchGridConfig
    grid_shape: tuple[int, int]
    first_col: int
    calibration_digest: str
    cells: list[PatchCellRecord]


def _vec(values: FloatArray) -> tuple[float, float, float]:
    return float(values[0]), float(values[1]), float(values[2])


def build_mosaic(patch_set: UndistortedPatchSet) -> FloatArray:
    """Склеить патчи в одно изображение (rows·M)×(cols·M)×C в порядке сетки"""
    rows, cols, m_count, _, channels = patch_set.patches.shape
    mosaic = patch_set.patches.transpose(0, 2, 1, 3, 4)
    return mosaic.reshape(rows * m_count, cols * m_count, channels)


def save_mosaic(patch_set: UndistortedPatchSet, path: Path | str) -> None:
    """Сохранить мозаику патчей как PGM (1 канал) или PPM (3 канала)"""
    save_image(path, build_mosaic(patch_set))


def save_sidecar(
    patch_set: UndistortedPatchSet,
    config: PatchGridConfig,
    camera: FisheyeCamera,
    path: Path | str,
) -> None:
    """Сохранить JSON-сайдкар с базисами и координатами выборок"""
    rows, cols = patch_set.grid_shape
    cells = [
        PatchCellRecord(
            row=row,
            col=patch_set.first_col + col,
            center_on_sphere=_vec(frame.center_on_sphere),
            axis_x=_vec(frame.axis_x),
            axis_y=_vec(frame.axis_y),
            axis_z=_vec(frame.axis_z),
            clamped_fraction=float(patch_set.clamped_fraction[row, col]),
            sample_coords=patch_set.sample_coords[row, col].tolist(),
        )
        for row in range(rows)
        for col, frame in enumerate(patch_set.frames[row])
    ]
    sidecar = PatchSidecar(
        config=config,
        grid_shape=(rows, cols),
        first_col=patch_set.first_col,
        calibration_digest=camera.digest(),
        cells=cells,
    )
    write_json_file(path, sidecar)
