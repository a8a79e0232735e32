"""Оценка с выравниванием Прокруста: преобразование подобия Umeyama, PA-MPJPE и PA-MPVPE"""

import csv
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from egoplex.exceptions import DegenerateConfiguration, InvariantViolation, ShapeMismatch
from egoplex.internal.types import FloatArray

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-9
_RANK_TOL = 1e-10
"""Относительный порог сингулярных чисел, ниже которого точки считаются коллинеарными"""

MM_PER_M = 1000.0


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """
    Преобразование подобия x ↦ s·R·x + t

    Attributes:
        scale: Масштаб s > 0
        rotation: Матрица поворота 3×3, det = +1
        translation: Смещение t (3,)

    Raises:
        InvariantViolation: R не ортонормирована, det(R) != 1 или s <= 0
    """

    scale: float
    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise InvariantViolation("rotation_shape", str(rotation.shape))
        if not self.scale > 0.0:
            raise InvariantViolation("scale_positive", f"s = {self.scale}")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > _ORTHO_TOL:
            raise InvariantViolation("rotation_orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > _ORTHO_TOL:
            raise InvariantViolation("rotation_proper", f"det = {np.linalg.det(rotation)}")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(scale=1.0, rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: npt.ArrayLike) -> FloatArray:
        """Применить преобразование к массиву точек (..., 3)"""
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def _check_pair(source: FloatArray, target: FloatArray) -> None:
    if source.shape != target.shape:
        raise ShapeMismatch("points", source.shape, target.shape)
    if source.ndim != 2 or source.shape[1] != 3:
        raise ValueError(f"ожидалась форма (K, 3), получено {source.shape}")
    if source.shape[0] < 3:
        raise ValueError(f"для выравнивания нужно не менее 3 точек, получено {source.shape[0]}")


def umeyama_align(
    source: npt.ArrayLike, target: npt.ArrayLike, with_scale: bool = True
) -> SimilarityTransform:
    """
    Преобразование подобия, минимизирующее ‖s·R·source + t − target‖²

    Замкнутое решение через SVD ковариации центрированных точек
    с поправкой отражения: при det(U·Vᵀ) < 0 знак последнего
    сингулярного направления меняется, и R остаётся собственным поворотом.

    Args:
        source: Точки K×3, K >= 3
        target: Точки K×3
        with_scale: Оценивать масштаб (False — жёсткое выравнивание, s = 1)

    Returns:
        Преобразование подобия

    Raises:
        ShapeMismatch: Формы различаются
        ValueError: K < 3 или форма не (K, 3)
        DegenerateConfiguration: Точки source совпадают или коллинеарны,
            либо target вырожден в точку
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    _check_pair(src, dst)
    count = src.shape[0]

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    centered_src = src - mu_src
    centered_dst = dst - mu_dst

    spread = np.linalg.svd(centered_src, compute_uv=False)
    if spread[0] <= 0.0:
        raise DegenerateConfiguration("все точки совпадают")
    if spread[1] <= _RANK_TOL * spread[0]:
        raise DegenerateConfiguration("точки коллинеарны")

    covariance = centered_dst.T @ centered_src / count
    u, singular, vt = np.linalg.svd(covariance)
    correction = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        correction[-1] = -1.0
    rotation = (u * correction) @ vt

    if with_scale:
        variance = np.sum(centered_src * centered_src) / count
        scale = float(np.dot(singular, correction) / variance)
        if not scale > 0.0:
            raise DegenerateConfiguration("целевые точки вырождены в точку")
    else:
        scale = 1.0
    translation = mu_dst - scale * rotation @ mu_src
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


def aligned_residuals(
    pred: npt.ArrayLike, gt: npt.ArrayLike, with_scale: bool = True
) -> FloatArray:
    """
    Ошибки по точкам после выравнивания pred к gt (в единицах входа)

    Returns:
        Массив (K,) евклидовых расстояний
    """
    pred_arr = np.asarray(pred, dtype=np.float64)
    gt_arr = np.asarray(gt, dtype=np.float64)
    transform = umeyama_align(pred_arr, gt_arr, with_scale=with_scale)
    return np.linalg.norm(transform.apply(pred_arr) - gt_arr, axis=-1)


def pa_mpjpe(
    pred_joints: npt.ArrayLike, gt_joints: npt.ArrayLike, with_scale: bool = True
) -> float:
    """
    PA-MPJPE: средняя ошибка сустава после выравнивания подобием, мм

    Args:
        pred_joints: Предсказанные суставы K×3, метры
        gt_joints: GT суставы K×3, метры
        with_scale: Выравнивание с масштабом (по умолчанию)

    Returns:
        Средняя ошибка в миллиметрах

    Raises:
        ShapeMismatch: Формы различаются
        DegenerateConfiguration: Выравнивание не определено
    """
    return float(aligned_residuals(pred_joints, gt_joints, with_scale).mean() * MM_PER_M)


def pa_mpvpe(
    pred_vertices: npt.ArrayLike, gt_vertices: npt.ArrayLike, with_scale: bool = True
) -> float:
    """PA-MPVPE: то же, что pa_mpjpe, по вершинам меша, мм"""
    return float(aligned_residuals(pred_vertices, gt_vertices, with_scale).mean() * MM_PER_M)


# ==================== ОТЧЁТЫ ====================


class MetricSummary(BaseModel):
    """Сводка метрики по кадрам: среднее, медиана, число кадров и пропусков"""

    mean: float | None
    median: float | None
    count: int = Field(ge=0)
    skipped: int = Field(default=0, ge=0)

    model_config = ConfigDict(extra="forbid", frozen=True)


def summarize(values: Iterable[float], skipped: int = 0) -> MetricSummary:
    """
    Среднее и медиана значений

    Для пустого набора mean и median равны None.
    """
    array = np.asarray(list(values), dtype=np.float64)
    if array.size == 0:
        return MetricSummary(mean=None, median=None, count=0, skipped=skipped)
    return MetricSummary(
        mean=float(array.mean()),
        median=float(np.median(array)),
        count=int(array.size),
        skipped=skipped,
    )


class MetricRow(BaseModel):
    """Строка таблицы метрик одного кадра"""

    frame_id: int
    pa_mpjpe_mm: float | None
    pa_mpvpe_mm: float | None

    model_config = ConfigDict(extra="forbid", frozen=True)


CSV_COLUMNS = ("frame_id", "pa_mpjpe_mm", "pa_mpvpe_mm")


def write_metric_csv(rows: Sequence[MetricRow], path: Path | str) -> None:
    """Записать строки метрик в CSV (пустая ячейка — кадр без значения)"""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.frame_id,
                    "" if row.pa_mpjpe_mm is None else repr(row.pa_mpjpe_mm),
                    "" if row.pa_mpvpe_mm is None else repr(row.pa_mpvpe_mm),
                ]
            )
    logger.debug("Записано %d строк метрик в %s", len(rows), path)
