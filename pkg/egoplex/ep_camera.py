"""Полиномиальная модель fisheye-камеры Scaramuzza: проекция, обратная проекция, калибровка"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import torch

from egoplex.exceptions import (
    InvariantViolation,
    NonFiniteInput,
    NonMonotonicForwardPoly,
    NonPositiveDistance,
    SingularNormalEquations,
    ZeroNormPoint,
)
from egoplex.internal.poly import eval_poly
from egoplex.internal.schemas import (
    CalibrationFile,
    digest_of,
    read_json_file,
    write_json_file,
)
from egoplex.internal.types import FloatArray

logger = logging.getLogger(__name__)

AXIS_EPS = 1e-12
"""Порог планарного радиуса √(x²+y²), ниже которого точка считается лежащей на оси"""

DEFAULT_INVERSE_DEGREE = 6
DEFAULT_INVERSE_SAMPLES = 512


@dataclass(frozen=True)
class FisheyeCamera:
    """
    Всенаправленная камера с полиномиальной моделью Scaramuzza

    Прямой полином f(ρ) переводит угол возвышения луча ρ = arctan(z/√(x²+y²))
    в радиус на изображении, обратный f'(ρ') по радиусу ρ' восстанавливает
    осевую компоненту луча. Формулы записаны в центрированных координатах;
    камера хранит главную точку и переводит координаты на границе
    project/unproject. Матрица аффинного перекоса Scaramuzza не используется.

    Класс неизменяем (frozen=True), все методы чистые и потокобезопасные.

    Attributes:
        forward_coeffs: Коэффициенты k_0..k_Q прямого полинома (пиксели)
        inverse_coeffs: Коэффициенты k'_0..k'_Q' обратного полинома
        image_width: Ширина изображения в пикселях
        image_height: Высота изображения в пикселях
        principal_point: Главная точка (cx, cy) в абсолютных пикселях

    Raises:
        InvariantViolation: Пустые коэффициенты, f'(0) <= 0, главная точка вне кадра
    """

    forward_coeffs: tuple[float, ...]
    inverse_coeffs: tuple[float, ...]
    image_width: int
    image_height: int
    principal_point: tuple[float, float]

    def __post_init__(self) -> None:
        if not self.forward_coeffs:
            raise InvariantViolation("forward_coeffs_non_empty")
        if not self.inverse_coeffs:
            raise InvariantViolation("inverse_coeffs_non_empty")
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvariantViolation(
                "positive_image_size", f"{self.image_width}x{self.image_height}"
            )
        if self.inverse_coeffs[0] <= 0.0:
            raise InvariantViolation(
                "inverse_axis_positive", f"f'(0) = {self.inverse_coeffs[0]}"
            )
        cx, cy = self.principal_point
        if not (0.0 <= cx <= self.image_width and 0.0 <= cy <= self.image_height):
            raise InvariantViolation(
                "principal_point_inside_image",
                f"({cx}, {cy}) вне {self.image_width}x{self.image_height}",
            )

    @classmethod
    def from_forward(
        cls,
        forward_coeffs: Sequence[float],
        image_width: int,
        image_height: int,
        principal_point: tuple[float, float],
        degree: int = DEFAULT_INVERSE_DEGREE,
        num_samples: int = DEFAULT_INVERSE_SAMPLES,
    ) -> "FisheyeCamera":
        """
        Построить камеру по прямому полиному, подогнав обратный

        Args:
            forward_coeffs: Коэффициенты прямого полинома
            image_width: Ширина изображения
            image_height: Высота изображения
            principal_point: Главная точка (cx, cy)
            degree: Степень обратного полинома
            num_samples: Число выборок ρ для подгонки

        Returns:
            Новая камера с подогнанным inverse_coeffs
        """
        forward = tuple(float(c) for c in forward_coeffs)
        inverse = fit_inverse_poly(forward, degree=degree, num_samples=num_samples)
        return cls(
            forward_coeffs=forward,
            inverse_coeffs=inverse,
            image_width=int(image_width),
            image_height=int(image_height),
            principal_point=(float(principal_point[0]), float(principal_point[1])),
        )

    @property
    def horizon_radius(self) -> float:
        """Центрированный радиус луча с ρ = 0 (край области обратного полинома)"""
        return abs(float(eval_poly(self.forward_coeffs, 0.0)))

    @property
    def center(self) -> FloatArray:
        """Главная точка как массив (2,)"""
        return np.asarray(self.principal_point, dtype=np.float64)

    def project(self, points: npt.ArrayLike) -> FloatArray:
        """
        Спроецировать 3D точки камеры в абсолютные пиксели

        ρ = arctan(z/√(x²+y²)), радиус f(ρ), центрированный пиксель
        f(ρ)·(x, y)/√(x²+y²). На оси (√(x²+y²) < AXIS_EPS) возвращается
        главная точка — аналитический предел.

        Args:
            points: Массив (..., 3) координат в системе камеры

        Returns:
            Массив (..., 2) пикселей (u, v)

        Raises:
            NonFiniteInput: Во входе есть NaN/Inf
            ZeroNormPoint: Есть точка с нулевой нормой
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape[-1] != 3:
            raise ValueError(f"project: ожидалась форма (..., 3), получено {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("project")
        if np.any(np.all(pts == 0.0, axis=-1)):
            raise ZeroNormPoint()

        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        planar = np.hypot(x, y)
        on_axis = planar < AXIS_EPS
        safe_planar = np.where(on_axis, 1.0, planar)
        rho = np.arctan2(z, safe_planar)
        radius = eval_poly(self.forward_coeffs, rho)

        centered = np.stack([x, y], axis=-1) * (radius / safe_planar)[..., None]
        pixels = centered + self.center
        return np.where(on_axis[..., None], self.center, pixels)

    def project_tensor(self, points: torch.Tensor) -> torch.Tensor:
        """
        Дифференцируемая версия project для тензоров torch

        Совпадает с project поэлементно; на оси градиент конечен,
        так как корень берётся от безопасного значения.

        Args:
            points: Тензор (..., 3) float64

        Returns:
            Тензор (..., 2) пикселей

        Raises:
            NonFiniteInput: Во входе есть NaN/Inf
            ZeroNormPoint: Есть точка с нулевой нормой
        """
        if not bool(torch.isfinite(points).all()):
            raise NonFiniteInput("project_tensor")
        if bool((points == 0.0).all(dim=-1).any()):
            raise ZeroNormPoint()

        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        planar_sq = x * x + y * y
        on_axis = planar_sq < AXIS_EPS * AXIS_EPS
        safe_planar = torch.sqrt(torch.where(on_axis, torch.ones_like(planar_sq), planar_sq))
        rho = torch.atan2(z, safe_planar)
        radius = eval_poly(self.forward_coeffs, rho)

        scale = radius / safe_planar
        center = torch.as_tensor(self.principal_point, dtype=points.dtype)
        pixels = torch.stack([x * scale, y * scale], dim=-1) + center
        return torch.where(on_axis[..., None], center.expand_as(pixels), pixels)

    def unproject(self, pixels: npt.ArrayLike, distance: float = 1.0) -> FloatArray:
        """
        Восстановить 3D точку на луче пикселя на расстоянии a от центра камеры

        С центрированными (u, v) = px − c: ρ' = √(u²+v²), направление
        (u, v, f'(ρ')) нормируется и умножается на a.

        Args:
            pixels: Массив (..., 2) абсолютных пикселей
            distance: Расстояние a > 0 вдоль луча

        Returns:
            Массив (..., 3) точек с нормой a

        Raises:
            NonPositiveDistance: a <= 0
            NonFiniteInput: Во входе есть NaN/Inf
        """
        if not distance > 0.0:
            raise NonPositiveDistance(distance)
        px = np.asarray(pixels, dtype=np.float64)
        if px.shape[-1] != 2:
            raise ValueError(f"unproject: ожидалась форма (..., 2), получено {px.shape}")
        if not np.all(np.isfinite(px)):
            raise NonFiniteInput("unproject")

        centered = px - self.center
        rho_prime = np.hypot(centered[..., 0], centered[..., 1])
        axial = eval_poly(self.inverse_coeffs, rho_prime)
        direction = np.concatenate([centered, axial[..., None]], axis=-1)
        norm = np.linalg.norm(direction, axis=-1, keepdims=True)
        return distance * direction / norm

    def to_file(self) -> CalibrationFile:
        """Представление камеры в виде схемы файла калибровки"""
        return CalibrationFile(
            forward_coeffs=list(self.forward_coeffs),
            inverse_coeffs=list(self.inverse_coeffs),
            image_width=self.image_width,
            image_height=self.image_height,
            principal_point=self.principal_point,
        )

    def digest(self) -> str:
        """SHA-256 канонического JSON калибровки"""
        return digest_of(self.to_file())


def fit_inverse_poly(
    camera: FisheyeCamera | Sequence[float],
    degree: int = DEFAULT_INVERSE_DEGREE,
    num_samples: int = DEFAULT_INVERSE_SAMPLES,
) -> tuple[float, ...]:
    """
    Подогнать обратный полином f' по прямому f методом наименьших квадратов

    Для равномерных ρ ∈ (0, π/2) вычисляется радиус r = f(ρ) и точное
    отношение осевой компоненты луча к планарной, пересчитанное в пиксели:
    f'(r) = r·tan(ρ). Результат не сохраняется в камере — возвращаются
    только коэффициенты.

    Args:
        camera: Камера или сами коэффициенты прямого полинома
        degree: Степень обратного полинома (>= 1)
        num_samples: Число выборок (>= degree + 1)

    Returns:
        Коэффициенты k'_0..k'_degree

    Raises:
        ValueError: degree < 1 или num_samples < degree + 1
        NonMonotonicForwardPoly: f не убывает строго на (0, π/2]
        SingularNormalEquations: Матрица плана вырождена
    """
    if degree < 1:
        raise ValueError(f"fit_inverse_poly: степень должна быть >= 1, получено {degree}")
    if num_samples < degree + 1:
        raise ValueError(
            f"fit_inverse_poly: нужно не менее {degree + 1} выборок, получено {num_samples}"
        )
    forward = camera.forward_coeffs if isinstance(camera, FisheyeCamera) else tuple(camera)

    # монотонность проверяется на сетке, включающей саму ось ρ = π/2
    rho_check = np.linspace(0.0, math.pi / 2, num_samples + 1)[1:]
    radius_check = eval_poly(forward, rho_check)
    steps = np.diff(radius_check)
    if np.any(steps >= 0.0):
        bad = int(np.argmax(steps >= 0.0))
        raise NonMonotonicForwardPoly(float(rho_check[bad + 1]))

    rho = (math.pi / 2) * (np.arange(num_samples) + 0.5) / num_samples
    radius = eval_poly(forward, rho)
    axial = radius * np.tan(rho)

    coeffs, (_, rank, _, _) = np.polynomial.polynomial.polyfit(
        radius, axial, degree, full=True
    )
    if int(rank) < degree + 1:
        raise SingularNormalEquations(degree, int(rank))

    logger.debug(
        "Обратный полином степени %d подогнан по %d выборкам, f'(0)=%.6f",
        degree,
        num_samples,
        coeffs[0],
    )
    return tuple(float(c) for c in coeffs)


def make_toy_camera() -> FisheyeCamera:
    """
    Эталонная камера 256×256: f(ρ) = 128 − 256ρ/π, главная точка (128, 128)

    Горизонт (ρ = 0) попадает на радиус 128, ось — в центр кадра.
    Обратный полином степени 6 подгоняется по 512 выборкам.
    """
    return FisheyeCamera.from_forward(
        [128.0, -256.0 / math.pi], 256, 256, (128.0, 128.0)
    )


def load_calibration(path: Path | str) -> FisheyeCamera:
    """
    Загрузить калибровку из JSON

    Если inverse_coeffs отсутствует, обратный полином подгоняется
    (степень 6, 512 выборок).

    Args:
        path: Путь к файлу калибровки

    Returns:
        Камера

    Raises:
        ParseError: Файл не разбирается или нарушает схему
        InvariantViolation: Значения нарушают инварианты FisheyeCamera
    """
    document = read_json_file(path, CalibrationFile)
    forward = tuple(document.forward_coeffs)
    if document.inverse_coeffs is None:
        logger.info("%s: inverse_coeffs отсутствуют, подгоняем обратный полином", path)
        inverse = fit_inverse_poly(forward)
    else:
        inverse = tuple(document.inverse_coeffs)
    return FisheyeCamera(
        forward_coeffs=forward,
        inverse_coeffs=inverse,
        image_width=document.image_width,
        image_height=document.image_height,
        principal_point=document.principal_point,
    )


def save_calibration(camera: FisheyeCamera, path: Path | str) -> None:
    """Сохранить калибровку в JSON без потери точности"""
    write_json_file(path, camera.to_file())
