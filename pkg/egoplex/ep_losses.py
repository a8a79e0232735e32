"""Составная функция потерь: параметры, 3D/2D суставы через fisheye-камеру, диффузионный приор позы"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
import numpy.typing as npt
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from egoplex.ep_body import BodyModelDef, PoseShapeParams, posed_joints
from egoplex.ep_camera import FisheyeCamera
from egoplex.exceptions import (
    DenoiserFailure,
    EmptyMask,
    InvariantViolation,
    LengthMismatch,
    NonFiniteInput,
    ShapeMismatch,
)
from egoplex.internal.types import PriorSchedule

logger = logging.getLogger(__name__)

TensorLike = torch.Tensor | npt.ArrayLike
"""Тензор torch (градиент сохраняется) или любой массив, приводимый к float64"""

ALPHA_BAR_MIN = 1e-4
TAU_RANGE = (0.05, 0.5)
"""Диапазон уровня шума τ, из которого стенд сэмплирует τ на каждом шаге"""


def _tensor(values: TensorLike) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


# ==================== ПАРАМЕТРЫ И СУСТАВЫ ====================


def loss_pose(pred: TensorLike, target: TensorLike) -> torch.Tensor:
    """
    Квадрат L2-нормы разности векторов позы (ось-угол)

    Raises:
        LengthMismatch: Длины различаются
    """
    pred_t, target_t = _tensor(pred).reshape(-1), _tensor(target).reshape(-1)
    if pred_t.numel() != target_t.numel():
        raise LengthMismatch("loss_pose", pred_t.numel(), target_t.numel())
    diff = pred_t - target_t
    return (diff * diff).sum()


def loss_shape(pred_beta: TensorLike, target_beta: TensorLike) -> torch.Tensor:
    """
    Квадрат L2-нормы разности коэффициентов формы

    Raises:
        LengthMismatch: Длины различаются
    """
    pred_t, target_t = _tensor(pred_beta).reshape(-1), _tensor(target_beta).reshape(-1)
    if pred_t.numel() != target_t.numel():
        raise LengthMismatch("loss_shape", pred_t.numel(), target_t.numel())
    diff = pred_t - target_t
    return (diff * diff).sum()


def _mask_indices(mask: Sequence[int] | npt.ArrayLike | None, count: int) -> torch.Tensor:
    """Маска суставов → индексы; булева маска или список индексов, None — все"""
    if mask is None:
        return torch.arange(count)
    array = np.asarray(mask)
    if array.dtype == np.bool_:
        if array.shape != (count,):
            raise ShapeMismatch("mask", array.shape, (count,))
        array = np.flatnonzero(array)
    array = array.astype(np.int64).reshape(-1)
    if array.size == 0:
        raise EmptyMask()
    if np.any(array < 0) or np.any(array >= count):
        raise ValueError(f"mask: индексы вне диапазона 0..{count - 1}")
    return torch.from_numpy(array)


def loss_3d(
    pred_joints: TensorLike,
    gt_joints: TensorLike,
    mask: Sequence[int] | npt.ArrayLike | None = None,
) -> torch.Tensor:
    """
    Квадрат L2 по суставам из маски: Σ_i ‖J_i − J*_i‖²

    Args:
        pred_joints: Предсказанные суставы J×3
        gt_joints: GT суставы J×3
        mask: Индексы или булева маска суставов (None — все)

    Raises:
        ShapeMismatch: Формы различаются
        EmptyMask: Маска пуста
    """
    pred, gt = _tensor(pred_joints), _tensor(gt_joints)
    if tuple(pred.shape) != tuple(gt.shape) or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeMismatch("loss_3d", tuple(pred.shape), tuple(gt.shape))
    index = _mask_indices(mask, pred.shape[0])
    diff = pred[index] - gt[index]
    return (diff * diff).sum()


def loss_2d(
    pred_joints: TensorLike,
    translation: TensorLike,
    gt_px: TensorLike,
    camera: FisheyeCamera,
    mask: Sequence[int] | npt.ArrayLike | None = None,
) -> torch.Tensor:
    """
    Ошибка репроекции ‖π(J + t) − J*_2D‖² через исходную fisheye-модель

    Проекция дифференцируема (FisheyeCamera.project_tensor), поэтому
    градиент доходит до позы, формы и смещения.

    Args:
        pred_joints: Суставы J×3 без смещения
        translation: Смещение t (3,)
        gt_px: GT пиксели J×2
        camera: Fisheye-камера
        mask: Индексы или булева маска суставов (None — все)

    Raises:
        ShapeMismatch: Формы суставов и пикселей не согласованы
        EmptyMask: Маска пуста
        NonFiniteInput: GT пиксели из маски содержат NaN/Inf
        ZeroNormPoint: Сустав совпал с центром камеры
    """
    joints, t, gt = _tensor(pred_joints), _tensor(translation), _tensor(gt_px)
    if joints.ndim != 2 or joints.shape[1] != 3:
        raise ShapeMismatch("loss_2d joints", tuple(joints.shape), (joints.shape[0], 3))
    if tuple(gt.shape) != (joints.shape[0], 2):
        raise ShapeMismatch("loss_2d gt_px", tuple(gt.shape), (joints.shape[0], 2))
    index = _mask_indices(mask, joints.shape[0])
    target = gt[index]
    if not bool(torch.isfinite(target).all()):
        raise NonFiniteInput("gt_px")
    projected = camera.project_tensor(joints[index] + t.reshape(1, 3))
    diff = projected - target
    return (diff * diff).sum()


# ==================== ПРИОР ПОЗЫ ====================


def alpha_bar_cosine(tau: float) -> float:
    """
    Косинусное расписание ᾱ(τ) = cos²(τπ/2), обрезанное до [1e-4, 1]

    Raises:
        ValueError: τ вне [0, 1]
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"alpha_bar: τ должно лежать в [0, 1], получено {tau}")
    value = math.cos(tau * math.pi / 2.0) ** 2
    return min(1.0, max(ALPHA_BAR_MIN, value))


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Расписание шума ᾱ(τ) для VP-возмущения

    Attributes:
        alpha_bar: Функция τ ∈ [0, 1] → (0, 1], ᾱ(0) = 1, не возрастает
    """

    alpha_bar: Callable[[float], float] = alpha_bar_cosine

    def __call__(self, tau: float) -> float:
        return float(self.alpha_bar(tau))

    def check(self, points: int = 100) -> None:
        """
        Проверить границы расписания на равномерной сетке

        Raises:
            InvariantViolation: ᾱ(0) != 1, значение вне (0, 1] или рост по τ
        """
        grid = np.linspace(0.0, 1.0, points)
        values = np.array([self(float(tau)) for tau in grid])
        if values[0] != 1.0:
            raise InvariantViolation("alpha_bar_at_zero", f"ᾱ(0) = {values[0]}")
        if np.any(values <= 0.0) or np.any(values > 1.0):
            raise InvariantViolation("alpha_bar_range")
        if np.any(np.diff(values) > 0.0):
            raise InvariantViolation("alpha_bar_non_increasing")


def perturb(
    theta: TensorLike,
    tau: float,
    schedule: NoiseSchedule,
    noise: TensorLike,
) -> torch.Tensor:
    """
    VP-возмущение позы: √ᾱ(τ)·θ + √(1 − ᾱ(τ))·ε

    Шум передаётся явно, поэтому результат детерминирован.

    Raises:
        LengthMismatch: Длина шума не совпадает с длиной θ
    """
    theta_t, noise_t = _tensor(theta).reshape(-1), _tensor(noise).reshape(-1)
    if theta_t.numel() != noise_t.numel():
        raise LengthMismatch("perturb", theta_t.numel(), noise_t.numel())
    alpha_bar = schedule(tau)
    return math.sqrt(alpha_bar) * theta_t + math.sqrt(1.0 - alpha_bar) * noise_t


class DenoiserInterface(Protocol):
    """
    Одношаговый денойзер позы

    Возвращает оценку θ_0(τ) по зашумлённой позе; длина выхода равна длине
    входа, для конечного входа выход конечен.
    """

    def denoise(self, theta_noisy: torch.Tensor, tau: float) -> torch.Tensor: ...


@dataclass(frozen=True, eq=False)
class GaussianReferenceDenoiser:
    """
    Точное апостериорное среднее E[θ_0 | θ_τ] для гауссова приора N(μ, I)

    При VP-возмущении θ_τ = √ᾱ·θ_0 + √(1 − ᾱ)·ε и единичной ковариации
    приора дисперсия θ_τ равна единице, откуда E[θ_0 | θ_τ] = √ᾱ·θ_τ + (1 − ᾱ)·μ.
    """

    prior_mean: torch.Tensor
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def denoise(self, theta_noisy: torch.Tensor, tau: float) -> torch.Tensor:
        if theta_noisy.shape != self.prior_mean.shape:
            raise LengthMismatch(
                "denoise", theta_noisy.numel(), self.prior_mean.numel()
            )
        alpha_bar = self.schedule(tau)
        return math.sqrt(alpha_bar) * theta_noisy + (1.0 - alpha_bar) * self.prior_mean


def gaussian_reference_denoiser(
    prior_mean: TensorLike, schedule: NoiseSchedule | None = None
) -> GaussianReferenceDenoiser:
    """
    Эталонный денойзер с гауссовым приором позы

    Args:
        prior_mean: Среднее приора μ (вектор полной позы)
        schedule: Расписание шума (по умолчанию косинусное)

    Returns:
        Денойзер, реализующий DenoiserInterface
    """
    return GaussianReferenceDenoiser(
        prior_mean=_tensor(prior_mean).reshape(-1).detach().clone(),
        schedule=schedule or NoiseSchedule(),
    )


def loss_prior(
    theta: TensorLike,
    tau: float,
    schedule: NoiseSchedule,
    denoiser: DenoiserInterface,
    noise: TensorLike,
) -> torch.Tensor:
    """
    Приор позы одношаговым денойзером: ‖θ − denoise(perturb(θ, τ, ε), τ)‖²

    Применяется к полной позе {θ_body, θ_lhand, θ_rhand, θ_jaw}.

    Raises:
        LengthMismatch: Длина шума не совпадает с длиной θ
        DenoiserFailure: Денойзер бросил исключение либо вернул результат
            неверной длины или с NaN/Inf
    """
    theta_t = _tensor(theta).reshape(-1)
    noisy = perturb(theta_t, tau, schedule, noise)
    try:
        denoised = denoiser.denoise(noisy, tau)
    except Exception as exc:
        raise DenoiserFailure(f"{type(exc).__name__}: {exc}") from exc
    if not isinstance(denoised, torch.Tensor):
        raise DenoiserFailure(f"ожидался torch.Tensor, получено {type(denoised).__name__}")
    denoised = denoised.reshape(-1)
    if denoised.numel() != theta_t.numel():
        raise DenoiserFailure(
            f"длина выхода {denoised.numel()} не равна длине входа {theta_t.numel()}"
        )
    if not bool(torch.isfinite(denoised).all()):
        raise DenoiserFailure("выход содержит NaN/Inf")
    diff = theta_t - denoised
    return (diff * diff).sum()


class PriorNoiseSampler:
    """
    Сэмплер уровня шума и шума для приора (свой генератор на экземпляр)

    τ ~ U[0.05, 0.5], ε ~ N(0, I). Не разделяется между потоками:
    по одному экземпляру на воркер.
    """

    def __init__(self, seed: int | np.random.SeedSequence, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"PriorNoiseSampler: dim должно быть >= 1, получено {dim}")
        self._rng = np.random.default_rng(seed)
        self.dim = dim

    def sample(self) -> tuple[float, npt.NDArray[np.float64]]:
        """Пара (τ, ε)"""
        tau = float(self._rng.uniform(*TAU_RANGE))
        noise = self._rng.standard_normal(self.dim)
        return tau, noise


# ==================== СОСТАВНАЯ ПОТЕРЯ ====================


class LossWeights(BaseModel):
    """
    Веса членов составной потери

    λ_prior косинусно убывает от prior_start к prior_end по ходу обучения.
    """

    lambda_pose: float = Field(default=10.0, ge=0.0)
    lambda_shape: float = Field(default=1e-2, ge=0.0)
    lambda_3d: float = Field(default=1e2, ge=0.0)
    lambda_2d: float = Field(default=1.0, ge=0.0)
    prior_start: float = Field(default=1e-1, ge=0.0, description="λ_prior в начале")
    prior_end: float = Field(default=1e-2, ge=0.0, description="λ_prior в конце")
    schedule: PriorSchedule = Field(default=PriorSchedule.COSINE)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_prior_decay(self) -> "LossWeights":
        if self.prior_start < self.prior_end:
            raise ValueError(
                f"prior_start ({self.prior_start}) должен быть >= prior_end ({self.prior_end})"
            )
        return self


def prior_weight(weights: LossWeights, progress: float) -> float:
    """
    λ_prior(s) = λ_end + (λ_start − λ_end)·(1 + cos πs)/2

    Выпуклая комбинация: при s = 0 и s = 1 результат ровно prior_start
    и prior_end.

    Raises:
        ValueError: progress вне [0, 1]
    """
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress должен лежать в [0, 1], получено {progress}")
    match weights.schedule:
        case PriorSchedule.COSINE:
            blend = (1.0 + math.cos(math.pi * progress)) / 2.0
    return blend * weights.prior_start + (1.0 - blend) * weights.prior_end


@dataclass(frozen=True, eq=False)
class LossInputs:
    """
    Входы составной потери для одного кадра

    Предсказание задаётся тензорами (градиент по ним сохраняется),
    цель — параметрами и GT суставами кадра.

    Attributes:
        model: Модель тела
        camera: Fisheye-камера для 2D-члена
        pose: Предсказанная полная поза (3·J,)
        beta: Предсказанная форма (B,)
        translation: Предсказанное смещение (3,)
        target: GT параметры (θ_body для позы, β для формы)
        gt_joints_3d: GT суставы J×3 в системе камеры
        gt_joints_2d: GT пиксели J×2
        tau: Уровень шума приора
        noise: Шум приора (3·J,)
        mask: Маска суставов для 3D/2D членов
        denoiser: Денойзер (по умолчанию гауссов с μ = 0)
        schedule: Расписание шума
    """

    model: BodyModelDef
    camera: FisheyeCamera
    pose: torch.Tensor
    beta: torch.Tensor
    translation: torch.Tensor
    target: PoseShapeParams
    gt_joints_3d: npt.ArrayLike
    gt_joints_2d: npt.ArrayLike
    tau: float
    noise: npt.ArrayLike
    mask: Sequence[int] | None = None
    denoiser: DenoiserInterface | None = None
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)


@dataclass(frozen=True)
class LossBreakdown:
    """
    Разложение составной потери: невзвешенные члены и их эффективные веса

    Attributes:
        terms: Имя члена → невзвешенное значение
        weights: Имя члена → эффективный вес (для prior — λ_prior(s))
        total: Σ weights·terms
    """

    terms: dict[str, float]
    weights: dict[str, float]
    total: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "terms": {
                name: {"value": value, "weight": self.weights[name]}
                for name, value in self.terms.items()
            },
        }


def total_loss(
    inputs: LossInputs, weights: LossWeights, progress: float
) -> tuple[torch.Tensor, LossBreakdown]:
    """
    Составная потеря λ_pose·L_pose + λ_shape·L_shape + λ_3D·L_3D + λ_2D·L_2D + λ_prior(s)·L_prior

    L_pose сравнивает только θ_body (GT поза доступна для тела), L_3D
    сравнивает суставы с учётом смещения, L_2D проецирует суставы + t
    исходной fisheye-моделью, L_prior берётся по полной позе.

    Args:
        inputs: Входы кадра
        weights: Веса
        progress: Доля пройденного обучения s ∈ [0, 1]

    Returns:
        (полная потеря как тензор с графом, разложение)

    Raises:
        ValueError: progress вне [0, 1]
        LengthMismatch, ShapeMismatch, EmptyMask, DenoiserFailure: от членов
    """
    prior_lambda = prior_weight(weights, progress)
    model = inputs.model
    body_size = 3 * model.layout.size("body")
    zeros = torch.zeros(3, dtype=torch.float64)
    joints = posed_joints(model, inputs.pose, inputs.beta, zeros)
    denoiser = inputs.denoiser or gaussian_reference_denoiser(
        torch.zeros(inputs.pose.numel(), dtype=torch.float64), inputs.schedule
    )

    terms_t = {
        "pose": loss_pose(inputs.pose[:body_size], inputs.target.theta_body),
        "shape": loss_shape(inputs.beta, inputs.target.beta),
        "joints_3d": loss_3d(
            joints + inputs.translation.reshape(1, 3), inputs.gt_joints_3d, inputs.mask
        ),
        "joints_2d": loss_2d(
            joints, inputs.translation, inputs.gt_joints_2d, inputs.camera, inputs.mask
        ),
        "prior": loss_prior(
            inputs.pose, inputs.tau, inputs.schedule, denoiser, inputs.noise
        ),
    }
    effective = {
        "pose": weights.lambda_pose,
        "shape": weights.lambda_shape,
        "joints_3d": weights.lambda_3d,
        "joints_2d": weights.lambda_2d,
        "prior": prior_lambda,
    }
    total = sum(
        (effective[name] * value for name, value in terms_t.items()),
        start=torch.zeros((), dtype=torch.float64),
    )
    terms = {name: float(value) for name, value in terms_t.items()}
    breakdown = LossBreakdown(
        terms=terms,
        weights=effective,
        total=float(total),
    )
    logger.debug("Составная потеря %.6g при λ_prior=%.4g", breakdown.total, prior_lambda)
    return total, breakdown
