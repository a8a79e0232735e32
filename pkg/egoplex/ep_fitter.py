"""Подгонка псевдо-GT: поза и форма тела по GT 3D суставам с робастной энергией Geman–McClure"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, TypeVar

import numpy as np
import numpy.typing as npt
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from egoplex.ep_body import BodyModelDef, PoseShapeParams, posed_joints
from egoplex.exceptions import (
    EgoplexError,
    EmptyJointSubset,
    NonFiniteEnergy,
    NonFiniteInput,
    ShapeMismatch,
)
from egoplex.internal.schemas import PoseShapeRecord
from egoplex.internal.types import FloatArray, PoseInit, TranslationInit

logger = logging.getLogger(__name__)

Residual = TypeVar("Residual", float, npt.NDArray[np.float64], torch.Tensor)


def geman_mcclure(r: Residual, sigma: float) -> Residual:
    """
    Робастная функция Geman–McClure ω(r) = σ²r²/(σ² + r²)

    Чётная, не убывает по |r| и ограничена сверху σ²: выбросы
    дают вклад не больше σ² и почти нулевой градиент.

    Args:
        r: Остаток (число, массив numpy или тензор torch)
        sigma: Масштаб σ > 0

    Returns:
        ω(r) того же типа, что и r

    Raises:
        ValueError: sigma <= 0
    """
    if not sigma > 0.0:
        raise ValueError(f"geman_mcclure: sigma должна быть > 0, получено {sigma}")
    return _gm_from_squared(r * r, sigma * sigma)


def _gm_from_squared(r_sq: Residual, sigma_sq: float) -> Residual:
    # через r² градиент в нуле конечен (норма в нуле не дифференцируема)
    return sigma_sq * r_sq / (sigma_sq + r_sq)


class FitConfig(BaseModel):
    """
    Настройки подгонки псевдо-GT

    Энергия: Σ_{i∈𝒥} ω(s·‖J_i − J*_i‖; s·σ) + λθ‖θ_body‖² + λβ‖β‖²,
    где s = length_scale. При s = 1000 остатки считаются в миллиметрах,
    и веса регуляризаторов λθ = 1e3, λβ = 1e2 соизмеримы с членом данных.

    Attributes:
        lambda_theta: Вес регуляризатора позы λθ
        lambda_beta: Вес регуляризатора формы λβ
        gm_sigma: Масштаб Geman–McClure σ (метры)
        max_iters: Максимум итераций Adam
        step_size: Начальный шаг Adam
        grad_tolerance: Порог бесконечной нормы градиента для остановки
        joint_subset: Множество суставов 𝒥 (None — все суставы)
        init: Начальное приближение позы и формы
        init_translation: Начальное приближение смещения
        length_scale: Множитель остатков s (1000 — миллиметры)
        robust: False заменяет ω на квадрат остатка (абляция без робастности)
        lr_floor: Доля шага, до которой косинусно убывает learning rate
    """

    lambda_theta: float = Field(default=1e3, ge=0.0, description="Вес регуляризатора позы")
    lambda_beta: float = Field(default=1e2, ge=0.0, description="Вес регуляризатора формы")
    gm_sigma: float = Field(default=0.1, gt=0.0, description="Масштаб Geman–McClure, м")
    max_iters: int = Field(default=500, ge=1, description="Максимум итераций")
    step_size: float = Field(default=1e-2, gt=0.0, description="Начальный шаг Adam")
    grad_tolerance: float = Field(
        default=1e-6, ge=0.0, description="Порог ‖∇E‖∞ для остановки"
    )
    joint_subset: tuple[int, ...] | None = Field(
        default=None, description="Индексы суставов 𝒥; None — все"
    )
    init: PoseInit = Field(default=PoseInit.ZEROS)
    init_translation: TranslationInit = Field(default=TranslationInit.CENTROID)
    length_scale: float = Field(default=1000.0, gt=0.0, description="Множитель остатков")
    robust: bool = Field(default=True, description="Geman–McClure вместо квадрата")
    lr_floor: float = Field(
        default=1e-2, gt=0.0, le=1.0, description="Конечный шаг как доля step_size"
    )

    model_config = ConfigDict(extra="forbid", frozen=True)


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    """
    Разложение энергии подгонки по членам

    Attributes:
        total: data + λθ·pose_reg + λβ·shape_reg
        data: Член данных Σ ω (в единицах length_scale²)
        pose_reg: ‖θ_body‖² (без веса)
        shape_reg: ‖β‖² (без веса)
        per_joint_data: Вклад каждого сустава из 𝒥 в член данных
        per_joint_residuals: ‖J_i − J*_i‖ для всех суставов, метры
    """

    total: float
    data: float
    pose_reg: float
    shape_reg: float
    per_joint_data: FloatArray
    per_joint_residuals: FloatArray


class _EnergyTerms(NamedTuple):
    total: torch.Tensor
    data: torch.Tensor
    pose_reg: torch.Tensor
    shape_reg: torch.Tensor
    per_joint_data: torch.Tensor
    residual_sq: torch.Tensor


class FitRecord(BaseModel):
    """JSON-представление результата подгонки для отчётов"""

    params: PoseShapeRecord
    energy_total: float
    energy_data: float
    energy_pose_reg: float
    energy_shape_reg: float
    iterations: int
    converged: bool
    per_joint_residuals: list[float]

    model_config = ConfigDict(extra="forbid", frozen=True)


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Результат подгонки одного кадра

    Attributes:
        params: Подогнанные θ_body, β и t (блоки кистей и челюсти — из начального приближения)
        energy_total: Полная энергия
        energy_data: Член данных
        energy_pose_reg: ‖θ_body‖²
        energy_shape_reg: ‖β‖²
        iterations: Число выполненных шагов Adam
        converged: ‖∇E‖∞ в возвращённой (лучшей) точке ниже grad_tolerance
        per_joint_residuals: ‖J_i − J*_i‖ по всем суставам, метры
    """

    params: PoseShapeParams
    energy_total: float
    energy_data: float
    energy_pose_reg: float
    energy_shape_reg: float
    iterations: int
    converged: bool
    per_joint_residuals: FloatArray

    def to_record(self) -> FitRecord:
        return FitRecord(
            params=self.params.to_record(),
            energy_total=self.energy_total,
            energy_data=self.energy_data,
            energy_pose_reg=self.energy_pose_reg,
            energy_shape_reg=self.energy_shape_reg,
            iterations=self.iterations,
            converged=self.converged,
            per_joint_residuals=self.per_joint_residuals.tolist(),
        )


@dataclass(frozen=True)
class FitFailure:
    """Кадр, подгонка которого завершилась ошибкой (batch_fit не останавливается)"""

    index: int
    error: EgoplexError

    @property
    def reason(self) -> str:
        return str(self.error)


# ==================== ЭНЕРГИЯ ====================


def _resolve_subset(model: BodyModelDef, config: FitConfig) -> torch.Tensor:
    if config.joint_subset is None:
        return torch.arange(model.joint_count)
    if len(config.joint_subset) == 0:
        raise EmptyJointSubset()
    if any(not (0 <= j < model.joint_count) for j in config.joint_subset):
        raise ValueError(
            f"joint_subset: индексы вне диапазона 0..{model.joint_count - 1}"
        )
    return torch.as_tensor(config.joint_subset, dtype=torch.int64)


def _check_gt(model: BodyModelDef, gt_joints: npt.ArrayLike, subset: torch.Tensor) -> torch.Tensor:
    gt = np.asarray(gt_joints, dtype=np.float64)
    if gt.shape != (model.joint_count, 3):
        raise ShapeMismatch("gt_joints", gt.shape, (model.joint_count, 3))
    if not np.all(np.isfinite(gt[subset.numpy()])):
        raise NonFiniteInput("gt_joints")
    return torch.from_numpy(gt.copy())


def _energy_terms(
    model: BodyModelDef,
    pose: torch.Tensor,
    beta: torch.Tensor,
    translation: torch.Tensor,
    gt: torch.Tensor,
    subset: torch.Tensor,
    config: FitConfig,
) -> _EnergyTerms:
    joints = posed_joints(model, pose, beta, translation)
    diff = (joints - gt) * config.length_scale
    residual_sq = (diff * diff).sum(dim=-1)
    selected = residual_sq[subset]
    if config.robust:
        scaled_sigma = config.gm_sigma * config.length_scale
        per_joint = _gm_from_squared(selected, scaled_sigma * scaled_sigma)
    else:
        per_joint = selected
    data = per_joint.sum()

    body_joints = 3 * model.layout.size("body")
    theta_body = pose[:body_joints]
    pose_reg = (theta_body * theta_body).sum()
    shape_reg = (beta * beta).sum()
    total = data + config.lambda_theta * pose_reg + config.lambda_beta * shape_reg
    return _EnergyTerms(total, data, pose_reg, shape_reg, per_joint, residual_sq)


def _breakdown(terms: _EnergyTerms, config: FitConfig) -> EnergyBreakdown:
    data = float(terms.data)
    pose_reg = float(terms.pose_reg)
    shape_reg = float(terms.shape_reg)
    return EnergyBreakdown(
        total=data + config.lambda_theta * pose_reg + config.lambda_beta * shape_reg,
        data=data,
        pose_reg=pose_reg,
        shape_reg=shape_reg,
        per_joint_data=terms.per_joint_data.detach().numpy().copy(),
        per_joint_residuals=np.sqrt(terms.residual_sq.detach().numpy()) / config.length_scale,
    )


def energy(
    model: BodyModelDef,
    params: PoseShapeParams,
    gt_joints: npt.ArrayLike,
    config: FitConfig,
) -> EnergyBreakdown:
    """
    Энергия подгонки с разложением по членам

    Args:
        model: Модель тела
        params: Параметры позы, формы и смещения
        gt_joints: GT суставы J×3 в системе камеры (м)
        config: Настройки подгонки

    Returns:
        Разложение энергии

    Raises:
        UnboundParams: Размеры параметров не совпадают с раскладкой
        EmptyJointSubset: Множество 𝒥 пусто
        NonFiniteInput: GT суставы из 𝒥 содержат NaN/Inf
    """
    params.check_bound(model)
    subset = _resolve_subset(model, config)
    gt = _check_gt(model, gt_joints, subset)
    with torch.no_grad():
        terms = _energy_terms(
            model,
            torch.from_numpy(params.full_pose().copy()),
            torch.from_numpy(params.beta.copy()),
            torch.from_numpy(params.translation.copy()),
            gt,
            subset,
            config,
        )
    return _breakdown(terms, config)


def energy_gradient(
    model: BodyModelDef,
    params: PoseShapeParams,
    gt_joints: npt.ArrayLike,
    config: FitConfig,
) -> tuple[float, FloatArray]:
    """
    Энергия и её градиент по (θ_body, β, t), склеенный в один вектор

    Градиент вычисляется автоматическим дифференцированием torch;
    используется при проверке конечными разностями.
    """
    params.check_bound(model)
    subset = _resolve_subset(model, config)
    gt = _check_gt(model, gt_joints, subset)
    theta_body = torch.from_numpy(params.theta_body.copy()).requires_grad_(True)
    beta = torch.from_numpy(params.beta.copy()).requires_grad_(True)
    translation = torch.from_numpy(params.translation.copy()).requires_grad_(True)
    pose = _assemble_pose(theta_body, params)
    terms = _energy_terms(model, pose, beta, translation, gt, subset, config)
    terms.total.backward()
    grads = [t.grad for t in (theta_body, beta, translation)]
    assert all(g is not None for g in grads)
    return float(terms.total.detach()), torch.cat(grads).numpy().copy()  # type: ignore[arg-type]


def _assemble_pose(theta_body: torch.Tensor, params: PoseShapeParams) -> torch.Tensor:
    rest = np.concatenate([params.theta_lhand, params.theta_rhand, params.theta_jaw])
    return torch.cat([theta_body, torch.from_numpy(rest)])


# ==================== ПОДГОНКА ====================


def _initial_params(
    model: BodyModelDef,
    gt: torch.Tensor,
    subset: torch.Tensor,
    config: FitConfig,
    init_params: PoseShapeParams | None,
) -> PoseShapeParams:
    if config.init == PoseInit.PROVIDED:
        if init_params is None:
            raise ValueError("fit: init='provided' требует init_params")
        init_params.check_bound(model)
        start = init_params
    else:
        start = PoseShapeParams.zeros(model)

    # тёплый старт уже несёт своё смещение
    if config.init_translation == TranslationInit.ZEROS or config.init == PoseInit.PROVIDED:
        return start
    rest = torch.from_numpy(model.template_joints.copy())[subset]
    centroid = (gt[subset].mean(dim=0) - rest.mean(dim=0)).numpy()
    return PoseShapeParams(
        theta_body=start.theta_body,
        theta_lhand=start.theta_lhand,
        theta_rhand=start.theta_rhand,
        theta_jaw=start.theta_jaw,
        beta=start.beta,
        translation=centroid,
    )


def fit(
    model: BodyModelDef,
    gt_joints: npt.ArrayLike,
    config: FitConfig | None = None,
    init_params: PoseShapeParams | None = None,
) -> FitResult:
    """
    Подогнать θ_body, β и t к GT 3D суставам

    Adam с косинусным убыванием шага от step_size до step_size·lr_floor.
    Остановка по max_iters или когда ‖∇E‖∞ < grad_tolerance. Возвращается
    лучшая из посещённых точек, поэтому итоговая энергия не превышает
    начальную; converged и градиент относятся к ней же. Подгонка
    детерминирована при фиксированных входах.

    Args:
        model: Модель тела
        gt_joints: GT суставы J×3 в системе камеры (м)
        config: Настройки подгонки (по умолчанию FitConfig())
        init_params: Тёплый старт для init='provided'

    Returns:
        Результат подгонки

    Raises:
        EmptyJointSubset: Множество 𝒥 пусто
        NonFiniteEnergy: Энергия стала NaN/Inf (номер итерации в iteration)
        UnboundParams: init_params не соответствуют модели
    """
    config = config or FitConfig()
    subset = _resolve_subset(model, config)
    gt = _check_gt(model, gt_joints, subset)
    start = _initial_params(model, gt, subset, config, init_params)

    theta_body = torch.from_numpy(start.theta_body.copy()).requires_grad_(True)
    beta = torch.from_numpy(start.beta.copy()).requires_grad_(True)
    translation = torch.from_numpy(start.translation.copy()).requires_grad_(True)
    variables = [theta_body, beta, translation]

    optimizer = torch.optim.Adam(variables, lr=config.step_size)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.max_iters, eta_min=config.step_size * config.lr_floor
    )

    best_total = float("inf")
    best_state: tuple[torch.Tensor, ...] = tuple(v.detach().clone() for v in variables)
    best_grad_inf = float("inf")
    iterations = 0
    for iteration in range(config.max_iters + 1):
        optimizer.zero_grad()
        terms = _energy_terms(
            model, _assemble_pose(theta_body, start), beta, translation, gt, subset, config
        )
        total = float(terms.total.detach())
        if not np.isfinite(total):
            raise NonFiniteEnergy(iteration)
        terms.total.backward()

        grad_inf = max(float(v.grad.abs().max()) for v in variables if v.grad is not None)
        if total < best_total:
            best_total = total
            best_grad_inf = grad_inf
            best_state = tuple(v.detach().clone() for v in variables)
        logger.debug("Итерация %d: E=%.6g, |grad|_inf=%.3g", iteration, total, grad_inf)
        if grad_inf < config.grad_tolerance:
            break
        if iteration == config.max_iters:
            break
        optimizer.step()
        scheduler.step()
        iterations += 1

    fitted = PoseShapeParams(
        theta_body=best_state[0].numpy(),
        theta_lhand=start.theta_lhand,
        theta_rhand=start.theta_rhand,
        theta_jaw=start.theta_jaw,
        beta=best_state[1].numpy(),
        translation=best_state[2].numpy(),
    )
    # сходимость относится к возвращаемой точке, а не к последней итерации
    converged = best_grad_inf < config.grad_tolerance
    breakdown = energy(model, fitted, gt.numpy(), config)
    logger.debug(
        "Подгонка завершена: %d итераций, E=%.6g, сходимость=%s",
        iterations,
        breakdown.total,
        converged,
    )
    return FitResult(
        params=fitted,
        energy_total=breakdown.total,
        energy_data=breakdown.data,
        energy_pose_reg=breakdown.pose_reg,
        energy_shape_reg=breakdown.shape_reg,
        iterations=iterations,
        converged=converged,
        per_joint_residuals=breakdown.per_joint_residuals,
    )


def batch_fit(
    model: BodyModelDef,
    frames: Sequence[npt.ArrayLike],
    config: FitConfig | None = None,
    *,
    init_params: Sequence[PoseShapeParams | None] | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> list[FitResult | FitFailure]:
    """
    Подогнать несколько кадров

    Ошибки отдельных кадров собираются в FitFailure, остальные кадры
    продолжают считаться. Порядок результатов совпадает с порядком кадров
    при любом числе потоков.

    Args:
        model: Модель тела
        frames: GT суставы J×3 каждого кадра
        config: Настройки подгонки
        init_params: Тёплые старты по кадрам (для init='provided')
        jobs: Число потоков
        progress: Показывать прогресс tqdm

    Returns:
        Список FitResult или FitFailure в порядке frames

    Raises:
        ValueError: frames пуст, jobs < 1, длины frames и init_params различаются
    """
    if not frames:
        raise ValueError("batch_fit: список кадров пуст")
    if jobs < 1:
        raise ValueError(f"batch_fit: jobs должно быть >= 1, получено {jobs}")
    if init_params is not None and len(init_params) != len(frames):
        raise ValueError("batch_fit: длины frames и init_params различаются")
    config = config or FitConfig()
    inits = list(init_params) if init_params is not None else [None] * len(frames)

    def run(index: int) -> FitResult | FitFailure:
        try:
            return fit(model, frames[index], config, inits[index])
        except EgoplexError as exc:
            logger.warning("Кадр %d пропущен: %s", index, exc)
            return FitFailure(index=index, error=exc)

    slots: list[FitResult | FitFailure | None] = [None] * len(frames)
    with tqdm(total=len(frames), disable=not progress, desc="fit", unit="кадр") as bar:
        if jobs == 1:
            for index in range(len(frames)):
                slots[index] = run(index)
                bar.update()
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = {index: pool.submit(run, index) for index in range(len(frames))}
                for index, future in futures.items():
                    slots[index] = future.result()
                    bar.update()

    failed = sum(isinstance(slot, FitFailure) for slot in slots)
    logger.info("batch_fit: %d кадров, ошибок %d", len(frames), failed)
    return [slot for slot in slots if slot is not None]
