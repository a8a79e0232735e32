"""
Синтетический стенд: генерация датасетов, подгонка псевдо-GT, PA-оценка,
сравнение «регрессия против оптимизации», развёртка патчей и демонстрация потерь
"""

import hashlib
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from egoplex.ep_body import (
    BodyModelDef,
    PoseShapeParams,
    forward_kinematics,
    load_model,
    make_toy_model,
    skin_vertices,
)
from egoplex.ep_camera import FisheyeCamera, load_calibration, make_toy_camera
from egoplex.ep_fitter import FitConfig, FitFailure, FitRecord, FitResult, batch_fit
from egoplex.ep_losses import (
    LossInputs,
    LossWeights,
    PriorNoiseSampler,
    prior_weight,
    total_loss,
)
from egoplex.ep_metrics import (
    MetricRow,
    MetricSummary,
    pa_mpjpe,
    pa_mpvpe,
    summarize,
    write_metric_csv,
)
from egoplex.ep_undistort import (
    PatchGridConfig,
    crop_boundary,
    generate_patches,
    save_mosaic,
    save_sidecar,
)
from egoplex.exceptions import (
    EgoplexError,
    EmptyMask,
    InvariantViolation,
    JointBehindCamera,
    ParseError,
)
from egoplex.internal.images import load_image
from egoplex.internal.schemas import (
    PoseShapeRecord,
    digest_of,
    parse_json_text,
    read_json_file,
    write_json_file,
)
from egoplex.internal.types import FloatArray, ToyVariant

logger = logging.getLogger(__name__)

DATASET_FORMAT = "egoplex-dataset/1"
RESULTS_FORMAT = "egoplex-fit/1"
TOY_CAMERA_REF = "toy"
TOY_MODEL_PREFIX = "toy:"
MAX_RESAMPLES = 100
OUTLIER_RANGE = (0.5, 1.5)

TABLE3_REFERENCE_MM = {"regression": 350.78, "optimization": 77.44}
"""Опубликованные PA-MPJPE на EgoPW: контекст для заголовка отчёта, не цель"""


# ==================== КОНФИГУРАЦИЯ ====================


class SyntheticConfig(BaseModel):
    """
    Параметры генерации синтетического датасета

    Attributes:
        seed: Зерно; кадр frame_id сэмплируется из SeedSequence([seed, frame_id])
        num_frames: Число кадров
        pose_scale: Компоненты позы ~ U[−pose_scale, pose_scale] (рад)
        shape_scale: β ~ N(0, shape_scale²)
        noise_sigma: Изотропный шум суставов (м)
        outlier_rate: Вероятность выброса сустава (смещение 0.5–1.5 м)
        translation_min: Нижняя граница смещения t (м)
        translation_max: Верхняя граница смещения t (м)
        model_variant: Игрушечная модель, если модель не задана файлом
    """

    seed: int = Field(default=0, ge=0)
    num_frames: int = Field(default=64, ge=1)
    pose_scale: float = Field(default=0.5, ge=0.0)
    shape_scale: float = Field(default=1.0, ge=0.0)
    noise_sigma: float = Field(default=0.0, ge=0.0)
    outlier_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    translation_min: tuple[float, float, float] = (-0.3, -0.3, 2.0)
    translation_max: tuple[float, float, float] = (0.3, 0.3, 3.0)
    model_variant: ToyVariant = ToyVariant.BODY16

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_translation_box(self) -> "SyntheticConfig":
        if any(lo > hi for lo, hi in zip(self.translation_min, self.translation_max, strict=True)):
            raise ValueError("translation_min должен быть <= translation_max покомпонентно")
        if self.translation_min[2] <= 0.0:
            raise ValueError("смещение по z должно быть > 0 (тело перед камерой)")
        return self


class Table3Config(BaseModel):
    """Сравнение регрессионной заглушки и оптимизационной подгонки"""

    num_frames: int = Field(default=64, ge=32)
    perturbation: float = Field(default=0.4, gt=0.0, description="Угол возмущения позы, рад")

    model_config = ConfigDict(extra="forbid", frozen=True)


class HarnessConfig(BaseModel):
    """
    Конфигурация одного запуска CLI

    Читается из JSON (--config), флаги CLI переопределяют отдельные поля.
    Дайджест этого объекта встраивается в каждый отчёт.

    Attributes:
        synthetic: Генерация датасета
        fit: Подгонка псевдо-GT
        losses: Веса составной потери
        patches: Сетка патчей развёртки
        table3: Сравнение регрессии и оптимизации
        mask: Маска суставов оценки: имена блоков и/или индексы через запятую
    """

    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    losses: LossWeights = Field(default_factory=LossWeights)
    patches: PatchGridConfig = Field(default_factory=PatchGridConfig)
    table3: Table3Config = Field(default_factory=Table3Config)
    mask: str | None = Field(default=None, description="Например 'body' или '0,1,2'")

    model_config = ConfigDict(extra="forbid", frozen=True)


def apply_overrides(
    config: HarnessConfig, overrides: dict[str, dict[str, Any]]
) -> HarnessConfig:
    """
    Переопределить поля конфигурации и заново провалидировать результат

    Args:
        config: Исходная конфигурация
        overrides: Раздел → {поле: значение}; значения None пропускаются,
            раздел "" означает поля верхнего уровня

    Raises:
        pydantic.ValidationError: Итоговая конфигурация некорректна
    """
    data = config.model_dump()
    for section, fields in overrides.items():
        target = data if section == "" else data[section]
        for name, value in fields.items():
            if value is not None:
                target[name] = value
    return HarnessConfig.model_validate(data)


def resolve_mask(mask: str | None, model: BodyModelDef) -> tuple[int, ...] | None:
    """
    Разобрать маску суставов

    Элементы через запятую: имя блока (body, lhand, rhand, jaw) или индекс.

    Raises:
        EmptyMask: Маска не выбирает ни одного сустава
        ValueError: Неизвестный элемент или индекс вне диапазона
    """
    if mask is None:
        return None
    indices: list[int] = []
    for token in (part.strip() for part in mask.split(",")):
        if not token:
            continue
        if token in ("body", "lhand", "rhand", "jaw"):
            start, stop = model.layout.block(token)
            indices.extend(range(start, stop))
            continue
        try:
            index = int(token)
        except ValueError as exc:
            raise ValueError(f"mask: неизвестный элемент '{token}'") from exc
        if not 0 <= index < model.joint_count:
            raise ValueError(f"mask: индекс {index} вне 0..{model.joint_count - 1}")
        indices.append(index)
    unique = tuple(sorted(set(indices)))
    if not unique:
        raise EmptyMask()
    return unique


def _timestamp() -> str:
    return datetime.now(UTC).isoformat(timespec="seconds")


def file_digest(path: Path | str) -> str:
    """SHA-256 содержимого файла"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ==================== ДАТАСЕТ ====================


class DatasetHeader(BaseModel):
    """Первая строка JSON-lines датасета: провенанс и параметры генерации"""

    format_version: str = DATASET_FORMAT
    camera_ref: str
    camera_digest: str
    model_ref: str
    model_digest: str
    config_digest: str
    synthetic: SyntheticConfig
    num_frames: int
    resampled_total: int

    model_config = ConfigDict(extra="forbid", frozen=True)


class FrameRecord(BaseModel):
    """
    Кадр датасета

    Attributes:
        frame_id: Номер кадра
        gt_params: Истинные параметры генератора
        gt_joints_3d: J*_3D — суставы J×3 в системе камеры с шумом и выбросами (м)
        gt_joints_2d: J*_2D — проекции gt_joints_3d (пиксели)
        noise_sigma: Шум суставов (м)
        camera_ref: Ссылка на калибровку
        outlier_joints: Индексы суставов со смещением-выбросом
        resampled: Сколько раз кадр пересэмплирован из-за суставов за камерой
    """

    frame_id: int
    gt_params: PoseShapeRecord
    gt_joints_3d: list[tuple[float, float, float]]
    gt_joints_2d: list[tuple[float, float]]
    noise_sigma: float
    camera_ref: str
    outlier_joints: list[int] = Field(default_factory=list)
    resampled: int = 0

    model_config = ConfigDict(extra="forbid", frozen=True)


@dataclass(frozen=True)
class Dataset:
    """Загруженный датасет: заголовок, кадры и дайджест файла"""

    header: DatasetHeader
    frames: tuple[FrameRecord, ...]
    digest: str

    def frame(self, frame_id: int) -> FrameRecord:
        for record in self.frames:
            if record.frame_id == frame_id:
                return record
        raise ValueError(f"кадр {frame_id} отсутствует в датасете")


def resolve_camera(calibration: Path | str | None) -> tuple[FisheyeCamera, str]:
    """Камера и её ссылка: файл калибровки или эталонная игрушечная камера"""
    if calibration is None:
        return make_toy_camera(), TOY_CAMERA_REF
    return load_calibration(calibration), str(calibration)


def resolve_model(
    model_path: Path | str | None, variant: ToyVariant | str = ToyVariant.BODY16
) -> tuple[BodyModelDef, str]:
    """Модель и её ссылка: JSON-файл модели или игрушечный вариант"""
    if model_path is None:
        return make_toy_model(variant), f"{TOY_MODEL_PREFIX}{ToyVariant(variant).value}"
    return load_model(model_path), str(model_path)


def dataset_context(
    header: DatasetHeader,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
) -> tuple[FisheyeCamera, BodyModelDef]:
    """
    Восстановить камеру и модель по ссылкам заголовка (или по явным путям)

    Raises:
        InvariantViolation: Дайджест камеры или модели не совпал с заголовком
    """
    camera_ref = calibration if calibration is not None else header.camera_ref
    camera = (
        make_toy_camera() if camera_ref == TOY_CAMERA_REF else load_calibration(camera_ref)
    )
    if camera.digest() != header.camera_digest:
        raise InvariantViolation("camera_digest", f"{camera_ref} не совпадает с датасетом")

    model_ref = str(model_path) if model_path is not None else header.model_ref
    if model_ref.startswith(TOY_MODEL_PREFIX):
        model = make_toy_model(model_ref.removeprefix(TOY_MODEL_PREFIX))
    else:
        model = load_model(model_ref)
    if model.digest() != header.model_digest:
        raise InvariantViolation("model_digest", f"{model_ref} не совпадает с датасетом")
    return camera, model


def _generate_frame(
    frame_id: int,
    config: SyntheticConfig,
    camera: FisheyeCamera,
    camera_ref: str,
    model: BodyModelDef,
) -> FrameRecord:
    """Один кадр; все случайные величины берутся из генератора кадра"""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, frame_id]))
    count = model.joint_count
    behind = np.empty(0, dtype=np.int64)
    for attempt in range(MAX_RESAMPLES):
        pose = rng.uniform(-config.pose_scale, config.pose_scale, size=3 * count)
        beta = rng.standard_normal(model.shape_dim) * config.shape_scale
        translation = rng.uniform(config.translation_min, config.translation_max)
        noise = rng.standard_normal((count, 3)) * config.noise_sigma
        is_outlier = rng.random(count) < config.outlier_rate
        directions = rng.standard_normal((count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        magnitudes = rng.uniform(*OUTLIER_RANGE, size=count)

        params = PoseShapeParams.from_full_pose(model, pose, beta, translation)
        joints = forward_kinematics(model, params) + noise
        joints[is_outlier] += directions[is_outlier] * magnitudes[is_outlier, None]

        behind = np.flatnonzero(joints[:, 2] <= 0.0)
        if behind.size:
            logger.warning(
                "Кадр %d: сустав %d за камерой, пересэмплирование (%d)",
                frame_id,
                int(behind[0]),
                attempt + 1,
            )
            continue
        pixels = camera.project(joints)
        return FrameRecord(
            frame_id=frame_id,
            gt_params=params.to_record(),
            gt_joints_3d=[(x, y, z) for x, y, z in joints.tolist()],
            gt_joints_2d=[(u, v) for u, v in pixels.tolist()],
            noise_sigma=config.noise_sigma,
            camera_ref=camera_ref,
            outlier_joints=np.flatnonzero(is_outlier).tolist(),
            resampled=attempt,
        )
    raise JointBehindCamera(frame_id, int(behind[0]))


def generate_frames(
    config: SyntheticConfig,
    camera: FisheyeCamera,
    model: BodyModelDef,
    camera_ref: str = TOY_CAMERA_REF,
    jobs: int = 1,
    progress: bool = False,
) -> list[FrameRecord]:
    """
    Сгенерировать кадры; порядок и содержимое не зависят от jobs

    Raises:
        JointBehindCamera: Кадр не удалось пересэмплировать
    """
    frame_ids = range(config.num_frames)

    def make(frame_id: int) -> FrameRecord:
        return _generate_frame(frame_id, config, camera, camera_ref, model)

    with tqdm(total=config.num_frames, disable=not progress, desc="gen", unit="кадр") as bar:
        if jobs <= 1:
            frames = []
            for frame_id in frame_ids:
                frames.append(make(frame_id))
                bar.update()
            return frames
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            frames = []
            for frame in pool.map(make, frame_ids):
                frames.append(frame)
                bar.update()
            return frames


def gen_synthetic(
    config: SyntheticConfig,
    out_path: Path | str,
    *,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> DatasetHeader:
    """
    Сгенерировать синтетический датасет в JSON-lines

    Первая строка — заголовок с дайджестами камеры, модели и конфигурации,
    далее по кадру на строку. Одинаковые входы дают байт-в-байт одинаковый файл.

    Args:
        config: Параметры генерации
        out_path: Путь к файлу датасета
        calibration: Файл калибровки (по умолчанию игрушечная камера)
        model_path: Файл модели (по умолчанию config.model_variant)
        jobs: Число потоков
        progress: Показывать прогресс tqdm

    Returns:
        Заголовок записанного датасета

    Raises:
        JointBehindCamera: Кадр не удалось пересэмплировать
        ParseError: Калибровка или модель не читаются
    """
    camera, camera_ref = resolve_camera(calibration)
    model, model_ref = resolve_model(model_path, config.model_variant)
    frames = generate_frames(config, camera, model, camera_ref, jobs, progress)
    header = DatasetHeader(
        camera_ref=camera_ref,
        camera_digest=camera.digest(),
        model_ref=model_ref,
        model_digest=model.digest(),
        config_digest=digest_of(config),
        synthetic=config,
        num_frames=len(frames),
        resampled_total=sum(frame.resampled for frame in frames),
    )
    lines = [header.model_dump_json()] + [frame.model_dump_json() for frame in frames]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(
        "Датасет %s: %d кадров, пересэмплировано %d",
        out_path,
        header.num_frames,
        header.resampled_total,
    )
    return header


def load_dataset(path: Path | str) -> Dataset:
    """
    Прочитать JSON-lines датасет

    Raises:
        ParseError: Файл не читается, пуст, строка не проходит схему или
            число кадров не совпадает с заголовком
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, f"не удалось прочитать файл: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(path, "пустой файл датасета")
    header = parse_json_text(lines[0], DatasetHeader, path, line=1)
    if header.format_version != DATASET_FORMAT:
        raise ParseError(path, f"неизвестный формат {header.format_version}", line=1)
    frames = tuple(
        parse_json_text(line, FrameRecord, path, line=number)
        for number, line in enumerate(lines[1:], start=2)
        if line.strip()
    )
    if len(frames) != header.num_frames:
        raise ParseError(path, f"ожидалось {header.num_frames} кадров, найдено {len(frames)}")
    return Dataset(
        header=header,
        frames=frames,
        digest=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


# ==================== ПОДГОНКА И ОЦЕНКА ====================


class FrameFitEntry(BaseModel):
    """Результат подгонки кадра либо причина ошибки"""

    frame_id: int
    fit: FitRecord | None = None
    error: str | None = None

    model_config = ConfigDict(extra="forbid", frozen=True)


class FitResultsFile(BaseModel):
    """Файл результатов подгонки"""

    format_version: str = RESULTS_FORMAT
    created_at: str
    dataset_digest: str
    model_digest: str
    config_digest: str
    fit_config: FitConfig
    frames: list[FrameFitEntry]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def failed(self) -> int:
        return sum(entry.fit is None for entry in self.frames)


def run_fit(
    dataset_path: Path | str,
    config: HarnessConfig,
    out_path: Path | str,
    *,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> FitResultsFile:
    """
    Подогнать псевдо-GT для каждого кадра датасета и записать результаты

    Ошибки отдельных кадров записываются с причиной; вызывающий код
    решает, считать ли запуск неудачным (все кадры с ошибкой).

    Raises:
        ParseError: Датасет не читается
        InvariantViolation: Камера или модель не совпадают с датасетом
    """
    dataset = load_dataset(dataset_path)
    _, model = dataset_context(dataset.header, calibration, model_path)
    targets = [np.asarray(frame.gt_joints_3d, dtype=np.float64) for frame in dataset.frames]
    outcomes = batch_fit(model, targets, config.fit, jobs=jobs, progress=progress)

    entries = []
    for frame, outcome in zip(dataset.frames, outcomes, strict=True):
        if isinstance(outcome, FitFailure):
            entries.append(FrameFitEntry(frame_id=frame.frame_id, error=outcome.reason))
        else:
            entries.append(FrameFitEntry(frame_id=frame.frame_id, fit=outcome.to_record()))

    results = FitResultsFile(
        created_at=_timestamp(),
        dataset_digest=dataset.digest,
        model_digest=model.digest(),
        config_digest=digest_of(config),
        fit_config=config.fit,
        frames=entries,
    )
    write_json_file(out_path, results)
    logger.info("Подгонка: %d кадров, ошибок %d", len(entries), results.failed)
    return results


class FailureRecord(BaseModel):
    """Кадр, пропущенный при оценке"""

    frame_id: int
    reason: str

    model_config = ConfigDict(extra="forbid", frozen=True)


class EvalReport(BaseModel):
    """
    Отчёт PA-оценки

    Сводки mean/median пересчитываются из rows; created_at не входит в дайджесты.
    mask ограничивает только PA-MPJPE; PA-MPVPE считается по всем вершинам.
    """

    method: str
    seed: int
    config_digest: str
    dataset_digest: str
    created_at: str
    mask: list[int] | None
    rows: list[MetricRow]
    pa_mpjpe: MetricSummary
    pa_mpvpe: MetricSummary
    failures: list[FailureRecord]

    model_config = ConfigDict(extra="forbid", frozen=True)


def _frame_metrics(
    model: BodyModelDef,
    fitted: PoseShapeParams,
    truth: PoseShapeParams,
    mask: tuple[int, ...] | None,
) -> tuple[float, float]:
    pred_joints = forward_kinematics(model, fitted)
    gt_joints = forward_kinematics(model, truth)
    if mask is not None:
        pred_joints, gt_joints = pred_joints[list(mask)], gt_joints[list(mask)]
    mpjpe = pa_mpjpe(pred_joints, gt_joints)
    mpvpe = pa_mpvpe(skin_vertices(model, fitted), skin_vertices(model, truth))
    return mpjpe, mpvpe


def run_eval(
    results_path: Path | str,
    dataset_path: Path | str,
    config: HarnessConfig,
    out_prefix: Path | str,
    *,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
    method: str = "optimization",
    jobs: int = 1,
    progress: bool = False,
) -> EvalReport:
    """
    PA-MPJPE и PA-MPVPE подогнанных параметров против истинных параметров генератора

    Суставы и вершины восстанавливаются из параметров прямой кинематикой
    и скиннингом. Маска ограничивает только суставы: PA-MPJPE выравнивается
    и усредняется по подмножеству, а PA-MPVPE всегда считается по всей сетке.
    Кадры оцениваются независимо; порядок строк и содержимое отчёта
    не зависят от jobs. Пишет {out_prefix}.json и {out_prefix}.csv.

    Raises:
        ParseError: Результаты или датасет не читаются
        InvariantViolation: Результаты получены на другом датасете
    """
    dataset = load_dataset(dataset_path)
    results = read_json_file(results_path, FitResultsFile)
    if results.dataset_digest != dataset.digest:
        raise InvariantViolation("dataset_digest", "результаты получены на другом датасете")
    _, model = dataset_context(dataset.header, calibration, model_path)
    mask = resolve_mask(config.mask, model)

    if jobs < 1:
        raise ValueError(f"run_eval: jobs должно быть >= 1, получено {jobs}")
    entries = {entry.frame_id: entry for entry in results.frames}

    def score(frame: FrameRecord) -> MetricRow | FailureRecord:
        entry = entries.get(frame.frame_id)
        if entry is None or entry.fit is None:
            reason = "нет результата подгонки" if entry is None else str(entry.error)
            return FailureRecord(frame_id=frame.frame_id, reason=reason)
        try:
            mpjpe, mpvpe = _frame_metrics(
                model,
                PoseShapeParams.from_record(entry.fit.params),
                PoseShapeParams.from_record(frame.gt_params),
                mask,
            )
        except EgoplexError as exc:
            logger.warning("Кадр %d пропущен при оценке: %s", frame.frame_id, exc)
            return FailureRecord(frame_id=frame.frame_id, reason=str(exc))
        return MetricRow(frame_id=frame.frame_id, pa_mpjpe_mm=mpjpe, pa_mpvpe_mm=mpvpe)

    outcomes: list[MetricRow | FailureRecord] = []
    with tqdm(total=len(dataset.frames), disable=not progress, desc="eval", unit="кадр") as bar:
        if jobs == 1:
            for frame in dataset.frames:
                outcomes.append(score(frame))
                bar.update()
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for outcome in pool.map(score, dataset.frames):
                    outcomes.append(outcome)
                    bar.update()
    rows = [outcome for outcome in outcomes if isinstance(outcome, MetricRow)]
    failures = [outcome for outcome in outcomes if isinstance(outcome, FailureRecord)]

    report = EvalReport(
        method=method,
        seed=dataset.header.synthetic.seed,
        config_digest=digest_of(config),
        dataset_digest=dataset.digest,
        created_at=_timestamp(),
        mask=list(mask) if mask is not None else None,
        rows=rows,
        pa_mpjpe=summarize([row.pa_mpjpe_mm for row in rows if row.pa_mpjpe_mm is not None], len(failures)),
        pa_mpvpe=summarize([row.pa_mpvpe_mm for row in rows if row.pa_mpvpe_mm is not None], len(failures)),
        failures=failures,
    )
    write_json_file(Path(f"{out_prefix}.json"), report)
    write_metric_csv(rows, Path(f"{out_prefix}.csv"))
    logger.info(
        "Оценка: %d кадров, PA-MPJPE %.3f мм, пропущено %d",
        len(rows),
        report.pa_mpjpe.mean if report.pa_mpjpe.mean is not None else float("nan"),
        len(failures),
    )
    return report


# ==================== РЕГРЕССИЯ ПРОТИВ ОПТИМИЗАЦИИ ====================


class Table3Row(BaseModel):
    """PA-MPJPE кадра для обоих методов"""

    frame_id: int
    regression_mm: float
    optimization_mm: float | None

    model_config = ConfigDict(extra="forbid", frozen=True)


class Table3Report(BaseModel):
    """
    Сравнение регрессионной заглушки с оптимизационной подгонкой

    reference_mm — опубликованные значения на реальных данных, приводятся
    только как контекст и не воспроизводятся.
    """

    seed: int
    num_frames: int
    perturbation: float
    config_digest: str
    created_at: str
    reference_mm: dict[str, float]
    rows: list[Table3Row]
    regression: MetricSummary
    optimization: MetricSummary
    relative_reduction: float | None
    failures: list[FailureRecord]

    model_config = ConfigDict(extra="forbid", frozen=True)


def regression_stand_in(
    model: BodyModelDef,
    truth: PoseShapeParams,
    perturbation: float,
    seed: int,
    frame_id: int,
) -> PoseShapeParams:
    """
    «Регрессор», не видевший GT суставов: к каждому суставу тела добавляется
    поворот фиксированной величины perturbation вокруг случайной оси
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, frame_id, 1]))
    axes = rng.standard_normal((model.layout.size("body"), 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return PoseShapeParams(
        theta_body=truth.theta_body + perturbation * axes.reshape(-1),
        theta_lhand=truth.theta_lhand,
        theta_rhand=truth.theta_rhand,
        theta_jaw=truth.theta_jaw,
        beta=truth.beta,
        translation=truth.translation,
    )


def run_table3_analogue(
    config: HarnessConfig,
    out_path: Path | str,
    *,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> Table3Report:
    """
    Аналог сравнения «регрессия против оптимизации» на синтетических кадрах

    Метод A — истинные параметры с возмущением позы (регрессионная заглушка),
    метод B — подгонка к GT 3D суставам. Оба сравниваются с истинными
    суставами генератора по PA-MPJPE.

    Raises:
        JointBehindCamera: Кадр не удалось сгенерировать
    """
    synthetic = config.synthetic.model_copy(update={"num_frames": config.table3.num_frames})
    camera, camera_ref = resolve_camera(calibration)
    model, _ = resolve_model(model_path, synthetic.model_variant)
    frames = generate_frames(synthetic, camera, model, camera_ref, jobs, progress)
    targets = [np.asarray(frame.gt_joints_3d, dtype=np.float64) for frame in frames]
    outcomes = batch_fit(model, targets, config.fit, jobs=jobs, progress=progress)

    rows: list[Table3Row] = []
    failures: list[FailureRecord] = []
    for frame, outcome in zip(frames, outcomes, strict=True):
        truth = PoseShapeParams.from_record(frame.gt_params)
        gt_joints = forward_kinematics(model, truth)
        regressed = regression_stand_in(
            model, truth, config.table3.perturbation, synthetic.seed, frame.frame_id
        )
        regression_mm = pa_mpjpe(forward_kinematics(model, regressed), gt_joints)
        optimization_mm: float | None = None
        if isinstance(outcome, FitResult):
            optimization_mm = pa_mpjpe(forward_kinematics(model, outcome.params), gt_joints)
        else:
            failures.append(FailureRecord(frame_id=frame.frame_id, reason=outcome.reason))
        rows.append(
            Table3Row(
                frame_id=frame.frame_id,
                regression_mm=regression_mm,
                optimization_mm=optimization_mm,
            )
        )

    regression = summarize([row.regression_mm for row in rows])
    optimization = summarize(
        [row.optimization_mm for row in rows if row.optimization_mm is not None], len(failures)
    )
    reduction = None
    if regression.mean and optimization.mean is not None:
        reduction = 1.0 - optimization.mean / regression.mean
    report = Table3Report(
        seed=synthetic.seed,
        num_frames=synthetic.num_frames,
        perturbation=config.table3.perturbation,
        config_digest=digest_of(config),
        created_at=_timestamp(),
        reference_mm=dict(TABLE3_REFERENCE_MM),
        rows=rows,
        regression=regression,
        optimization=optimization,
        relative_reduction=reduction,
        failures=failures,
    )
    write_json_file(out_path, report)
    logger.info(
        "Регрессия %.2f мм, оптимизация %s мм",
        regression.mean or 0.0,
        f"{optimization.mean:.2f}" if optimization.mean is not None else "—",
    )
    return report


# ==================== РАЗВЁРТКА ====================


class UndistortSummary(BaseModel):
    """Итог развёртки: пути файлов и размер сетки"""

    mosaic_path: str
    sidecar_path: str
    grid_shape: tuple[int, int]
    num_patches: int
    mean_clamped_fraction: float

    model_config = ConfigDict(extra="forbid", frozen=True)


def run_undistort(
    image_path: Path | str,
    config: HarnessConfig,
    out_prefix: Path | str,
    *,
    calibration: Path | str | None = None,
    crop: int = 0,
) -> UndistortSummary:
    """
    Развернуть изображение в мозаику патчей и JSON-сайдкар

    Пишет {out_prefix}_mosaic.pgm (или .ppm для RGB) и {out_prefix}_patches.json;
    при ошибке частично записанные файлы удаляются.

    Raises:
        ParseError: Изображение или калибровка не читаются
        ShapeMismatch: Размер изображения не совпадает с калибровкой
        InvalidCrop: Обрезка удаляет все столбцы
    """
    camera, _ = resolve_camera(calibration)
    image = load_image(image_path)
    suffix = "ppm" if image.ndim == 3 else "pgm"
    mosaic_path = Path(f"{out_prefix}_mosaic.{suffix}")
    sidecar_path = Path(f"{out_prefix}_patches.json")
    try:
        patch_set = crop_boundary(generate_patches(image, camera, config.patches), crop)
        save_mosaic(patch_set, mosaic_path)
        save_sidecar(patch_set, config.patches, camera, sidecar_path)
    except BaseException:
        mosaic_path.unlink(missing_ok=True)
        sidecar_path.unlink(missing_ok=True)
        raise
    return UndistortSummary(
        mosaic_path=str(mosaic_path),
        sidecar_path=str(sidecar_path),
        grid_shape=patch_set.grid_shape,
        num_patches=patch_set.num_patches,
        mean_clamped_fraction=float(patch_set.clamped_fraction.mean()),
    )


# ==================== ДЕМОНСТРАЦИЯ ПОТЕРЬ ====================


class LossTermRecord(BaseModel):
    value: float
    weight: float

    model_config = ConfigDict(extra="forbid", frozen=True)


class LossBreakdownRecord(BaseModel):
    total: float
    terms: dict[str, LossTermRecord]

    model_config = ConfigDict(extra="forbid", frozen=True)


class LossesDemoReport(BaseModel):
    """Разложение составной потери для GT кадра и его возмущённой копии"""

    frame_id: int
    seed: int
    tau: float
    progress: float
    prior_weight: float
    config_digest: str
    created_at: str
    against_self: LossBreakdownRecord
    perturbed: LossBreakdownRecord

    model_config = ConfigDict(extra="forbid", frozen=True)


def _perturbed_copy(
    model: BodyModelDef, truth: PoseShapeParams, magnitude: float, seed: int, frame_id: int
) -> PoseShapeParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, frame_id, 2]))
    axes = rng.standard_normal((model.joint_count, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    pose = truth.full_pose() + magnitude * axes.reshape(-1)
    beta = truth.beta + magnitude * rng.standard_normal(model.shape_dim)
    translation = truth.translation + 0.05 * rng.standard_normal(3)
    return PoseShapeParams.from_full_pose(model, pose, beta, translation)


def _breakdown_record(
    model: BodyModelDef,
    camera: FisheyeCamera,
    prediction: PoseShapeParams,
    frame: FrameRecord,
    tau: float,
    noise: FloatArray,
    weights: LossWeights,
    progress: float,
    mask: Sequence[int] | None,
) -> LossBreakdownRecord:
    inputs = LossInputs(
        model=model,
        camera=camera,
        pose=torch.from_numpy(prediction.full_pose().copy()),
        beta=torch.from_numpy(prediction.beta.copy()),
        translation=torch.from_numpy(prediction.translation.copy()),
        target=PoseShapeParams.from_record(frame.gt_params),
        gt_joints_3d=np.asarray(frame.gt_joints_3d, dtype=np.float64),
        gt_joints_2d=np.asarray(frame.gt_joints_2d, dtype=np.float64),
        tau=tau,
        noise=noise,
        mask=mask,
    )
    with torch.no_grad():
        _, breakdown = total_loss(inputs, weights, progress)
    return LossBreakdownRecord.model_validate(breakdown.to_dict())


def run_losses_demo(
    dataset_path: Path | str,
    frame_id: int,
    config: HarnessConfig,
    out_path: Path | str,
    *,
    tau: float | None = None,
    progress: float = 0.0,
    perturbation: float = 0.1,
    calibration: Path | str | None = None,
    model_path: Path | str | None = None,
) -> LossesDemoReport:
    """
    Все члены составной потери для GT параметров кадра против самих себя
    и против возмущённой копии

    Шум приора и возмущение берутся из генераторов, засеянных
    (seed, frame_id); если tau не задан, он сэмплируется из U[0.05, 0.5].

    Raises:
        ValueError: Кадра нет в датасете или progress вне [0, 1]
    """
    dataset = load_dataset(dataset_path)
    camera, model = dataset_context(dataset.header, calibration, model_path)
    frame = dataset.frame(frame_id)
    seed = config.synthetic.seed
    mask = resolve_mask(config.mask, model)

    sampler = PriorNoiseSampler(np.random.SeedSequence([seed, frame_id]), 3 * model.joint_count)
    sampled_tau, noise = sampler.sample()
    tau_value = sampled_tau if tau is None else tau
    truth = PoseShapeParams.from_record(frame.gt_params)
    perturbed = _perturbed_copy(model, truth, perturbation, seed, frame_id)

    report = LossesDemoReport(
        frame_id=frame_id,
        seed=seed,
        tau=tau_value,
        progress=progress,
        prior_weight=prior_weight(config.losses, progress),
        config_digest=digest_of(config),
        created_at=_timestamp(),
        against_self=_breakdown_record(
            model, camera, truth, frame, tau_value, noise, config.losses, progress, mask
        ),
        perturbed=_breakdown_record(
            model, camera, perturbed, frame, tau_value, noise, config.losses, progress, mask
        ),
    )
    write_json_file(out_path, report)
    return report
