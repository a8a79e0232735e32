"""Минимальная параметрическая модель тела: дерево суставов, блендшейпы формы, LBS"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import torch

from egoplex.exceptions import InvariantViolation, UnboundParams, UnknownVariant
from egoplex.internal.rotation import axis_angle_to_matrix
from egoplex.internal.schemas import (
    BodyLayoutFile,
    BodyModelFile,
    PoseShapeRecord,
    digest_of,
    read_json_file,
    write_json_file,
)
from egoplex.internal.toy_models import build_toy_model
from egoplex.internal.types import FloatArray, IntArray, ToyVariant

logger = logging.getLogger(__name__)

_WEIGHT_SUM_TOL = 1e-9
_BLOCKS = ("body", "lhand", "rhand", "jaw")


def _frozen(values: npt.ArrayLike, dtype: type = np.float64) -> npt.NDArray:
    """Копия массива только для чтения"""
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BodyLayout:
    """
    Раскладка суставов по блокам позы

    Блоки идут подряд: body (начиная с корня 0) → lhand → rhand → jaw.
    Каждый блок — полуинтервал индексов суставов [start, stop);
    пустой блок (start == stop) означает отсутствие части тела.
    """

    body: tuple[int, int]
    lhand: tuple[int, int]
    rhand: tuple[int, int]
    jaw: tuple[int, int]

    def block(self, name: str) -> tuple[int, int]:
        """Диапазон блока по имени"""
        return getattr(self, name)

    def size(self, name: str) -> int:
        """Число суставов в блоке"""
        start, stop = self.block(name)
        return stop - start


class _ModelTensors(NamedTuple):
    template_joints: torch.Tensor
    template_vertices: torch.Tensor
    skinning_weights: torch.Tensor
    shape_dirs_joints: torch.Tensor
    shape_dirs_vertices: torch.Tensor


@dataclass(frozen=True, eq=False)
class BodyModelDef:
    """
    Определение артикулированной параметрической модели тела

    Математически повторяет структуру SMPL-X без поз-корректирующих
    блендшейпов: дерево суставов, линейные блендшейпы формы и линейный
    blend skinning. Все массивы хранятся копиями только для чтения.

    Attributes:
        parents: Родитель каждого сустава (-1 для корня)
        template_joints: J×3 суставы в покое (м)
        template_vertices: V×3 вершины в покое (м)
        skinning_weights: V×J веса скиннинга
        shape_dirs_joints: J×3×B базис формы суставов
        shape_dirs_vertices: V×3×B базис формы вершин
        joint_names: Имена суставов
        layout: Раскладка блоков позы

    Raises:
        InvariantViolation: Цикл или несколько корней в дереве, веса не
            нормированы, размерности базиса формы не согласованы
    """

    parents: IntArray
    template_joints: FloatArray
    template_vertices: FloatArray
    skinning_weights: FloatArray
    shape_dirs_joints: FloatArray
    shape_dirs_vertices: FloatArray
    joint_names: tuple[str, ...]
    layout: BodyLayout
    _order: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in (
            "template_joints",
            "template_vertices",
            "skinning_weights",
            "shape_dirs_joints",
            "shape_dirs_vertices",
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "parents", _frozen(self.parents, np.int64))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        self._check_shapes()
        object.__setattr__(self, "_order", self._topological_order())
        self._check_weights()
        self._check_layout()

    # ==================== ИНВАРИАНТЫ ====================

    def _check_shapes(self) -> None:
        joints = self.parents.shape[0]
        vertices = self.template_vertices.shape[0]
        if self.template_joints.shape != (joints, 3):
            raise InvariantViolation("template_joints_shape", str(self.template_joints.shape))
        if self.template_vertices.ndim != 2 or self.template_vertices.shape[1] != 3:
            raise InvariantViolation(
                "template_vertices_shape", str(self.template_vertices.shape)
            )
        if self.skinning_weights.shape != (vertices, joints):
            raise InvariantViolation(
                "skinning_weights_shape", str(self.skinning_weights.shape)
            )
        if len(self.joint_names) != joints:
            raise InvariantViolation("joint_names_length", str(len(self.joint_names)))
        if self.shape_dirs_joints.ndim != 3 or self.shape_dirs_joints.shape[:2] != (joints, 3):
            raise InvariantViolation(
                "shape_dirs_joints_shape", str(self.shape_dirs_joints.shape)
            )
        if self.shape_dirs_vertices.shape != (
            vertices,
            3,
            self.shape_dirs_joints.shape[2],
        ):
            raise InvariantViolation(
                "shape_basis_consistent",
                f"{self.shape_dirs_vertices.shape} vs {self.shape_dirs_joints.shape}",
            )

    def _topological_order(self) -> tuple[int, ...]:
        """Порядок обхода «родитель раньше потомка»; проверяет единственность корня и ацикличность"""
        count = self.parents.shape[0]
        roots = [j for j in range(count) if self.parents[j] == -1]
        if len(roots) != 1:
            raise InvariantViolation("single_root", f"корней: {len(roots)}")
        if any(not (-1 <= p < count) for p in self.parents.tolist()):
            raise InvariantViolation("parents_in_range")

        children: dict[int, list[int]] = {j: [] for j in range(count)}
        for j, parent in enumerate(self.parents.tolist()):
            if parent >= 0:
                children[parent].append(j)
        order: list[int] = []
        stack = [roots[0]]
        while stack:
            joint = stack.pop()
            order.append(joint)
            stack.extend(reversed(children[joint]))
        if len(order) != count:
            raise InvariantViolation("acyclic_parents", "не все суставы достижимы из корня")
        return tuple(order)

    def _check_weights(self) -> None:
        if np.any(self.skinning_weights < 0.0):
            raise InvariantViolation("skinning_weights_non_negative")
        sums = self.skinning_weights.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > _WEIGHT_SUM_TOL)
        if bad.size:
            raise InvariantViolation(
                "skinning_rows_sum_to_one",
                f"вершина {int(bad[0])}: сумма {float(sums[bad[0]])}",
            )

    def _check_layout(self) -> None:
        expected_start = 0
        for name in _BLOCKS:
            start, stop = self.layout.block(name)
            if start != expected_start or stop < start:
                raise InvariantViolation("layout_contiguous", f"блок {name}: {start}..{stop}")
            expected_start = stop
        if expected_start != self.joint_count:
            raise InvariantViolation(
                "layout_covers_joints", f"{expected_start} != {self.joint_count}"
            )
        if self.layout.size("body") < 1:
            raise InvariantViolation("layout_has_root")
        if self.layout.size("jaw") > 1:
            raise InvariantViolation("layout_single_jaw_joint")

    # ==================== СВОЙСТВА ====================

    @property
    def joint_count(self) -> int:
        return int(self.parents.shape[0])

    @property
    def vertex_count(self) -> int:
        return int(self.template_vertices.shape[0])

    @property
    def shape_dim(self) -> int:
        return int(self.shape_dirs_joints.shape[2])

    @property
    def order(self) -> tuple[int, ...]:
        """Топологический порядок суставов (корень первым)"""
        return self._order

    @cached_property
    def tensors(self) -> _ModelTensors:
        """float64 тензоры модели для дифференцируемых вычислений"""
        return _ModelTensors(
            template_joints=torch.from_numpy(self.template_joints.copy()),
            template_vertices=torch.from_numpy(self.template_vertices.copy()),
            skinning_weights=torch.from_numpy(self.skinning_weights.copy()),
            shape_dirs_joints=torch.from_numpy(self.shape_dirs_joints.copy()),
            shape_dirs_vertices=torch.from_numpy(self.shape_dirs_vertices.copy()),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BodyModelDef):
            return NotImplemented
        return (
            self.joint_names == other.joint_names
            and self.layout == other.layout
            and np.array_equal(self.parents, other.parents)
            and np.array_equal(self.template_joints, other.template_joints)
            and np.array_equal(self.template_vertices, other.template_vertices)
            and np.array_equal(self.skinning_weights, other.skinning_weights)
            and np.array_equal(self.shape_dirs_joints, other.shape_dirs_joints)
            and np.array_equal(self.shape_dirs_vertices, other.shape_dirs_vertices)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_file(self) -> BodyModelFile:
        """Представление модели в виде схемы файла"""
        return BodyModelFile(
            parents=self.parents.tolist(),
            template_joints=[tuple(row) for row in self.template_joints.tolist()],
            template_vertices=[tuple(row) for row in self.template_vertices.tolist()],
            skinning_weights=self.skinning_weights.tolist(),
            shape_dirs_joints=self.shape_dirs_joints.tolist(),
            shape_dirs_vertices=self.shape_dirs_vertices.tolist(),
            joint_names=list(self.joint_names),
            layout=BodyLayoutFile(
                body=self.layout.body,
                lhand=self.layout.lhand,
                rhand=self.layout.rhand,
                jaw=self.layout.jaw,
            ),
        )

    def digest(self) -> str:
        """SHA-256 канонического JSON модели"""
        return digest_of(self.to_file())


@dataclass(frozen=True, eq=False)
class PoseShapeParams:
    """
    Параметры позы, формы и смещения

    Позы — векторы ось-угол (радианы), по 3 числа на сустав блока.
    Полная поза всего тела — конкатенация body, lhand, rhand, jaw.

    Attributes:
        theta_body: 3·J_body значений (включая корень)
        theta_lhand: 3·J_lhand значений (может быть пустым)
        theta_rhand: 3·J_rhand значений (может быть пустым)
        theta_jaw: 3 значения (пусто у моделей без челюсти)
        beta: B коэффициентов формы
        translation: Смещение t в системе камеры (м)
    """

    theta_body: FloatArray
    theta_lhand: FloatArray
    theta_rhand: FloatArray
    theta_jaw: FloatArray
    beta: FloatArray
    translation: FloatArray

    def __post_init__(self) -> None:
        for name in (
            "theta_body",
            "theta_lhand",
            "theta_rhand",
            "theta_jaw",
            "beta",
            "translation",
        ):
            object.__setattr__(self, name, _frozen(np.ravel(getattr(self, name))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseShapeParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("theta_body", "theta_lhand", "theta_rhand", "theta_jaw", "beta", "translation")
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def zeros(cls, model: BodyModelDef) -> "PoseShapeParams":
        """Нейтральная поза, нулевая форма и нулевое смещение для модели"""
        layout = model.layout
        return cls(
            theta_body=np.zeros(3 * layout.size("body")),
            theta_lhand=np.zeros(3 * layout.size("lhand")),
            theta_rhand=np.zeros(3 * layout.size("rhand")),
            theta_jaw=np.zeros(3 * layout.size("jaw")),
            beta=np.zeros(model.shape_dim),
            translation=np.zeros(3),
        )

    @classmethod
    def from_full_pose(
        cls,
        model: BodyModelDef,
        full_pose: npt.ArrayLike,
        beta: npt.ArrayLike,
        translation: npt.ArrayLike,
    ) -> "PoseShapeParams":
        """Разрезать полную позу (3·J) на блоки по раскладке модели"""
        pose = np.asarray(full_pose, dtype=np.float64).ravel()
        if pose.size != 3 * model.joint_count:
            raise UnboundParams("full_pose", 3 * model.joint_count, pose.size)
        blocks = {
            name: pose[3 * start : 3 * stop]
            for name in _BLOCKS
            for start, stop in [model.layout.block(name)]
        }
        return cls(
            theta_body=blocks["body"],
            theta_lhand=blocks["lhand"],
            theta_rhand=blocks["rhand"],
            theta_jaw=blocks["jaw"],
            beta=np.asarray(beta, dtype=np.float64),
            translation=np.asarray(translation, dtype=np.float64),
        )

    @classmethod
    def from_record(cls, record: PoseShapeRecord) -> "PoseShapeParams":
        """Параметры из JSON-записи"""
        return cls(
            theta_body=np.asarray(record.theta_body, dtype=np.float64),
            theta_lhand=np.asarray(record.theta_lhand, dtype=np.float64),
            theta_rhand=np.asarray(record.theta_rhand, dtype=np.float64),
            theta_jaw=np.asarray(record.theta_jaw, dtype=np.float64),
            beta=np.asarray(record.beta, dtype=np.float64),
            translation=np.asarray(record.translation, dtype=np.float64),
        )

    def to_record(self) -> PoseShapeRecord:
        """JSON-запись параметров без потери точности"""
        tx, ty, tz = self.translation.tolist()
        return PoseShapeRecord(
            theta_body=self.theta_body.tolist(),
            theta_lhand=self.theta_lhand.tolist(),
            theta_rhand=self.theta_rhand.tolist(),
            theta_jaw=self.theta_jaw.tolist(),
            beta=self.beta.tolist(),
            translation=(tx, ty, tz),
        )

    def full_pose(self) -> FloatArray:
        """θ = {θ_body, θ_lhand, θ_rhand, θ_jaw} одним вектором"""
        return np.concatenate(
            [self.theta_body, self.theta_lhand, self.theta_rhand, self.theta_jaw]
        )

    def check_bound(self, model: BodyModelDef) -> None:
        """
        Проверить соответствие размеров раскладке модели

        Raises:
            UnboundParams: Длина блока не совпадает с раскладкой
            InvariantViolation: Параметры содержат NaN/Inf
        """
        for name in _BLOCKS:
            expected = 3 * model.layout.size(name)
            actual = getattr(self, f"theta_{name}").size
            if actual != expected:
                raise UnboundParams(f"theta_{name}", expected, actual)
        if self.beta.size != model.shape_dim:
            raise UnboundParams("beta", model.shape_dim, self.beta.size)
        if self.translation.size != 3:
            raise UnboundParams("translation", 3, self.translation.size)
        if not np.all(np.isfinite(self.full_pose())) or not (
            np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.translation))
        ):
            raise InvariantViolation("params_finite")


# ==================== ДИФФЕРЕНЦИРУЕМОЕ ЯДРО ====================


def _world_transforms(
    model: BodyModelDef, pose: torch.Tensor, beta: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Мировые повороты и положения суставов без смещения t

    Returns:
        (повороты J×3×3, положения J×3, суставы формы в покое J×3)
    """
    tensors = model.tensors
    shaped = tensors.template_joints + torch.einsum(
        "jkb,b->jk", tensors.shape_dirs_joints, beta
    )
    local = axis_angle_to_matrix(pose.reshape(-1, 3))
    eye = torch.eye(3, dtype=local.dtype)

    # положение хранится как смещение от сустава покоя: в нулевой позе
    # все смещения ровно нулевые, и суставы совпадают с шаблоном бит-в-бит
    rotations: list[torch.Tensor | None] = [None] * model.joint_count
    offsets: list[torch.Tensor | None] = [None] * model.joint_count
    for joint in model.order:
        parent = int(model.parents[joint])
        if parent < 0:
            rotations[joint] = local[joint]
            offsets[joint] = torch.zeros(3, dtype=local.dtype)
            continue
        parent_rotation = rotations[parent]
        parent_offset = offsets[parent]
        assert parent_rotation is not None and parent_offset is not None
        rotations[joint] = parent_rotation @ local[joint]
        offsets[joint] = parent_offset + (parent_rotation - eye) @ (
            shaped[joint] - shaped[parent]
        )
    positions = shaped + torch.stack(offsets)  # type: ignore[arg-type]
    return torch.stack(rotations), positions, shaped  # type: ignore[arg-type]


def posed_joints(
    model: BodyModelDef,
    pose: torch.Tensor,
    beta: torch.Tensor,
    translation: torch.Tensor,
) -> torch.Tensor:
    """
    Суставы в позе (дифференцируемо по pose, beta, translation)

    Args:
        model: Модель тела
        pose: Полная поза, тензор (3·J,)
        beta: Коэффициенты формы (B,)
        translation: Смещение (3,)

    Returns:
        Тензор J×3 (м)
    """
    _, positions, _ = _world_transforms(model, pose, beta)
    return positions + translation


def posed_vertices(
    model: BodyModelDef,
    pose: torch.Tensor,
    beta: torch.Tensor,
    translation: torch.Tensor,
) -> torch.Tensor:
    """
    Вершины после линейного blend skinning (дифференцируемо)

    Каждая вершина формы v переносится как Σ_j w_vj·(R_j·(v − J̃_j) + J_j) + t,
    где J̃ — суставы формы в покое, R_j и J_j — мировые повороты и положения.
    Так как Σ_j w_vj = 1, сумма считается как v + Σ_j w_vj·((R_j − I)(v − J̃_j) + J_j − J̃_j):
    в нулевой позе слагаемые ровно нулевые.

    Returns:
        Тензор V×3 (м)
    """
    tensors = model.tensors
    rotations, positions, shaped = _world_transforms(model, pose, beta)
    vertices = tensors.template_vertices + torch.einsum(
        "vkb,b->vk", tensors.shape_dirs_vertices, beta
    )
    relative = vertices[:, None, :] - shaped[None, :, :]
    eye = torch.eye(3, dtype=rotations.dtype)
    moved = torch.einsum("jab,vjb->vja", rotations - eye, relative) + (positions - shaped)[None]
    return vertices + torch.einsum("vj,vja->va", tensors.skinning_weights, moved) + translation


def params_to_tensors(
    params: PoseShapeParams,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Полная поза, форма и смещение как float64 тензоры"""
    return (
        torch.from_numpy(params.full_pose().copy()),
        torch.from_numpy(params.beta.copy()),
        torch.from_numpy(params.translation.copy()),
    )


# ==================== ПУБЛИЧНЫЕ ОПЕРАЦИИ ====================


def forward_kinematics(model: BodyModelDef, params: PoseShapeParams) -> FloatArray:
    """
    Прямая кинематика: суставы J×3 в системе камеры

    Смещения формы прибавляются к суставам покоя, затем вдоль дерева
    накапливаются жёсткие преобразования (ось-угол → поворот по Родригу),
    в конце ко всем суставам прибавляется t.

    Raises:
        UnboundParams: Размеры параметров не совпадают с раскладкой
    """
    params.check_bound(model)
    with torch.no_grad():
        joints = posed_joints(model, *params_to_tensors(params))
    return joints.numpy().copy()


def skin_vertices(model: BodyModelDef, params: PoseShapeParams) -> FloatArray:
    """
    Линейный blend skinning: вершины V×3 в системе камеры

    Raises:
        UnboundParams: Размеры параметров не совпадают с раскладкой
    """
    params.check_bound(model)
    with torch.no_grad():
        vertices = posed_vertices(model, *params_to_tensors(params))
    return vertices.numpy().copy()


def make_toy_model(variant: ToyVariant | str) -> BodyModelDef:
    """
    Детерминированная игрушечная модель

    Args:
        variant: "body16" (16 суставов, 96 вершин, B=4) или "wholebody22"
            (body16 + две кисти по 2 сустава + челюсть, 128 вершин)

    Returns:
        Определение модели, бит-в-бит одинаковое между запусками

    Raises:
        UnknownVariant: Неизвестный вариант
    """
    try:
        toy_variant = ToyVariant(variant)
    except ValueError as exc:
        raise UnknownVariant(str(variant)) from exc

    arrays = build_toy_model(toy_variant)
    return BodyModelDef(
        parents=np.asarray(arrays.parents, dtype=np.int64),
        template_joints=arrays.template_joints,
        template_vertices=arrays.template_vertices,
        skinning_weights=arrays.skinning_weights,
        shape_dirs_joints=arrays.shape_dirs_joints,
        shape_dirs_vertices=arrays.shape_dirs_vertices,
        joint_names=arrays.joint_names,
        layout=BodyLayout(**arrays.layout),
    )


def load_model(path: Path | str) -> BodyModelDef:
    """
    Загрузить модель тела из JSON с полной точностью

    Raises:
        ParseError: Файл не разбирается или нарушает схему
        InvariantViolation: Модель нарушает инвариант (имя инварианта в invariant)
    """
    document = read_json_file(path, BodyModelFile)
    try:
        model = BodyModelDef(
            parents=np.asarray(document.parents, dtype=np.int64),
            template_joints=np.asarray(document.template_joints, dtype=np.float64),
            template_vertices=np.asarray(document.template_vertices, dtype=np.float64),
            skinning_weights=np.asarray(document.skinning_weights, dtype=np.float64),
            shape_dirs_joints=np.asarray(document.shape_dirs_joints, dtype=np.float64),
            shape_dirs_vertices=np.asarray(
                document.shape_dirs_vertices, dtype=np.float64
            ),
            joint_names=tuple(document.joint_names),
            layout=BodyLayout(
                body=document.layout.body,
                lhand=document.layout.lhand,
                rhand=document.layout.rhand,
                jaw=document.layout.jaw,
            ),
        )
    except ValueError as exc:
        # рваные вложенные списки не складываются в прямоугольный массив
        raise InvariantViolation("rectangular_arrays", str(exc)) from exc
    logger.debug("Загружена модель %s: J=%d, V=%d", path, model.joint_count, model.vertex_count)
    return model


def save_model(model: BodyModelDef, path: Path | str) -> None:
    """Сохранить модель тела в JSON без потери точности"""
    write_json_file(path, model.to_file())
