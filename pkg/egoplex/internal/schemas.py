"""Pydantic-схемы файлов (калибровка, модель тела) и помощники чтения/записи"""

import hashlib
import json
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from egoplex.exceptions import ParseError

SchemaType = TypeVar("SchemaType", bound=BaseModel)
"""TypeVar для схем файлов, которые читает read_json_file"""


class CalibrationFile(BaseModel):
    """
    Файл калибровки fisheye-камеры (JSON)

    Инварианты самой камеры (f'(0) > 0, главная точка внутри кадра)
    проверяет FisheyeCamera; схема отвечает только за структуру файла.
    """

    forward_coeffs: list[float] = Field(min_length=1)
    inverse_coeffs: list[float] | None = Field(
        default=None,
        description="Коэффициенты обратного полинома; при отсутствии подгоняются при загрузке",
    )
    image_width: int = Field(gt=0)
    image_height: int = Field(gt=0)
    principal_point: tuple[float, float]

    model_config = ConfigDict(extra="forbid", frozen=True)


class BodyLayoutFile(BaseModel):
    """Диапазоны индексов суставов [start, stop) для блоков позы"""

    body: tuple[int, int]
    lhand: tuple[int, int]
    rhand: tuple[int, int]
    jaw: tuple[int, int]

    model_config = ConfigDict(extra="forbid", frozen=True)


class BodyModelFile(BaseModel):
    """Файл параметрической модели тела (JSON)"""

    parents: list[int] = Field(min_length=1)
    template_joints: list[tuple[float, float, float]]
    template_vertices: list[tuple[float, float, float]]
    skinning_weights: list[list[float]]
    shape_dirs_joints: list[list[list[float]]]
    shape_dirs_vertices: list[list[list[float]]]
    joint_names: list[str]
    layout: BodyLayoutFile

    model_config = ConfigDict(extra="forbid", frozen=True)


class PoseShapeRecord(BaseModel):
    """Параметры позы, формы и смещения в JSON (датасеты и результаты подгонки)"""

    theta_body: list[float]
    theta_lhand: list[float] = Field(default_factory=list)
    theta_rhand: list[float] = Field(default_factory=list)
    theta_jaw: list[float] = Field(default_factory=list)
    beta: list[float]
    translation: tuple[float, float, float]

    model_config = ConfigDict(extra="forbid", frozen=True)


def _first_error_field(error: ValidationError) -> str:
    """Путь к первому полю, не прошедшему валидацию, в виде 'a.b.0'"""
    errors = error.errors()
    if not errors:
        return ""
    return ".".join(str(part) for part in errors[0]["loc"])


def parse_json_text(
    text: str, schema: type[SchemaType], path: Path | str, line: int | None = None
) -> SchemaType:
    """
    Разобрать JSON-текст в схему, сводя все ошибки к ParseError

    Args:
        text: JSON-текст
        schema: Класс pydantic-схемы
        path: Путь к файлу (для сообщения об ошибке)
        line: Номер строки для JSON-lines файлов

    Returns:
        Экземпляр схемы

    Raises:
        ParseError: Синтаксическая ошибка JSON или нарушение схемы
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            path, exc.msg, line=line if line is not None else exc.lineno
        ) from exc
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        raise ParseError(
            path,
            exc.errors()[0]["msg"] if exc.errors() else str(exc),
            line=line,
            field=_first_error_field(exc),
        ) from exc


def read_json_file(path: Path | str, schema: type[SchemaType]) -> SchemaType:
    """
    Прочитать JSON-файл и провалидировать его схемой

    Raises:
        ParseError: Файл не читается, не является JSON или нарушает схему
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, f"не удалось прочитать файл: {exc}") from exc
    return parse_json_text(text, schema, path)


def write_json_file(path: Path | str, document: BaseModel) -> None:
    """Записать схему в JSON с полной точностью чисел (детерминированно)"""
    Path(path).write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")


def digest_of(document: BaseModel) -> str:
    """
    SHA-256 канонического JSON-представления схемы

    Используется для провенанса: дайджесты камеры, модели и конфигурации
    записываются в заголовки датасетов и отчётов.
    """
    payload = document.model_dump_json().encode("utf-8")
    return hashlib.sha256(payload).hexdigest()
