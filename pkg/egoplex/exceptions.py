"""Исключения egoplex"""

from pathlib import Path


class EgoplexError(Exception):
    """
    Базовый класс исключений egoplex.

    Все исключения, специфичные для библиотеки, наследуются от этого класса.
    Позволяет перехватывать любые ошибки egoplex одним except EgoplexError
    и отличать их от системных или сторонних исключений.
    """

    pass


# ==================== КАМЕРА ====================


class ZeroNormPoint(EgoplexError):
    """Проекция точки с нулевой нормой (центр камеры) не определена."""

    def __init__(self) -> None:
        super().__init__("Нельзя спроецировать точку с нулевой нормой")


class NonFiniteInput(EgoplexError):
    """Во входных данных встречены NaN или Inf."""

    def __init__(self, what: str) -> None:
        self.what = what
        super().__init__(f"{what}: обнаружены NaN/Inf значения")


class NonPositiveDistance(EgoplexError):
    """Расстояние вдоль луча должно быть строго положительным."""

    def __init__(self, distance: float) -> None:
        self.distance = distance
        super().__init__(f"Расстояние вдоль луча должно быть > 0, получено {distance}")


class SingularNormalEquations(EgoplexError):
    """Матрица плана при подгонке обратного полинома вырождена."""

    def __init__(self, degree: int, rank: int) -> None:
        self.degree = degree
        self.rank = rank
        super().__init__(
            f"Вырожденная система: степень {degree} требует ранга {degree + 1}, "
            f"получен ранг {rank}"
        )


class NonMonotonicForwardPoly(EgoplexError):
    """
    Прямой полином f не убывает строго на (0, π/2].

    Обращение модели в этом случае некорректно, поэтому ошибка сообщается,
    а не маскируется.
    """

    def __init__(self, rho: float) -> None:
        self.rho = rho
        super().__init__(
            f"Прямой полином не убывает строго на (0, π/2]: нарушение около ρ={rho:.6f}"
        )


# ==================== ФАЙЛЫ ====================


class ParseError(EgoplexError):
    """
    Файл не удалось разобрать.

    Attributes:
        path: Путь к файлу
        line: Номер строки (для ошибок JSON / JSON-lines), если известен
        field: Поле схемы, на котором споткнулась валидация, если известно
    """

    def __init__(
        self,
        path: Path | str,
        reason: str,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        self.path = Path(path)
        self.reason = reason
        self.line = line
        self.field = field
        where = str(self.path)
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {reason}")


class InvariantViolation(EgoplexError):
    """Загруженные или построенные значения нарушают инвариант типа."""

    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        self.detail = detail
        message = f"Нарушен инвариант '{invariant}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


# ==================== РАЗВЁРТКА ПАТЧЕЙ ====================


class DegenerateNeighbor(EgoplexError):
    """
    Соседняя точка не задаёт ось касательной плоскости.

    Attributes:
        cell: Индекс ячейки сетки (i, j), если ошибка возникла внутри generate_patches
    """

    def __init__(self, reason: str, cell: tuple[int, int] | None = None) -> None:
        self.reason = reason
        self.cell = cell
        prefix = f"Ячейка {cell}: " if cell is not None else ""
        super().__init__(f"{prefix}вырожденный сосед: {reason}")


class InvalidCrop(EgoplexError):
    """Обрезка удаляет все столбцы сетки патчей."""

    def __init__(self, cols_each_side: int, grid_cols: int) -> None:
        self.cols_each_side = cols_each_side
        self.grid_cols = grid_cols
        super().__init__(
            f"Нельзя удалить по {cols_each_side} столбца(ов) с каждой стороны "
            f"из сетки шириной {grid_cols}"
        )


# ==================== МОДЕЛЬ ТЕЛА ====================


class UnboundParams(EgoplexError):
    """Размеры параметров не совпадают с раскладкой модели."""

    def __init__(self, block: str, expected: int, actual: int) -> None:
        self.block = block
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"Блок '{block}': ожидалось {expected} значений, получено {actual}"
        )


class UnknownVariant(EgoplexError):
    """Запрошен неизвестный вариант игрушечной модели."""

    def __init__(self, variant: str) -> None:
        self.variant = variant
        super().__init__(f"Неизвестный вариант модели: '{variant}'")


# ==================== ПОДГОНКА ====================


class EmptyJointSubset(EgoplexError):
    """Множество суставов для подгонки пусто."""

    def __init__(self) -> None:
        super().__init__("Множество суставов 𝒥 пусто")


class NonFiniteEnergy(EgoplexError):
    """Энергия стала NaN/Inf: шаг оптимизатора разошёлся."""

    def __init__(self, iteration: int) -> None:
        self.iteration = iteration
        super().__init__(f"Энергия не конечна на итерации {iteration}")


# ==================== ФУНКЦИИ ПОТЕРЬ ====================


class LengthMismatch(EgoplexError):
    """Длины векторов не совпадают."""

    def __init__(self, what: str, left: int, right: int) -> None:
        self.what = what
        self.left = left
        self.right = right
        super().__init__(f"{what}: длины не совпадают ({left} != {right})")


class ShapeMismatch(EgoplexError):
    """Формы массивов не совпадают."""

    def __init__(
        self, what: str, left: tuple[int, ...], right: tuple[int, ...]
    ) -> None:
        self.what = what
        self.left = left
        self.right = right
        super().__init__(f"{what}: формы не совпадают ({left} != {right})")


class EmptyMask(EgoplexError):
    """Маска суставов не выбирает ни одного сустава."""

    def __init__(self) -> None:
        super().__init__("Маска суставов пуста")


class DenoiserFailure(EgoplexError):
    """Денойзер бросил исключение или вернул некорректный результат."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Сбой денойзера: {reason}")


# ==================== МЕТРИКИ ====================


class DegenerateConfiguration(EgoplexError):
    """Точки коллинеарны или совпадают: выравнивание не определено."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Вырожденная конфигурация точек: {reason}")


# ==================== СТЕНД ====================


class JointBehindCamera(EgoplexError):
    """Сгенерированный сустав оказался за камерой."""

    def __init__(self, frame_id: int, joint: int) -> None:
        self.frame_id = frame_id
        self.joint = joint
        super().__init__(f"Кадр {frame_id}: сустав {joint} за камерой (z <= 0)")
