"""Общие типы данных: псевдонимы массивов и перечисления настроек"""

from enum import StrEnum
from typing import Any

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
"""
Массив float64 произвольной формы

Используется для координат (метры, пиксели), коэффициентов полиномов
и значений патчей. Все вычисления библиотеки ведутся в float64.
"""

IntArray = npt.NDArray[np.int64]
"""Массив индексов (родители суставов, маски суставов)"""

ImageArray = npt.NDArray[Any]
"""
Изображение в виде массива H×W или H×W×C

Тип элементов не фиксирован: uint8 при чтении PGM/PPM, float64 для патчей.
"""


class ToyVariant(StrEnum):
    """
    Вариант игрушечной модели тела

    Attributes:
        BODY16: 16 суставов тела, 96 вершин, B=4
        WHOLEBODY22: body16 + две кисти по 2 сустава + челюсть, 128 вершин
    """

    BODY16 = "body16"
    WHOLEBODY22 = "wholebody22"


class PoseInit(StrEnum):
    """
    Начальное приближение позы и формы при подгонке

    Attributes:
        ZEROS: нейтральная поза и нулевая форма
        PROVIDED: тёплый старт из переданных параметров (последовательные кадры)
    """

    ZEROS = "zeros"
    PROVIDED = "provided"


class TranslationInit(StrEnum):
    """
    Начальное приближение смещения t при подгонке

    Attributes:
        CENTROID: совмещение центроидов покоя и GT по суставам 𝒥
        ZEROS: t = 0
    """

    CENTROID = "centroid"
    ZEROS = "zeros"


class PriorSchedule(StrEnum):
    """Закон убывания веса λ_prior по ходу обучения"""

    COSINE = "cosine"
