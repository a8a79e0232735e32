"""Вычисление полиномов схемой Горнера"""

from collections.abc import Sequence
from typing import TypeVar

import numpy as np
import torch

from egoplex.internal.types import FloatArray

PolyArg = TypeVar("PolyArg", float, FloatArray, torch.Tensor)
"""Аргумент полинома: скаляр, массив numpy или тензор torch (для градиентов)"""


def eval_poly(coeffs: Sequence[float] | FloatArray, x: PolyArg) -> PolyArg:
    """
    Вычислить Σ coeffs[q]·x^q схемой Горнера

    Работает поэлементно для массивов и тензоров, поэтому одна и та же
    функция обслуживает и f(ρ), и f'(ρ'), и дифференцируемую проекцию.

    Args:
        coeffs: Коэффициенты k_0..k_Q, младший первым
        x: Точка(и) вычисления

    Returns:
        Значение полинома той же формы, что x

    Raises:
        ValueError: Если список коэффициентов пуст
    """
    values = [float(c) for c in np.asarray(coeffs, dtype=np.float64).ravel()]
    if not values:
        raise ValueError("eval_poly: список коэффициентов не может быть пустым")

    result = x * 0.0 + values[-1]
    for coeff in reversed(values[:-1]):
        result = result * x + coeff
    return result
