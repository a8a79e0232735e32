"""Численное дифференцирование центральными разностями"""

from collections.abc import Callable

import numpy as np
import numpy.typing as npt

from egoplex.internal.types import FloatArray

DEFAULT_STEP = 1e-5


def central_difference(
    fn: Callable[[FloatArray], float],
    x: npt.ArrayLike,
    step: float = DEFAULT_STEP,
) -> FloatArray:
    """
    Градиент скалярной функции центральными разностями

    g_k = (f(x + h·e_k) − f(x − h·e_k)) / 2h

    Args:
        fn: Функция вектора float64 → число
        x: Точка (вектор)
        step: Шаг h > 0

    Returns:
        Градиент той же формы, что и x

    Raises:
        ValueError: step <= 0
    """
    if not step > 0.0:
        raise ValueError(f"central_difference: шаг должен быть > 0, получено {step}")
    point = np.asarray(x, dtype=np.float64).reshape(-1)
    grad = np.empty_like(point)
    for k in range(point.size):
        shift = np.zeros_like(point)
        shift[k] = step
        grad[k] = (fn(point + shift) - fn(point - shift)) / (2.0 * step)
    return grad.reshape(np.shape(x))
