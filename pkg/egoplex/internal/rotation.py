"""Ось-угол → матрица поворота (формула Родрига) с устойчивыми градиентами в нуле"""

import torch

_SMALL_ANGLE_SQ = 1e-8
"""θ², ниже которого коэффициенты Родрига считаются рядом Тейлора"""


def skew(vectors: torch.Tensor) -> torch.Tensor:
    """Кососимметричная матрица [v]× для тензора (..., 3) → (..., 3, 3)"""
    x, y, z = vectors.unbind(-1)
    zeros = torch.zeros_like(x)
    return torch.stack(
        [zeros, -z, y, z, zeros, -x, -y, x, zeros], dim=-1
    ).reshape(*vectors.shape[:-1], 3, 3)


def axis_angle_to_matrix(rotvec: torch.Tensor) -> torch.Tensor:
    """
    Преобразовать векторы ось-угол в матрицы поворота

    R = I + a(θ)·K + b(θ)·K², где K = [r]×, a = sin θ/θ, b = (1 − cos θ)/θ².
    В отличие от привычного batch_rodrigues с norm(r + 1e-8), малые углы
    обрабатываются рядом Тейлора: нулевая поза даёт ровно единичную матрицу,
    а градиент в нуле конечен и точен.

    Args:
        rotvec: Тензор (..., 3), радианы

    Returns:
        Тензор (..., 3, 3)
    """
    theta_sq = (rotvec * rotvec).sum(dim=-1)[..., None, None]
    small = theta_sq < _SMALL_ANGLE_SQ
    safe_sq = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = torch.sqrt(safe_sq)

    a = torch.where(
        small,
        1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0,
        torch.sin(theta) / theta,
    )
    b = torch.where(
        small,
        0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0,
        (1.0 - torch.cos(theta)) / safe_sq,
    )
    k = skew(rotvec)
    eye = torch.eye(3, dtype=rotvec.dtype).expand_as(k)
    return eye + a * k + b * (k @ k)
