"""Детерминированные игрушечные модели тела body16 и wholebody22"""

from dataclasses import dataclass

import numpy as np

from egoplex.internal.types import FloatArray, ToyVariant

# (имя, родитель, положение в покое, м); ось y направлена вверх, таз в начале координат
_BODY16: tuple[tuple[str, int, tuple[float, float, float]], ...] = (
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("l_hip", 0, (0.09, -0.06, 0.0)),
    ("l_knee", 1, (0.10, -0.48, 0.01)),
    ("l_ankle", 2, (0.10, -0.88, -0.02)),
    ("r_hip", 0, (-0.09, -0.06, 0.0)),
    ("r_knee", 4, (-0.10, -0.48, 0.01)),
    ("r_ankle", 5, (-0.10, -0.88, -0.02)),
    ("spine", 0, (0.0, 0.25, -0.02)),
    ("neck", 7, (0.0, 0.52, -0.01)),
    ("head", 8, (0.0, 0.68, 0.03)),
    ("l_shoulder", 7, (0.18, 0.47, -0.02)),
    ("l_elbow", 10, (0.45, 0.47, -0.03)),
    ("l_wrist", 11, (0.70, 0.47, -0.02)),
    ("r_shoulder", 7, (-0.18, 0.47, -0.02)),
    ("r_elbow", 13, (-0.45, 0.47, -0.03)),
    ("r_wrist", 14, (-0.70, 0.47, -0.02)),
)

_HANDS_AND_JAW: tuple[tuple[str, int, tuple[float, float, float]], ...] = (
    ("l_hand", 12, (0.78, 0.47, -0.02)),
    ("l_finger", 16, (0.86, 0.46, -0.02)),
    ("r_hand", 15, (-0.78, 0.47, -0.02)),
    ("r_finger", 18, (-0.86, 0.46, -0.02)),
    ("jaw", 9, (0.0, 0.62, 0.07)),
)

_LEG_JOINTS = frozenset(range(1, 7))
_ARM_JOINTS = frozenset({10, 11, 12, 13, 14, 15, 16, 17, 18, 19})

# направления кольца вершин вокруг сустава; только точные двоичные дроби
_RING = (
    (1.0, 0.0, 0.0),
    (0.0, 0.0, 1.0),
    (-1.0, 0.0, 0.0),
    (0.0, 0.0, -1.0),
    (0.5, 0.5, 0.5),
    (-0.5, -0.5, -0.5),
    (0.5, -0.5, -0.5),
)
_RING_RADIUS = 0.04

SHAPE_DIM = 4


@dataclass(frozen=True)
class ToyModelArrays:
    """Сырые массивы игрушечной модели до упаковки в BodyModelDef"""

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    template_joints: FloatArray
    template_vertices: FloatArray
    skinning_weights: FloatArray
    shape_dirs_joints: FloatArray
    shape_dirs_vertices: FloatArray
    layout: dict[str, tuple[int, int]]


def _joint_shape_dirs(joints: FloatArray) -> FloatArray:
    """Базис формы суставов (J, 3, 4): рост, ширина, длина ног, длина рук"""
    count = joints.shape[0]
    dirs = np.zeros((count, 3, SHAPE_DIM), dtype=np.float64)
    root = joints[0]
    for j in range(count):
        x, y, _ = joints[j]
        dirs[j, :, 0] = 0.0625 * (joints[j] - root)
        dirs[j, 0, 1] = 0.125 * x
        if j in _LEG_JOINTS:
            dirs[j, 1, 2] = 0.0625 * y
        if j in _ARM_JOINTS:
            dirs[j, 0, 3] = 0.0625 * (x - np.sign(x) * 0.18)
    return dirs


def build_toy_model(variant: ToyVariant) -> ToyModelArrays:
    """
    Построить массивы игрушечной модели

    body16: 16 суставов по 6 вершин (96 вершин). wholebody22: body16 плюс
    две кисти по 2 сустава (по 7 вершин) и челюсть (4 вершины) — 128 вершин.
    Первая вершина кольца каждого сустава жёстко привязана к нему (вес 1),
    остальные делят вес 0.75 / 0.25 с родителем; вершины корня — вес 1.
    """
    spec = _BODY16 if variant == ToyVariant.BODY16 else _BODY16 + _HANDS_AND_JAW
    names = tuple(name for name, _, _ in spec)
    parents = tuple(parent for _, parent, _ in spec)
    joints = np.array([pos for _, _, pos in spec], dtype=np.float64)
    joint_dirs = _joint_shape_dirs(joints)
    count = len(spec)

    if variant == ToyVariant.BODY16:
        ring_sizes = [6] * count
        layout = {"body": (0, 16), "lhand": (16, 16), "rhand": (16, 16), "jaw": (16, 16)}
    else:
        ring_sizes = [6] * 16 + [7, 7, 7, 7, 4]
        layout = {"body": (0, 16), "lhand": (16, 18), "rhand": (18, 20), "jaw": (20, 21)}

    vertices: list[FloatArray] = []
    weights: list[FloatArray] = []
    vertex_dirs: list[FloatArray] = []
    for j, ring_size in enumerate(ring_sizes):
        parent = parents[j]
        for k in range(ring_size):
            offset = _RING_RADIUS * np.array(_RING[k], dtype=np.float64)
            row = np.zeros(count, dtype=np.float64)
            if parent < 0 or k == 0:
                row[j] = 1.0
            else:
                row[j] = 0.75
                row[parent] = 0.25
            dirs = np.einsum("j,jab->ab", row, joint_dirs)
            dirs[:, 1] += 0.5 * offset
            vertices.append(joints[j] + offset)
            weights.append(row)
            vertex_dirs.append(dirs)

    return ToyModelArrays(
        joint_names=names,
        parents=parents,
        template_joints=joints,
        template_vertices=np.stack(vertices),
        skinning_weights=np.stack(weights),
        shape_dirs_joints=joint_dirs,
        shape_dirs_vertices=np.stack(vertex_dirs),
        layout=layout,
    )
