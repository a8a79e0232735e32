"""Чтение и запись 8-битных PGM/PPM изображений через Pillow"""

from pathlib import Path

import numpy as np
from PIL import Image

from egoplex.exceptions import ParseError
from egoplex.internal.types import ImageArray

_MODES = {"L": 1, "RGB": 3}


def load_image(path: Path | str) -> ImageArray:
    """
    Загрузить PGM (оттенки серого) или PPM (RGB) изображение

    Args:
        path: Путь к файлу

    Returns:
        Массив uint8 формы H×W (PGM) или H×W×3 (PPM)

    Raises:
        ParseError: Файл не читается или имеет неподдерживаемый режим
    """
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode not in _MODES:
                raise ParseError(path, f"неподдерживаемый режим изображения {image.mode}")
            return np.asarray(image, dtype=np.uint8).copy()
    except OSError as exc:
        raise ParseError(path, f"не удалось прочитать изображение: {exc}") from exc


def save_image(path: Path | str, pixels: ImageArray) -> None:
    """
    Сохранить массив как бинарный PGM (1 канал) или PPM (3 канала)

    Значения округляются и обрезаются в [0, 255].

    Raises:
        ValueError: Неподдерживаемое число каналов
    """
    array = np.asarray(pixels)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[..., 0]
    if not (array.ndim == 2 or (array.ndim == 3 and array.shape[2] == 3)):
        raise ValueError(f"save_image: неподдерживаемая форма {array.shape}")

    if array.dtype != np.uint8:
        array = np.clip(np.rint(array), 0, 255).astype(np.uint8)
    # режим L/RGB Pillow выводит из формы массива uint8
    Image.fromarray(np.ascontiguousarray(array)).save(Path(path), format="PPM")
