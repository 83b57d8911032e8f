"""PNG helpers shared by the CLI and the service."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidInputError
from .masks import MASK_THRESHOLD


def decode_image(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"))
    except UnidentifiedImageError as e:
        raise InvalidInputError(f"not a decodable image: {e}") from e


def decode_mask(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            gray = np.asarray(im.convert("L"))
    except UnidentifiedImageError as e:
        raise InvalidInputError(f"not a decodable mask image: {e}") from e
    return (gray > MASK_THRESHOLD).astype(np.uint8)


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def load_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def save_png(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(image))
