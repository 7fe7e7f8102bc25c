"""
Image I/O
Binary PGM (P5, maxval 255) read/write, and PNG/JPEG ingestion through Pillow
"""
import re
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ParameterError, ParseError
from .manipulations import to_grayscale

PGM_SUFFIXES = ('.pgm',)
RASTER_SUFFIXES = ('.png', '.jpg', '.jpeg')
IMAGE_SUFFIXES = PGM_SUFFIXES + RASTER_SUFFIXES

_WHITESPACE = b' \t\r\n'


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Header token starting at or after pos, skipping whitespace and # comments"""
    while pos < len(data):
        byte = data[pos:pos + 1]
        if byte in (b' ', b'\t', b'\r', b'\n'):
            pos += 1
        elif byte == b'#':
            end = data.find(b'\n', pos)
            pos = len(data) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b'#':
        pos += 1
    if start == pos:
        raise ParseError("Unexpected end of PGM header", offset=start)
    return data[start:pos], pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a binary P5 PGM with maxval 255"""
    magic, pos = _next_token(data, 0)
    if magic != b'P5':
        raise ParseError(f"Not a binary PGM (magic {magic!r})", offset=0)
    fields = []
    for name in ('width', 'height', 'maxval'):
        start = pos
        token, pos = _next_token(data, pos)
        if not re.fullmatch(rb'\d+', token):
            raise ParseError(f"Invalid PGM {name} {token!r}", offset=start, field=name)
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ParseError("PGM dimensions must be positive", offset=pos, field='width')
    if maxval != 255:
        raise ParseError(f"Only 8-bit PGM is supported (maxval {maxval})", offset=pos, field='maxval')
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ParseError("Missing whitespace after PGM maxval", offset=pos)
    pos += 1

    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ParseError(f"Truncated PGM payload: expected {expected} bytes, got {len(payload)}",
                         offset=pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("PGM holds 2-D grayscale images", {'shape': image.shape})
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255:
            raise ParameterError("Pixel values must lie in [0, 255]")
        image = image.astype(np.uint8)
    height, width = image.shape
    return f"P5\n{width} {height}\n255\n".encode('ascii') + image.tobytes()


def read_image(path: Union[str, Path]) -> np.ndarray:
    """
    Load an image as uint8 grayscale

    PGM is decoded exactly; PNG/JPEG are converted with to_grayscale.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PGM_SUFFIXES:
        try:
            return parse_pgm(path.read_bytes())
        except ParseError as e:
            raise e.with_context(path=str(path))
    if suffix in RASTER_SUFFIXES:
        try:
            with Image.open(path) as img:
                if img.mode == 'L':
                    return np.asarray(img, dtype=np.uint8).copy()
                return to_grayscale(np.asarray(img.convert('RGB'), dtype=np.uint8))
        except (UnidentifiedImageError, OSError) as e:
            raise ParseError(f"Cannot decode image: {e}", context={'path': str(path)})
    raise ParameterError(f"Unsupported image type {suffix!r}", {'path': str(path)})


def write_image(image: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a grayscale image; PGM unless the suffix asks for PNG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == '.png':
        Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)
    else:
        path.write_bytes(encode_pgm(image))
    return path


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
