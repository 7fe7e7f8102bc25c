"""
Feature cache files

Layout of one file (all integers little-endian uint32):
    magic b'RFSFEAT1'
    path length, UTF-8 image path
    32-byte SHA-256 of the image content (shape + pixels)
    vector length, float64 little-endian values
"""
import hashlib
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..errors import CacheInvalidError, ParseError
from ..monitoring import get_logger

MAGIC = b'RFSFEAT1'
_U32 = np.dtype('<u4')
_F64 = np.dtype('<f8')

logger = get_logger('feature_store')


def content_hash(image: np.ndarray) -> bytes:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    digest = hashlib.sha256()
    digest.update(np.asarray(image.shape, dtype=_U32).tobytes())
    digest.update(image.tobytes())
    return digest.digest()


def encode_features(image_path: str, digest: bytes, values: np.ndarray) -> bytes:
    path_bytes = image_path.encode('utf-8')
    values = np.asarray(values, dtype=_F64).ravel()
    return b''.join([
        MAGIC,
        np.array([len(path_bytes)], dtype=_U32).tobytes(), path_bytes,
        digest,
        np.array([values.size], dtype=_U32).tobytes(), values.tobytes(),
    ])


def decode_features(data: bytes) -> Tuple[str, bytes, np.ndarray]:
    """(image path, content hash, feature vector)"""
    if data[:len(MAGIC)] != MAGIC:
        raise ParseError("Not a feature cache file", offset=0)
    pos = len(MAGIC)

    def read_u32(at: int) -> int:
        if at + 4 > len(data):
            raise ParseError("Truncated feature cache header", offset=at)
        return int(np.frombuffer(data, dtype=_U32, count=1, offset=at)[0])

    path_len = read_u32(pos)
    pos += 4
    image_path = data[pos:pos + path_len].decode('utf-8', errors='replace')
    pos += path_len
    digest = data[pos:pos + 32]
    if len(digest) != 32:
        raise ParseError("Truncated content hash", offset=pos)
    pos += 32
    length = read_u32(pos)
    pos += 4
    expected = length * _F64.itemsize
    if len(data) - pos != expected:
        raise ParseError(f"Feature payload size mismatch: expected {expected} bytes, "
                         f"got {len(data) - pos}", offset=pos)
    return image_path, digest, np.frombuffer(data, dtype=_F64, count=length, offset=pos).copy()


class FeatureStore:
    """One cache file per image under a root directory, keyed by the image path"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _file_for(self, image_path: str) -> Path:
        name = hashlib.sha256(image_path.encode('utf-8')).hexdigest()[:32]
        return self.root / f"{name}.feat"

    def get(self, image_path: str, image: np.ndarray, strict: bool = False) -> Optional[np.ndarray]:
        """
        Cached features, or None when absent or stale

        Args:
            strict: Raise CacheInvalidError instead of returning None for a stale entry
        """
        cache_file = self._file_for(str(image_path))
        if not cache_file.exists():
            return None
        stored_path, digest, values = decode_features(cache_file.read_bytes())
        if stored_path != str(image_path) or digest != content_hash(image):
            if strict:
                raise CacheInvalidError("Feature cache entry is stale", {'image': str(image_path)})
            logger.info("Stale feature cache entry ignored", image=str(image_path))
            return None
        return values

    def put(self, image_path: str, image: np.ndarray, values: np.ndarray) -> Path:
        cache_file = self._file_for(str(image_path))
        tmp = cache_file.with_suffix('.tmp')
        tmp.write_bytes(encode_features(str(image_path), content_hash(image), values))
        tmp.replace(cache_file)
        return cache_file
