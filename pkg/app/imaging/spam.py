"""
Second-order SPAM features (T = 3, 686 features) on 8-bit grayscale images

For each of the 8 step vectors s the difference array is D(p) = I(p) - I(p + s),
clipped to [-T, T]. Consecutive triples (D(p), D(p + s), D(p + 2s)) along s are
counted wherever the four pixels p .. p + 3s lie inside the image, and turned into
transition probabilities Pr(d3 | d1, d2). Contexts never observed give 0.
Features 0..342 average the four axis-aligned directions, 343..685 the four diagonal ones,
each indexed (d1 + T) * 49 + (d2 + T) * 7 + (d3 + T).
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from ..errors import CacheInvalidError, ParameterError, ParseError

T = 3
LEVELS = 2 * T + 1
GROUP_SIZE = LEVELS ** 3
SPAM_DIM = 2 * GROUP_SIZE
MIN_SIDE = 4
NORMALIZER_FLOOR = 1e-8

# Axis-aligned steps first, then diagonals: right, left, down, up, and the four diagonals
STEPS: Tuple[Tuple[int, int], ...] = (
    (0, 1), (0, -1), (1, 0), (-1, 0),
    (1, 1), (-1, -1), (1, -1), (-1, 1),
)
AXIS_DIRECTIONS = slice(0, 4)
DIAGONAL_DIRECTIONS = slice(4, 8)


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("SPAM needs a 2-D grayscale image", {'shape': image.shape})
    if image.shape[0] < MIN_SIDE or image.shape[1] < MIN_SIDE:
        raise ParameterError("Image too small for SPAM triples", {'shape': image.shape})
    return image.astype(np.int32)


def _span(step: int, size: int) -> Tuple[int, int]:
    """First start coordinate and number of starts along one axis"""
    if step == 0:
        return 0, size
    return (0 if step > 0 else 3), size - 3


def triple_codes(pixels: np.ndarray, step: Tuple[int, int]) -> np.ndarray:
    """Flat codes of every in-image triple along step"""
    dr, dc = step
    r0, rows = _span(dr, pixels.shape[0])
    c0, cols = _span(dc, pixels.shape[1])
    taps = [pixels[r0 + t * dr: r0 + t * dr + rows, c0 + t * dc: c0 + t * dc + cols]
            for t in range(4)]
    return encode(taps[0] - taps[1], taps[1] - taps[2], taps[2] - taps[3]).ravel()


def encode(d1, d2, d3):
    d1, d2, d3 = (np.clip(d, -T, T) + T for d in (d1, d2, d3))
    return (d1 * LEVELS + d2) * LEVELS + d3


def count_triples(pixels: np.ndarray) -> np.ndarray:
    """(8, 343) triple counts, one row per step vector"""
    pixels = _check_image(pixels)
    return np.stack([np.bincount(triple_codes(pixels, step), minlength=GROUP_SIZE)
                     for step in STEPS]).astype(np.int64)


def features_from_counts(counts: np.ndarray) -> np.ndarray:
    """
    Transition probabilities averaged per direction group

    Args:
        counts: (..., 8, 343) triple counts

    Returns:
        (..., 686) feature array
    """
    counts = np.asarray(counts, dtype=float)
    by_context = counts.reshape(counts.shape[:-1] + (LEVELS * LEVELS, LEVELS))
    totals = by_context.sum(axis=-1, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        transitions = np.where(totals > 0, by_context / np.where(totals > 0, totals, 1), 0.0)
    transitions = transitions.reshape(counts.shape)
    axis = transitions[..., AXIS_DIRECTIONS, :].mean(axis=-2)
    diagonal = transitions[..., DIAGONAL_DIRECTIONS, :].mean(axis=-2)
    return np.concatenate([axis, diagonal], axis=-1)


def extract_spam(image: np.ndarray) -> np.ndarray:
    """686 SPAM features of a grayscale image"""
    return features_from_counts(count_triples(image))


def _affected_triples(shape: Tuple[int, int], row: np.ndarray, col: np.ndarray,
                      step: Tuple[int, int], offset: int):
    """
    Start pixels of triples whose position `offset` (0..3) is the given pixel

    Returns the start coordinates and a mask of starts whose four pixels are all in-image.
    """
    dr, dc = step
    start_r = row - offset * dr
    start_c = col - offset * dc
    end_r = start_r + 3 * dr
    end_c = start_c + 3 * dc
    inside = ((np.minimum(start_r, end_r) >= 0) & (np.maximum(start_r, end_r) < shape[0])
              & (np.minimum(start_c, end_c) >= 0) & (np.maximum(start_c, end_c) < shape[1]))
    return start_r, start_c, inside


def _codes_at(pixels: np.ndarray, start_r: np.ndarray, start_c: np.ndarray,
              step: Tuple[int, int], replace_offset: int = -1,
              replacement: np.ndarray = None) -> np.ndarray:
    dr, dc = step
    taps = []
    for t in range(4):
        values = pixels[start_r + t * dr, start_c + t * dc]
        if t == replace_offset:
            values = replacement
        taps.append(values)
    return encode(taps[0] - taps[1], taps[1] - taps[2], taps[2] - taps[3])


class SpamCache:
    """
    Triple counts of one image, updated pixel by pixel

    Single writer: one cache per attacked image.
    """

    def __init__(self, image: np.ndarray):
        self.pixels = _check_image(image).copy()
        self.counts = count_triples(self.pixels)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def features(self) -> np.ndarray:
        return features_from_counts(self.counts)

    def image(self) -> np.ndarray:
        return self.pixels.astype(np.uint8)

    def verify(self, image: np.ndarray):
        """Raise CacheInvalidError unless the cache was built from (or kept in sync with) image"""
        image = np.asarray(image)
        if image.shape != self.pixels.shape or not np.array_equal(image, self.pixels):
            raise CacheInvalidError("SPAM cache does not match the image",
                                    {'image_shape': image.shape, 'cache_shape': self.pixels.shape})

    def count_delta(self, rows: Sequence[int], cols: Sequence[int],
                    values: Sequence[int]) -> np.ndarray:
        """
        Count changes for a batch of independent single-pixel edits

        Returns a (B, 8, 343) array; each candidate edit is evaluated against the
        current image on its own.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.int32)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ParameterError("rows, cols and values must be equal-length vectors")
        if np.any((values < 0) | (values > 255)):
            raise ParameterError("Pixel values must lie in [0, 255]")
        if np.any((rows < 0) | (rows >= self.shape[0]) | (cols < 0) | (cols >= self.shape[1])):
            raise ParameterError("Pixel outside the image", {'shape': self.shape})

        delta = np.zeros((rows.size, len(STEPS), GROUP_SIZE), dtype=np.int64)
        batch = np.arange(rows.size)
        for d, step in enumerate(STEPS):
            for offset in range(4):
                start_r, start_c, inside = _affected_triples(self.shape, rows, cols, step, offset)
                if not inside.any():
                    continue
                sr, sc, b, v = start_r[inside], start_c[inside], batch[inside], values[inside]
                old = _codes_at(self.pixels, sr, sc, step)
                new = _codes_at(self.pixels, sr, sc, step, offset, v)
                np.add.at(delta, (b, d, old), -1)
                np.add.at(delta, (b, d, new), 1)
        return delta

    def candidate_features(self, rows: Sequence[int], cols: Sequence[int],
                           values: Sequence[int], chunk_size: int = 2048) -> np.ndarray:
        """(B, 686) features of the image after each single-pixel edit, taken separately"""
        rows, cols, values = (np.asarray(a) for a in (rows, cols, values))
        out = np.empty((rows.size, SPAM_DIM))
        for start in range(0, rows.size, chunk_size):
            part = slice(start, start + chunk_size)
            delta = self.count_delta(rows[part], cols[part], values[part])
            out[part] = features_from_counts(self.counts[None] + delta)
        return out

    def set_pixel(self, row: int, col: int, value: int) -> np.ndarray:
        """Apply one edit, keep counts in sync and return the new features"""
        delta = self.count_delta([row], [col], [value])[0]
        self.counts += delta
        self.pixels[row, col] = value
        return self.features()

    def apply_edits(self, rows: Sequence[int], cols: Sequence[int], values: Sequence[int]) -> np.ndarray:
        """Apply edits one after another (later edits see earlier ones)"""
        for row, col, value in zip(rows, cols, values):
            delta = self.count_delta([row], [col], [value])[0]
            self.counts += delta
            self.pixels[row, col] = value
        return self.features()

    def recount(self) -> bool:
        """True if the incremental counts equal a full recount"""
        return bool(np.array_equal(self.counts, count_triples(self.pixels)))


def incremental_update(image: np.ndarray, cache: SpamCache, pixel: Tuple[int, int],
                       new_value: int) -> np.ndarray:
    """Features after setting one pixel, reusing cached counts of image"""
    cache.verify(image)
    return cache.set_pixel(pixel[0], pixel[1], new_value)


@dataclass(frozen=True, eq=False)
class FeatureNormalizer:
    """Per-feature standard deviations from a training set"""
    scale: np.ndarray

    def __post_init__(self):
        scale = np.array(self.scale, dtype=float)
        if scale.ndim != 1 or np.any(scale <= 0):
            raise ParameterError("Normalizer scales must be a positive vector")
        scale.setflags(write=False)
        object.__setattr__(self, 'scale', scale)

    @property
    def dim(self) -> int:
        return self.scale.size

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.dim:
            raise ParameterError("Dimension mismatch", {'expected': self.dim, 'got': features.shape[-1]})
        return features / self.scale

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized, dtype=float) * self.scale

    def to_dict(self):
        return {'scale': self.scale.tolist()}

    @classmethod
    def from_dict(cls, data) -> 'FeatureNormalizer':
        if 'scale' not in data:
            raise ParseError("Normalizer JSON is missing 'scale'", field='scale')
        return cls(scale=np.asarray(data['scale'], dtype=float))

    def save(self, path: Path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Path) -> 'FeatureNormalizer':
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_normalizer(features: np.ndarray) -> FeatureNormalizer:
    """Sample standard deviation (n - 1) per feature, floored at 1e-8"""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ParameterError("Need at least two feature vectors", {'shape': features.shape})
    scale = np.std(features, axis=0, ddof=1)
    return FeatureNormalizer(scale=np.maximum(scale, NORMALIZER_FLOOR))


def apply_normalizer(normalizer: FeatureNormalizer, features: np.ndarray) -> np.ndarray:
    return normalizer.apply(features)
