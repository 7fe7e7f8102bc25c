"""
Image manipulations under detection, preprocessing and distortion metrics
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import ndimage

from ..errors import ParameterError, UndefinedMetricError

CLAHE_TILES = 8
CLAHE_BINS = 256
DEFAULT_CLIP_LIMIT = 0.02
MEDIAN_WINDOWS = (3, 5, 7)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ManipulationKind(Enum):
    AHE = "ahe"
    MF3 = "mf3"
    MF5 = "mf5"
    MF7 = "mf7"

    @property
    def window(self) -> Optional[int]:
        return None if self is ManipulationKind.AHE else int(self.value[2])


@dataclass(frozen=True)
class DistortionReport:
    """psnr_db is math.inf for an unchanged image; feature_snr_db is None when undefined"""
    psnr_db: float
    feature_snr_db: Optional[float]
    euclidean: float


def _as_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("Expected a 2-D grayscale image", {'shape': image.shape})
    return image


def _clip_histogram(hist: np.ndarray, clip_limit: int) -> np.ndarray:
    """Clip bins at clip_limit and hand the excess back out, bin by bin"""
    hist = hist.astype(np.int64).copy()
    bins = hist.size
    excess = int(np.maximum(hist - clip_limit, 0).sum())
    increment = excess // bins
    upper = clip_limit - increment

    over = hist > clip_limit
    near = ~over & (hist > upper)
    rest = ~over & ~near
    excess -= int((clip_limit - hist[near]).sum())
    excess -= increment * int(rest.sum())
    hist[over | near] = clip_limit
    hist[rest] += increment

    start = 0
    while excess > 0:
        step = max(bins // excess, 1)
        for m in range(start, bins, step):
            if hist[m] < clip_limit:
                hist[m] += 1
                excess -= 1
                if excess == 0:
                    break
        start = (start + 1) % bins
    return hist


def _tile_mappings(padded: np.ndarray, tile_h: int, tile_w: int, clip_limit: float) -> np.ndarray:
    """(tiles, tiles, 256) grey-level maps onto [0, 1] with a uniform target"""
    pixels_per_tile = tile_h * tile_w
    min_clip = math.ceil(pixels_per_tile / CLAHE_BINS)
    clip = min_clip + round(clip_limit * (pixels_per_tile - min_clip))
    mappings = np.empty((CLAHE_TILES, CLAHE_TILES, CLAHE_BINS))
    for i in range(CLAHE_TILES):
        for j in range(CLAHE_TILES):
            tile = padded[i * tile_h:(i + 1) * tile_h, j * tile_w:(j + 1) * tile_w]
            hist = np.bincount(tile.ravel(), minlength=CLAHE_BINS)
            hist = _clip_histogram(hist, clip)
            mappings[i, j] = np.minimum(np.cumsum(hist) / pixels_per_tile, 1.0)
    return mappings


def _neighbours(size: int, tile: int):
    """Lower tile index, upper tile index and blend weight per coordinate"""
    position = (np.arange(size) - tile // 2) / tile
    lower = np.floor(position).astype(int)
    weight = position - lower
    upper = np.clip(lower + 1, 0, CLAHE_TILES - 1)
    # Outside the outermost tile centres only one tile contributes
    weight = np.where(lower < 0, 0.0, np.where(lower >= CLAHE_TILES - 1, 0.0, weight))
    lower = np.clip(lower, 0, CLAHE_TILES - 1)
    return lower, upper, weight


def _even_tile(size: int) -> int:
    tile = math.ceil(size / CLAHE_TILES)
    return tile + (tile % 2)


def clahe(image: np.ndarray, clip_limit: float = DEFAULT_CLIP_LIMIT) -> np.ndarray:
    """
    Contrast-limited adaptive histogram equalization

    8 x 8 tiles, 256 bins and a uniform target distribution. The image is padded
    symmetrically so every tile has the same even size, tile maps are blended
    bilinearly between tile centres, and the padding is cropped again.

    Args:
        image: uint8 grayscale image of at least 8 x 8 pixels
        clip_limit: Normalized clip limit in [0, 1]

    Returns:
        uint8 image of the same size
    """
    image = _as_gray(image)
    height, width = image.shape
    if height < CLAHE_TILES or width < CLAHE_TILES:
        raise ParameterError("Image smaller than the CLAHE tile grid", {'shape': image.shape})
    if not 0 <= clip_limit <= 1:
        raise ParameterError("clip_limit must lie in [0, 1]", {'clip_limit': clip_limit})

    tile_h, tile_w = _even_tile(height), _even_tile(width)
    pad_h, pad_w = tile_h * CLAHE_TILES - height, tile_w * CLAHE_TILES - width
    top, left = pad_h // 2, pad_w // 2
    padded = np.pad(image.astype(np.int64), ((top, pad_h - top), (left, pad_w - left)),
                    mode='symmetric')

    mappings = _tile_mappings(padded, tile_h, tile_w, clip_limit)
    r0, r1, fy = _neighbours(padded.shape[0], tile_h)
    c0, c1, fx = _neighbours(padded.shape[1], tile_w)

    R0, C0 = r0[:, None], c0[None, :]
    R1, C1 = r1[:, None], c1[None, :]
    FY, FX = fy[:, None], fx[None, :]
    top_row = mappings[R0, C0, padded] + FX * (mappings[R0, C1, padded] - mappings[R0, C0, padded])
    bottom_row = mappings[R1, C0, padded] + FX * (mappings[R1, C1, padded] - mappings[R1, C0, padded])
    blended = top_row + FY * (bottom_row - top_row)

    out = np.floor(blended * 255 + 0.5)
    out = np.clip(out, 0, 255).astype(np.uint8)
    return out[top:top + height, left:left + width]


def median_filter(image: np.ndarray, window: int) -> np.ndarray:
    """Window x window median with symmetric border replication"""
    image = _as_gray(image)
    if window not in MEDIAN_WINDOWS:
        raise ParameterError("Median window must be 3, 5 or 7", {'window': window})
    # scipy's 'reflect' repeats the edge pixel (d c b a | a b c d)
    return ndimage.median_filter(image, size=window, mode='reflect')


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B, rounded half up"""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ParameterError("Expected an H x W x 3 image", {'shape': rgb.shape})
    luma = rgb.astype(float) @ LUMA_WEIGHTS
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def downsample4(image: np.ndarray) -> np.ndarray:
    """4 x 4 block means, rounded half up; trailing rows/columns that do not fill a block are dropped"""
    image = _as_gray(image)
    height, width = image.shape[0] // 4, image.shape[1] // 4
    if height < 1 or width < 1:
        raise ParameterError("Image too small to downsample by 4", {'shape': image.shape})
    blocks = image[:height * 4, :width * 4].astype(np.int64).reshape(height, 4, width, 4)
    return ((blocks.sum(axis=(1, 3)) + 8) // 16).astype(np.uint8)


def apply_manipulation(kind: ManipulationKind, image: np.ndarray,
                       clip_limit: float = DEFAULT_CLIP_LIMIT) -> np.ndarray:
    if kind is ManipulationKind.AHE:
        return clahe(image, clip_limit)
    return median_filter(image, kind.window)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR over the 8-bit range in dB; math.inf for identical images"""
    a, b = _as_gray(a), _as_gray(b)
    if a.shape != b.shape:
        raise ParameterError("Images differ in size", {'a': a.shape, 'b': b.shape})
    mse = float(np.mean((a.astype(float) - b.astype(float)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(255 ** 2 / mse)


def feature_snr(v: np.ndarray, v_star: np.ndarray) -> float:
    """10 log10(||v||^2 / ||v - v*||^2)"""
    v, v_star = np.asarray(v, dtype=float), np.asarray(v_star, dtype=float)
    if v.shape != v_star.shape:
        raise ParameterError("Feature vectors differ in length")
    distortion = float(np.sum((v - v_star) ** 2))
    if distortion == 0:
        raise UndefinedMetricError("Feature SNR is undefined for zero distortion")
    return 10 * math.log10(float(np.sum(v ** 2)) / distortion)


def distortion_report(v: np.ndarray, v_star: np.ndarray,
                      image: Optional[np.ndarray] = None,
                      attacked_image: Optional[np.ndarray] = None) -> DistortionReport:
    try:
        snr = feature_snr(v, v_star)
    except UndefinedMetricError:
        snr = None
    if image is not None and attacked_image is not None:
        psnr_db = psnr(image, attacked_image)
    else:
        psnr_db = math.nan
    return DistortionReport(psnr_db=psnr_db, feature_snr_db=snr,
                            euclidean=float(np.linalg.norm(np.asarray(v) - np.asarray(v_star))))
