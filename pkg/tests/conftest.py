"""
Test configuration and fixtures
Image fixtures are synthetic (seeded textures, ramps, checkerboards), so no corpus is needed
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.imaging.image_io import encode_pgm
from app.imaging.manipulations import median_filter


def textured_image(seed: int, shape=(32, 32)) -> np.ndarray:
    """Smooth random texture with mild noise, uint8"""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(40, 215, size=(shape[0] // 8 + 2, shape[1] // 8 + 2))
    rows = np.linspace(0, coarse.shape[0] - 1.001, shape[0])
    cols = np.linspace(0, coarse.shape[1] - 1.001, shape[1])
    r0, c0 = rows.astype(int), cols.astype(int)
    fr, fc = (rows - r0)[:, None], (cols - c0)[None, :]
    smooth = (coarse[r0][:, c0] * (1 - fr) * (1 - fc) + coarse[r0 + 1][:, c0] * fr * (1 - fc)
              + coarse[r0][:, c0 + 1] * (1 - fr) * fc + coarse[r0 + 1][:, c0 + 1] * fr * fc)
    noisy = smooth + rng.normal(0, 6, size=shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ramp_image():
    """Horizontal ramp: every pixel one level brighter than its left neighbour"""
    return np.tile(np.arange(16, dtype=np.uint8) + 100, (16, 1))


@pytest.fixture
def checkerboard_image():
    board = (np.indices((16, 16)).sum(axis=0) % 2) * 200 + 20
    return board.astype(np.uint8)


@pytest.fixture
def texture():
    return textured_image(7)


@pytest.fixture
def spam_training_set():
    """SPAM features of textures (original, -1) and their 3x3 median filtered versions (+1)"""
    from app.imaging.spam import extract_spam
    from app.ml.evaluation import labelled

    originals = [textured_image(100 + i) for i in range(24)]
    filtered = [median_filter(image, 3) for image in originals]
    return labelled(np.array([extract_spam(i) for i in originals]),
                    np.array([extract_spam(i) for i in filtered]))


@pytest.fixture
def corpus_dir(tmp_path):
    """Directory of 12 PGM images of 128x128 (32x32 after 4x downsampling) plus one broken file"""
    root = tmp_path / 'corpus'
    root.mkdir()
    for i in range(12):
        image = textured_image(200 + i, shape=(128, 128))
        (root / f"img_{i:02d}.pgm").write_bytes(encode_pgm(image))
    (root / 'broken.pgm').write_bytes(b'P5\n128 128\n255\n' + b'\x00' * 10)
    return root


@pytest.fixture
def desk_config(tmp_path, corpus_dir):
    """Tiny experiment configuration over the synthetic corpus"""
    from app.config import ExperimentConfig

    return ExperimentConfig(corpus_root=str(corpus_dir), train_size=8, test_size=4, min_side=32,
                            manipulations=['mf3'], svm_gamma=2.0 ** -3, svm_folds=2,
                            ks=[10, 686], maps_per_k=2, pixel_maps_per_k=1, epsilons=[0.5],
                            feature_max_iterations=200, pixel_images=2, pixel_max_iterations=3,
                            theory_n=20, theory_ks=[1, 10, 20], repetitions=4,
                            samples_per_point=400, angle_draws=20, angle_ks=[5, 10],
                            output_dir=str(tmp_path / 'out'))
