"""
Tests for SPAM feature extraction, incremental updates and normalization
"""
import numpy as np
import pytest

from app.errors import CacheInvalidError, ParameterError, ParseError
from app.imaging.spam import (SPAM_DIM, STEPS, T, FeatureNormalizer, SpamCache, extract_spam,
                              fit_normalizer, incremental_update)


def naive_spam(image: np.ndarray) -> np.ndarray:
    """Direct loop over every pixel and direction"""
    image = image.astype(int)
    rows, cols = image.shape
    transitions = []
    for dr, dc in STEPS:
        counts = np.zeros((7, 7, 7))
        for r in range(rows):
            for c in range(cols):
                if not (0 <= r + 3 * dr < rows and 0 <= c + 3 * dc < cols):
                    continue
                taps = [image[r + t * dr, c + t * dc] for t in range(4)]
                d = [int(np.clip(taps[t] - taps[t + 1], -T, T)) + T for t in range(3)]
                counts[d[0], d[1], d[2]] += 1
        totals = counts.sum(axis=2, keepdims=True)
        probs = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
        transitions.append(probs.ravel())
    transitions = np.array(transitions)
    return np.concatenate([transitions[:4].mean(axis=0), transitions[4:].mean(axis=0)])


def code(d1, d2, d3) -> int:
    return (d1 + T) * 49 + (d2 + T) * 7 + (d3 + T)


@pytest.mark.unit
class TestExtraction:
    """Test cases for extract_spam"""

    def test_dimension(self, texture):
        assert extract_spam(texture).shape == (SPAM_DIM,)
        assert SPAM_DIM == 686

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_naive_loop(self, seed):
        image = np.random.default_rng(seed).integers(0, 256, size=(16, 16)).astype(np.uint8)
        assert np.allclose(extract_spam(image), naive_spam(image), atol=1e-12)

    def test_matches_naive_loop_on_texture(self, texture):
        assert np.allclose(extract_spam(texture), naive_spam(texture), atol=1e-12)

    def test_constant_image(self):
        features = extract_spam(np.full((10, 12), 77, dtype=np.uint8))
        expected = np.zeros(SPAM_DIM)
        expected[code(0, 0, 0)] = 1.0
        expected[343 + code(0, 0, 0)] = 1.0
        assert np.array_equal(features, expected)

    def test_ramp(self, ramp_image):
        features = extract_spam(ramp_image)
        assert features[code(-1, -1, -1)] == pytest.approx(0.25)
        assert features[code(1, 1, 1)] == pytest.approx(0.25)
        assert features[code(0, 0, 0)] == pytest.approx(0.5)
        assert features[343 + code(-1, -1, -1)] == pytest.approx(0.5)
        assert features[343 + code(1, 1, 1)] == pytest.approx(0.5)
        assert np.count_nonzero(features) == 5

    def test_differences_are_clipped(self, checkerboard_image):
        features = extract_spam(checkerboard_image)
        assert np.count_nonzero(features[:343]) > 0
        assert features[code(T, -T, T)] + features[code(-T, T, -T)] > 0

    def test_rejects_small_or_color_images(self):
        with pytest.raises(ParameterError):
            extract_spam(np.zeros((3, 10), dtype=np.uint8))
        with pytest.raises(ParameterError):
            extract_spam(np.zeros((8, 8, 3), dtype=np.uint8))


@pytest.mark.unit
class TestIncrementalUpdate:
    """Test cases for SpamCache"""

    def test_set_pixel_matches_full_recompute(self, texture, rng):
        cache = SpamCache(texture)
        for _ in range(40):
            row, col = (int(v) for v in rng.integers(0, 32, size=2))
            value = int(rng.integers(0, 256))
            features = cache.set_pixel(row, col, value)
            assert np.allclose(features, extract_spam(cache.image()), atol=1e-12)
        assert cache.recount()

    def test_corner_and_edge_pixels(self, texture):
        cache = SpamCache(texture)
        for row, col in [(0, 0), (0, 31), (31, 0), (31, 31), (2, 0), (0, 17)]:
            cache.set_pixel(row, col, 255 - int(cache.pixels[row, col]))
        assert cache.recount()

    def test_candidate_features_are_independent(self, texture):
        cache = SpamCache(texture)
        rows, cols, values = [3, 3, 20], [4, 5, 30], [0, 255, 128]
        candidates = cache.candidate_features(rows, cols, values, chunk_size=2)
        for i in range(3):
            edited = texture.copy()
            edited[rows[i], cols[i]] = values[i]
            assert np.allclose(candidates[i], extract_spam(edited), atol=1e-12)
        assert np.array_equal(cache.image(), texture)

    def test_apply_edits_sequential(self, texture):
        cache = SpamCache(texture)
        features = cache.apply_edits([5, 5], [5, 6], [10, 250])
        edited = texture.copy()
        edited[5, 5], edited[5, 6] = 10, 250
        assert np.allclose(features, extract_spam(edited))

    def test_incremental_update_checks_image(self, texture):
        cache = SpamCache(texture)
        features = incremental_update(texture, cache, (1, 1), 0)
        edited = texture.copy()
        edited[1, 1] = 0
        assert np.allclose(features, extract_spam(edited))
        with pytest.raises(CacheInvalidError):
            incremental_update(texture, cache, (2, 2), 0)

    def test_rejects_invalid_edits(self, texture):
        cache = SpamCache(texture)
        with pytest.raises(ParameterError):
            cache.count_delta([0], [0], [256])
        with pytest.raises(ParameterError):
            cache.count_delta([32], [0], [1])


@pytest.mark.unit
class TestNormalizer:
    """Test cases for per-feature scaling"""

    def test_fit_uses_sample_std(self, rng):
        features = rng.normal(size=(10, 4))
        normalizer = fit_normalizer(features)
        assert np.allclose(normalizer.scale, features.std(axis=0, ddof=1))

    def test_constant_feature_floor(self):
        features = np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]])
        normalizer = fit_normalizer(features)
        assert normalizer.scale[0] == 1e-8
        assert np.allclose(normalizer.invert(normalizer.apply(features)), features)

    def test_rejects_single_row(self):
        with pytest.raises(ParameterError):
            fit_normalizer(np.ones((1, 3)))

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            FeatureNormalizer(scale=np.ones(3)).apply(np.ones(4))

    def test_save_load(self, tmp_path, rng):
        normalizer = fit_normalizer(rng.normal(size=(5, 3)))
        path = tmp_path / 'normalizer.json'
        normalizer.save(path)
        assert np.array_equal(FeatureNormalizer.load(path).scale, normalizer.scale)

    def test_missing_scale(self):
        with pytest.raises(ParseError):
            FeatureNormalizer.from_dict({})
