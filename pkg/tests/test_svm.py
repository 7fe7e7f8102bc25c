"""
Tests for SVM training, gradients, calibration and persistence
"""
import json

import numpy as np
import pytest

from app.errors import ConvergenceWarning, ParameterError, ParseError, TrainingError
from app.imaging.spam import FeatureNormalizer, fit_normalizer
from app.ml.svm import (KernelKind, KernelSpec, SvmModel, TrainConfig, canonical_order,
                        fit_probability_slope, kkt_residual, load_model, save_model,
                        select_gamma, select_hyperparameters, support_vector_fraction, train,
                        training_summary)
from app.theory.reduction import draw_rfs, draw_rp


def hand_model(rng, kernel: KernelSpec, dim: int = 6, feature_map=None, normalizer=None) -> SvmModel:
    input_dim = feature_map.rows if feature_map is not None else dim
    coefficients = rng.normal(size=5)
    coefficients -= coefficients.mean()
    return SvmModel(support_vectors=rng.normal(size=(5, input_dim)), coefficients=coefficients,
                    bias=0.3, kernel=kernel, prob_slope=1.7, feature_dim=dim,
                    normalizer=normalizer, feature_map=feature_map)


def numeric_gradient(model: SvmModel, v: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(v)
    for i in range(v.size):
        step = np.zeros_like(v)
        step[i] = h
        grad[i] = (model.discriminant(v + step) - model.discriminant(v - step)) / (2 * h)
    return grad


def separable_blobs(rng, size: int = 20):
    positive = rng.normal(loc=3.0, size=(size, 2))
    negative = rng.normal(loc=-3.0, size=(size, 2))
    return np.vstack([positive, negative]), np.array([1] * size + [-1] * size)


@pytest.mark.unit
class TestGradients:
    """Test cases for analytic discriminant gradients"""

    KERNELS = [KernelSpec(KernelKind.RBF, gamma=0.4),
               KernelSpec(KernelKind.POLYNOMIAL, degree=3, coef0=1.0),
               KernelSpec(KernelKind.LINEAR)]

    @pytest.mark.parametrize('kernel', KERNELS, ids=lambda k: k.kind.value)
    def test_matches_finite_differences(self, rng, kernel):
        model = hand_model(rng, kernel)
        for _ in range(10):
            v = rng.normal(size=6)
            assert np.allclose(model.gradient(v), numeric_gradient(model, v), rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize('kernel', KERNELS, ids=lambda k: k.kind.value)
    def test_with_normalizer_and_map(self, rng, kernel):
        normalizer = FeatureNormalizer(scale=rng.uniform(0.5, 2.0, size=8))
        for reduction in (draw_rfs(8, 3, rng), draw_rp(8, 4, rng)):
            model = hand_model(rng, kernel, dim=8, feature_map=reduction, normalizer=normalizer)
            v = rng.normal(size=8)
            assert np.allclose(model.gradient(v), numeric_gradient(model, v), rtol=1e-5, atol=1e-7)

    def test_unselected_features_have_zero_gradient(self, rng):
        reduction = draw_rfs(8, 3, rng)
        model = hand_model(rng, KernelSpec(KernelKind.RBF, gamma=0.5), dim=8, feature_map=reduction)
        grad = model.gradient(rng.normal(size=8))
        unselected = np.setdiff1d(np.arange(8), reduction.indices)
        assert np.all(grad[unselected] == 0)


@pytest.mark.unit
class TestModel:
    """Test cases for the discriminant, probability and persistence"""

    def test_probability_is_half_at_boundary(self, rng):
        model = hand_model(rng, KernelSpec(KernelKind.LINEAR))
        assert float(model.probability_from_score(0.0)) == 0.5

    def test_batch_matches_rows(self, rng):
        model = hand_model(rng, KernelSpec(KernelKind.RBF, gamma=0.2))
        batch = rng.normal(size=(4, 6))
        scores = model.discriminant(batch)
        assert scores[2] == pytest.approx(model.discriminant(batch[2]))
        assert model.decide(batch).tolist() == (scores > 0).tolist()

    def test_dimension_mismatch(self, rng):
        model = hand_model(rng, KernelSpec(KernelKind.LINEAR))
        with pytest.raises(ParameterError):
            model.discriminant(np.ones(5))

    def test_save_load(self, tmp_path, rng):
        model = hand_model(rng, KernelSpec(KernelKind.RBF, gamma=0.7), dim=8,
                           feature_map=draw_rfs(8, 4, rng, seed=5),
                           normalizer=FeatureNormalizer(scale=np.full(8, 2.0)))
        path = save_model(model, tmp_path / 'models' / 'm.json')
        loaded = load_model(path)
        v = rng.normal(size=8)
        assert loaded.discriminant(v) == model.discriminant(v)
        assert loaded.feature_map.seed == 5

    def test_rejects_unbalanced_coefficients(self, rng):
        data = hand_model(rng, KernelSpec(KernelKind.LINEAR)).to_dict()
        data['coefficients'][0] += 1.0
        with pytest.raises(ParseError) as exc_info:
            SvmModel.from_dict(data)
        assert exc_info.value.field == 'coefficients'

    def test_rejects_unknown_kernel(self, rng):
        data = hand_model(rng, KernelSpec(KernelKind.LINEAR)).to_dict()
        data['kernel']['kind'] = 'sigmoid'
        with pytest.raises(ParseError):
            SvmModel.from_dict(data)

    def test_rejects_future_schema(self, tmp_path, rng):
        data = hand_model(rng, KernelSpec(KernelKind.LINEAR)).to_dict()
        data['schema_version'] = 99
        path = tmp_path / 'm.json'
        path.write_text(json.dumps(data))
        with pytest.raises(ParseError):
            load_model(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'm.json'
        path.write_text('{"kernel": ')
        with pytest.raises(ParseError) as exc_info:
            load_model(path)
        assert exc_info.value.offset is not None


@pytest.mark.unit
class TestTraining:
    """Test cases for train and hyperparameter selection"""

    def test_separates_blobs(self, rng):
        X, y = separable_blobs(rng)
        model = train(X, y, TrainConfig(C=10.0, gamma=0.5))
        assert np.all(np.where(model.discriminant(X) > 0, 1, -1) == y)
        assert model.meta['training_accuracy'] == 1.0
        assert model.prob_slope > 0
        assert model.probability(np.array([3.0, 3.0])) > 0.5

    def test_kkt_conditions(self, rng):
        X, y = separable_blobs(rng)
        X = X + rng.normal(scale=2.0, size=X.shape)
        config = TrainConfig(C=5.0, gamma=0.5, smo_tolerance=1e-4)
        model = train(X, y, config)
        assert kkt_residual(model, X, y, config.C) <= 1e-2

    def test_order_invariance(self, rng):
        X, y = separable_blobs(rng)
        X = X + rng.normal(scale=2.0, size=X.shape)
        config = TrainConfig(C=5.0, gamma=0.5)
        permutation = rng.permutation(len(y))
        a = train(X, y, config)
        b = train(X[permutation], y[permutation], config)
        points = rng.normal(size=(10, 2))
        assert np.allclose(a.discriminant(points), b.discriminant(points), atol=1e-9)

    def test_canonical_order_ignores_input_order(self, rng):
        X, y = separable_blobs(rng, size=5)
        permutation = rng.permutation(len(y))
        assert np.array_equal(X[canonical_order(X, y, 3)],
                              X[permutation][canonical_order(X[permutation], y[permutation], 3)])

    def test_single_class_rejected(self, rng):
        with pytest.raises(TrainingError):
            train(rng.normal(size=(6, 2)), [1] * 6, TrainConfig(gamma=1.0))

    def test_too_few_for_folds(self, rng):
        X, y = separable_blobs(rng, size=3)
        with pytest.raises(TrainingError):
            train(X, y, TrainConfig(folds=5))

    def test_bad_labels(self, rng):
        with pytest.raises(TrainingError):
            train(rng.normal(size=(4, 2)), [0, 1, 0, 1], TrainConfig(gamma=1.0))

    def test_grid_ties_pick_smallest_gamma(self, rng):
        X, y = separable_blobs(rng)
        result = select_hyperparameters(X, y, TrainConfig(gamma_grid=(1.0, 0.25), folds=2))
        assert result.accuracy[(0.25, 100.0)] == 1.0
        assert result.gamma == 0.25
        assert select_gamma(X, y, TrainConfig(gamma_grid=(1.0, 0.25), folds=2)) == 0.25

    def test_c_grid_searched(self, rng):
        X, y = separable_blobs(rng)
        result = select_hyperparameters(X, y, TrainConfig(gamma_grid=(0.5,), c_grid=(1.0, 10.0),
                                                          folds=2))
        assert set(result.accuracy) == {(0.5, 1.0), (0.5, 10.0)}

    def test_reduced_training_keeps_full_input(self, spam_training_set, rng):
        features, labels = spam_training_set
        reduction = draw_rfs(686, 40, rng)
        model = train(features, labels, TrainConfig(gamma=0.125), feature_map=reduction)
        assert model.feature_dim == 686
        assert model.support_vectors.shape[1] == 40
        assert model.discriminant(features).shape == (len(labels),)

    def test_normalized_training(self, spam_training_set):
        features, labels = spam_training_set
        normalizer = fit_normalizer(features)
        model = train(features, labels, TrainConfig(gamma=2.0 ** -9), normalizer=normalizer)
        assert model.normalizer is normalizer
        assert model.meta['training_accuracy'] >= 0.9

    def test_convergence_warning(self, rng):
        X, y = separable_blobs(rng)
        X = X + rng.normal(scale=3.0, size=X.shape)
        with pytest.warns(ConvergenceWarning):
            model = train(X, y, TrainConfig(C=1000.0, gamma=4.0, max_passes=2))
        assert model.meta['converged'] is False


@pytest.mark.unit
class TestCalibration:
    """Test cases for the logistic slope and summaries"""

    def test_slope_positive_for_separating_scores(self):
        scores = np.array([-2.0, -1.0, -0.5, 0.4, 1.0, 2.5])
        labels = np.array([-1, -1, 1, -1, 1, 1])
        assert fit_probability_slope(scores, labels) > 0

    def test_inverted_scores_fall_back(self):
        scores = np.array([-2.0, -1.0, 1.0, 2.0])
        labels = np.array([1, 1, -1, -1])
        assert fit_probability_slope(scores, labels) == 1.0

    def test_training_summary(self, rng):
        X, y = separable_blobs(rng)
        model = train(X, y, TrainConfig(C=10.0, gamma=0.5))
        rows = training_summary({'mf3': model})
        assert rows[0]['manipulation'] == 'mf3'
        assert rows[0]['support_vectors'] == model.n_support
        assert support_vector_fraction(model) == pytest.approx(model.n_support / 40)
