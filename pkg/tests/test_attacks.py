"""
Tests for feature-domain, pixel-domain and EOT attacks against SVM detectors
"""
import math

import numpy as np
import pytest

from app.errors import ParameterError
from app.imaging.manipulations import median_filter
from app.imaging.spam import extract_spam, fit_normalizer
from app.ml.attacks import (AttackStatus, EotAttackConfig, FeatureAttackConfig, PixelAttackConfig,
                            attack_eot, attack_feature_domain, attack_pixel_domain, success_rate)
from app.ml.svm import KernelKind, KernelSpec, SvmModel, TrainConfig, train
from app.theory.reduction import draw_rfs
from tests.conftest import textured_image


def blob_model(rng, dim: int = 2, **kwargs) -> SvmModel:
    positive = rng.normal(loc=2.0, size=(20, dim))
    negative = rng.normal(loc=-2.0, size=(20, dim))
    X = np.vstack([positive, negative])
    y = np.array([1] * 20 + [-1] * 20)
    return train(X, y, TrainConfig(C=10.0, gamma=0.5), **kwargs)


def constant_model(bias: float, dim: int = 686) -> SvmModel:
    return SvmModel(support_vectors=np.empty((0, dim)), coefficients=np.empty(0), bias=bias,
                    kernel=KernelSpec(KernelKind.LINEAR), prob_slope=1.0, feature_dim=dim)


@pytest.mark.unit
class TestFeatureAttack:
    """Test cases for gradient descent in the feature domain"""

    def test_reaches_epsilon(self, rng):
        model = blob_model(rng)
        v = np.array([2.0, 2.0])
        outcome = attack_feature_domain(model, v, FeatureAttackConfig(epsilon=0.3))
        assert outcome.status is AttackStatus.SUCCESS
        assert outcome.final_probability <= 0.3
        assert model.probability(outcome.attacked) == pytest.approx(outcome.final_probability)
        assert outcome.initial_probability > 0.5
        assert outcome.distortion.euclidean > 0
        assert outcome.distortion.feature_snr_db is not None

    def test_already_evaded(self, rng):
        model = blob_model(rng)
        v = np.array([-2.0, -2.0])
        outcome = attack_feature_domain(model, v)
        assert outcome.status is AttackStatus.ALREADY_EVADED
        assert outcome.iterations == 0
        assert np.array_equal(outcome.attacked, v)
        assert outcome.success

    def test_trace_decreases(self, rng):
        model = blob_model(rng)
        outcome = attack_feature_domain(model, np.array([2.5, 1.5]),
                                        FeatureAttackConfig(epsilon=0.1, record_trace=True))
        assert len(outcome.trace) == outcome.iterations + 1
        assert all(b <= a for a, b in zip(outcome.trace, outcome.trace[1:]))

    def test_margin_pushes_past_boundary(self, rng):
        model = blob_model(rng)
        outcome = attack_feature_domain(model, np.array([2.0, 2.0]),
                                        FeatureAttackConfig(epsilon=0.5, margin=0.5))
        assert model.discriminant(outcome.attacked) <= -0.5

    def test_normalized_model_returns_raw_features(self, rng):
        positive = rng.normal(loc=2.0, size=(20, 3)) * [1.0, 10.0, 0.1]
        negative = rng.normal(loc=-2.0, size=(20, 3)) * [1.0, 10.0, 0.1]
        X = np.vstack([positive, negative])
        y = np.array([1] * 20 + [-1] * 20)
        normalizer = fit_normalizer(X)
        model = train(X, y, TrainConfig(C=10.0, gamma=0.5), normalizer=normalizer)
        v = positive[0]
        outcome = attack_feature_domain(model, v, FeatureAttackConfig(epsilon=0.4))
        if outcome.status is AttackStatus.SUCCESS:
            assert model.probability(outcome.attacked) <= 0.4 + 1e-9

    def test_vanishing_gradient_stalls(self):
        outcome = attack_feature_domain(constant_model(2.0, dim=3), np.ones(3))
        assert outcome.status is AttackStatus.STALLED
        assert not outcome.success

    def test_budget_exhausted(self, rng):
        model = blob_model(rng)
        outcome = attack_feature_domain(model, np.array([2.0, 2.0]),
                                        FeatureAttackConfig(step_size=1e-6, max_iterations=2))
        assert outcome.status is AttackStatus.BUDGET_EXHAUSTED
        assert outcome.iterations == 2

    @pytest.mark.parametrize('epsilon', [0.0, 0.6])
    def test_epsilon_range(self, epsilon):
        with pytest.raises(ParameterError):
            FeatureAttackConfig(epsilon=epsilon)


@pytest.mark.unit
class TestEotAttack:
    """Test cases for descent on the ensemble average"""

    def test_single_model_matches_feature_attack(self, rng):
        model = blob_model(rng)
        v = np.array([2.0, 1.0])
        eot = attack_eot([model], v, EotAttackConfig(ensemble_size=1, k=2, epsilon=0.3))
        direct = attack_feature_domain(model, v, FeatureAttackConfig(epsilon=0.3))
        assert eot.status is direct.status
        assert np.allclose(eot.attacked, direct.attacked)

    def test_ensemble_of_reduced_models(self, rng):
        models = [blob_model(rng, dim=6, feature_map=draw_rfs(6, 3, rng)) for _ in range(4)]
        v = np.full(6, 2.0)
        outcome = attack_eot(models, v, EotAttackConfig(ensemble_size=4, k=3, epsilon=0.4))
        assert outcome.status is AttackStatus.SUCCESS
        assert np.mean([m.probability(outcome.attacked) for m in models]) <= 0.4 + 1e-9

    def test_rejects_empty_or_mixed_ensembles(self, rng):
        with pytest.raises(ParameterError):
            attack_eot([], np.ones(2))
        with pytest.raises(ParameterError):
            attack_eot([blob_model(rng, dim=2), blob_model(rng, dim=3)], np.ones(2))


@pytest.mark.unit
class TestPixelAttack:
    """Test cases for greedy +-1 pixel changes"""

    def test_already_evaded(self, texture):
        outcome = attack_pixel_domain(constant_model(-1.0), texture)
        assert outcome.status is AttackStatus.ALREADY_EVADED
        assert np.array_equal(outcome.attacked, texture)
        assert outcome.distortion.psnr_db == math.inf

    def test_flat_model_stalls(self, texture):
        outcome = attack_pixel_domain(constant_model(1.0), texture)
        assert outcome.status is AttackStatus.STALLED
        assert np.array_equal(outcome.attacked, texture)

    @pytest.mark.slow
    def test_attacked_image_is_valid(self, spam_training_set):
        features, labels = spam_training_set
        model = train(features, labels, TrainConfig(C=100.0, gamma=0.125))
        image = median_filter(textured_image(500), 3)
        config = PixelAttackConfig(epsilon=0.5, pixel_fraction=0.2, max_iterations=3)
        outcome = attack_pixel_domain(model, image, config)

        attacked = outcome.attacked
        assert attacked.shape == image.shape and attacked.dtype == np.uint8
        assert np.max(np.abs(attacked.astype(int) - image.astype(int))) <= outcome.iterations
        assert outcome.final_probability <= outcome.initial_probability
        assert outcome.final_probability == pytest.approx(
            float(model.probability(extract_spam(attacked))))
        if outcome.status is AttackStatus.SUCCESS:
            assert outcome.final_probability <= 0.5
            assert outcome.distortion.psnr_db > 0

    def test_rejects_color_images(self):
        with pytest.raises(ParameterError):
            attack_pixel_domain(constant_model(1.0), np.zeros((8, 8, 3), dtype=np.uint8))


@pytest.mark.unit
def test_success_rate(rng):
    model = blob_model(rng)
    outcomes = [attack_feature_domain(model, np.array([-2.0, -2.0])),
                attack_feature_domain(constant_model(2.0, dim=2), np.ones(2))]
    assert success_rate(outcomes) == 0.5
    assert math.isnan(success_rate([]))
