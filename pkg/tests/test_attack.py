"""
Tests for the full-detector attack and its statistics on reduced detectors
"""
import math

import numpy as np
import pytest

from app.errors import DegenerateInputError, ParameterError
from app.theory.attack import (AttackConfig, angle_mismatch, attacked_statistics, decompose_attack,
                               optimal_attack, transfer_factor, z_att_iid)
from app.theory.detector import build_detector, eta, z_value
from app.theory.models import (GaussianHypothesisModel, Hypothesis, Regime, make_dependent_model,
                               make_iid_model, make_model, sample)
from app.theory.reduction import ReductionKind, draw_map, draw_rfs, identity_map, reduce_model


@pytest.mark.unit
class TestOptimalAttack:
    """Test cases for v* = v - alpha (w^T v / ||w||^2) w"""

    def test_alpha_one_lands_on_boundary(self, rng):
        model = make_dependent_model(8, False, rng)
        detector = build_detector(model)
        v = sample(model, Hypothesis.H0_MANIPULATED, rng)
        assert detector.score(optimal_attack(detector, v, 1.0)) == pytest.approx(0.0, abs=1e-9)

    def test_attacked_score_scales_with_alpha(self, rng):
        model = make_iid_model(6, 3.0)
        detector = build_detector(model)
        v = sample(model, Hypothesis.H0_MANIPULATED, rng)
        attacked = optimal_attack(detector, v, 1.5)
        assert detector.score(attacked) == pytest.approx(-0.5 * detector.score(v))

    def test_batch_matches_rows(self, rng):
        model = make_dependent_model(5, True, rng)
        detector = build_detector(model)
        batch = sample(model, Hypothesis.H0_MANIPULATED, rng, size=4)
        attacked = optimal_attack(detector, batch, 2.0)
        assert np.allclose(attacked[3], optimal_attack(detector, batch[3], 2.0))

    def test_decomposition(self, rng):
        model = make_dependent_model(7, False, rng)
        detector = build_detector(model)
        v = sample(model, Hypothesis.H0_MANIPULATED, rng)
        scale, direction = decompose_attack(detector, v, 1.2)
        assert np.linalg.norm(direction) == pytest.approx(1.0)
        assert np.allclose(v - scale * direction, optimal_attack(detector, v, 1.2))

    def test_alpha_below_one_rejected(self):
        with pytest.raises(ParameterError):
            AttackConfig(alpha=0.9)
        with pytest.raises(ParameterError):
            optimal_attack(build_detector(make_iid_model(2, 1.0)), np.ones(2), 0.5)

    def test_zero_detector_rejected(self):
        detector = build_detector(GaussianHypothesisModel(mean=np.zeros(2), covariance=np.eye(2)))
        with pytest.raises(DegenerateInputError):
            optimal_attack(detector, np.ones(2), 1.0)


@pytest.mark.unit
class TestAttackedStatistics:
    """Test cases for the statistics of the reduced score after the attack"""

    def test_full_map_flips_sign(self):
        model = make_iid_model(300, 4.0)
        stats = attacked_statistics(model, identity_map(300), 1.2)
        assert stats.z_att == pytest.approx(-4.0, rel=1e-9)

    def test_alpha_one_full_map_is_zero(self, rng):
        model = make_dependent_model(10, True, rng)
        stats = attacked_statistics(model, identity_map(10), 1.0)
        assert stats.z_att == 0.0
        assert stats.p_md_attack == 0.5

    def test_alpha_one_iid_is_zero(self, rng):
        model = make_iid_model(100, 4.0)
        stats = attacked_statistics(model, draw_rfs(100, 30, rng), 1.0)
        assert stats.z_att == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize('alpha', [1.0, 1.2, 2.0])
    def test_iid_closed_form(self, rng, alpha):
        model = make_iid_model(300, 4.0)
        for k in (1, 50, 150, 299):
            reduction = draw_rfs(300, k, rng)
            stats = attacked_statistics(model, reduction, alpha)
            assert stats.z_att == pytest.approx(z_att_iid(k / 300, alpha, 4.0), abs=1e-9)

    def test_no_attack_error_uses_reduced_z(self, rng):
        model = make_dependent_model(12, False, rng)
        reduction = draw_rfs(12, 5, rng)
        stats = attacked_statistics(model, reduction, 1.2)
        assert math.sqrt(stats.y) == pytest.approx(z_value(reduce_model(reduction, model)))
        assert stats.y / stats.x == pytest.approx(eta(model, reduction))

    def test_transfer_factor_matches_closed_form(self):
        for eta_value in (0.1, 0.5, 0.9):
            expected = abs(z_att_iid(eta_value, 2.0, 4.0)) / 4.0
            assert transfer_factor(eta_value, 2.0) == pytest.approx(expected)

    @pytest.mark.slow
    def test_mean_and_variance_match_sampling(self):
        for i in range(50):
            rng = np.random.default_rng(1000 + i)
            regime = (Regime.IID, Regime.DEPENDENT, Regime.DEPENDENT_NORMALIZED)[i % 3]
            model = make_model(regime, 10, 3.0, rng)
            kind = ReductionKind.RFS if i % 2 else ReductionKind.RP
            reduction = draw_map(kind, 10, int(rng.integers(1, 10)), rng)
            alpha = float(rng.uniform(1.0, 2.5))
            stats = attacked_statistics(model, reduction, alpha)

            reduced_detector = build_detector(reduce_model(reduction, model))
            draws = sample(model, Hypothesis.H0_MANIPULATED, rng, size=100_000)
            attacked = optimal_attack(build_detector(model), draws, alpha)
            scores = reduced_detector.score(reduction.apply(attacked))

            m = scores.size
            stderr_mean = math.sqrt(stats.var_rho_r / m)
            stderr_var = stats.var_rho_r * math.sqrt(2 / (m - 1))
            assert abs(scores.mean() - stats.mean_rho_r) <= 4 * stderr_mean + 1e-9
            assert abs(scores.var(ddof=1) - stats.var_rho_r) <= 4 * stderr_var + 1e-9

    def test_reduced_scores_share_variance_and_covariance(self, rng):
        model = make_dependent_model(8, True, rng)
        reduction = draw_rfs(8, 3, rng)
        reduced = reduce_model(reduction, model)
        w = model.solve(model.mean)
        w_r = reduced.solve(reduced.mean)
        # cov(w_r^T S v, w^T v) = w_r^T S Sigma w = w_r^T S u = y
        assert float(w_r @ reduction.apply(model.covariance @ w)) == pytest.approx(
            float(reduced.mean @ w_r))


@pytest.mark.unit
class TestClosedForms:
    """Test cases for the i.i.d. closed forms"""

    def test_full_eta_gives_minus_z(self):
        assert z_att_iid(1.0, 1.2, 4.0) == pytest.approx(-4.0)

    def test_alpha_one_gives_zero(self):
        assert z_att_iid(0.3, 1.0, 4.0) == 0.0

    def test_rejects_eta_out_of_range(self):
        with pytest.raises(ParameterError):
            z_att_iid(0.0, 1.2, 4.0)
        with pytest.raises(ParameterError):
            transfer_factor(1.5, 1.2)

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateInputError):
            z_att_iid(1.0, 1.0, 4.0)


@pytest.mark.unit
class TestAngleMismatch:
    """Test cases for the angle between reduced detector and projected attack"""

    def test_iid_rfs_is_zero(self, rng):
        model = make_iid_model(50, 4.0)
        for k in (1, 10, 50):
            assert angle_mismatch(model, draw_rfs(50, k, rng)) == 0.0

    def test_full_map_is_zero(self, rng):
        model = make_dependent_model(20, False, rng)
        assert angle_mismatch(model, identity_map(20)) == pytest.approx(0.0, abs=1e-3)

    def test_dependent_angle_in_range(self, rng):
        model = make_dependent_model(30, True, rng)
        angle = angle_mismatch(model, draw_rfs(30, 10, rng))
        assert 0.0 <= angle <= 90.0
