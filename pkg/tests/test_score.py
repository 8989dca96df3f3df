import numpy as np
import pytest
from scipy import special

from driftguard.base import ValidationError
from driftguard.score import (
    FeatureStats,
    ScoreConfig,
    clip_score,
    kl_to_uniform,
    mahalanobis_sq,
    nonconformity,
    nonconformity_grad_logits
)


def _kl_of_logits(z: np.ndarray) -> float:
    return kl_to_uniform(special.softmax(z))


class TestKlToUniform:

    def test_uniform_is_zero(self):
        assert kl_to_uniform(np.full(4, 0.25)) == pytest.approx(0.0, abs=1e-15)

    def test_one_hot_is_log_c(self):
        assert kl_to_uniform(np.array([0.0, 1.0, 0.0, 0.0])) == pytest.approx(np.log(4))

    def test_stays_in_range(self, rng):
        for _ in range(100):
            p = special.softmax(rng.normal(scale=5, size=6))
            value = kl_to_uniform(p)
            assert 0.0 <= value <= np.log(6)

    @pytest.mark.parametrize("p", [
        [0.5, 0.6],
        [1.2, -0.2],
        [np.nan, 1.0],
        [1.0],
    ])
    def test_rejects_invalid_vectors(self, p):
        with pytest.raises(ValidationError):
            kl_to_uniform(np.array(p))


class TestMahalanobis:

    def test_identity_precision(self):
        stats = FeatureStats(np.zeros(2), np.eye(2))
        assert mahalanobis_sq(np.array([1.0, 2.0]), stats) == pytest.approx(5.0)

    def test_rejects_asymmetric_precision(self):
        with pytest.raises(ValidationError):
            FeatureStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite_precision(self):
        with pytest.raises(ValidationError):
            FeatureStats(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_rejects_dimension_mismatch(self):
        stats = FeatureStats(np.zeros(3), np.eye(3))
        with pytest.raises(ValidationError):
            mahalanobis_sq(np.zeros(2), stats)

    def test_from_features_inverts_sample_covariance(self, rng):
        features = rng.normal(size=(2000, 3)) @ np.diag([1.0, 2.0, 0.5])
        stats = FeatureStats.from_features(features, ridge=0.0)

        covariance = np.cov(features, rowvar=False)
        np.testing.assert_allclose(stats.covariance_inverse @ covariance, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(stats.mean, features.mean(axis=0))


class TestNonconformity:

    def test_uniform_prediction_at_mean_is_zero(self):
        stats = FeatureStats(np.ones(3), np.eye(3))
        value = nonconformity(np.full(3, 1 / 3), np.ones(3), stats, ScoreConfig())
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_alpha_weights_the_distance(self):
        stats = FeatureStats(np.zeros(2), np.eye(2))
        p = np.array([0.5, 0.5])
        x = np.array([2.0, 0.0])
        assert nonconformity(p, x, stats, ScoreConfig(alpha_score=0.25)) == pytest.approx(1.0)

    def test_clip(self):
        assert clip_score(60.0, 50.0) == 50.0
        assert clip_score(3.5, 50.0) == 3.5

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            ScoreConfig(alpha_score=-1.0)
        with pytest.raises(ValidationError):
            ScoreConfig(score_cap=0.0)


class TestGradLogits:

    def test_matches_central_differences(self, rng):
        h = 1e-6
        for _ in range(50):
            z = rng.normal(scale=2.0, size=4)
            analytic = nonconformity_grad_logits(z)

            numeric = np.empty(4)
            for k in range(4):
                step = np.zeros(4)
                step[k] = h
                numeric[k] = (_kl_of_logits(z + step) - _kl_of_logits(z - step)) / (2 * h)

            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_entries_sum_to_zero(self, rng):
        for _ in range(20):
            g = nonconformity_grad_logits(rng.normal(size=5))
            assert g.sum() == pytest.approx(0.0, abs=1e-14)

    def test_shift_invariant(self):
        z = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(
            nonconformity_grad_logits(z),
            nonconformity_grad_logits(z + 7.0),
            atol=1e-14
        )
