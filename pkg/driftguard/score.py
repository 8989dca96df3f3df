"""
Non-conformity scores: confidence deviation from uniform plus a scaled
Mahalanobis distance of the frozen feature to the training mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .base import ValidationError
from .utility import check_finite


SUM_TOLERANCE: float = 1e-9


@dataclass(frozen=True)
class ScoreConfig:
    """Scaling of the Mahalanobis term and the detector-side score cap"""

    alpha_score: float = 0.5
    score_cap: float = 50.0

    def __post_init__(self) -> None:
        """"""
        if not np.isfinite(self.alpha_score) or self.alpha_score < 0:
            raise ValidationError(f"alpha_score must be >= 0, got {self.alpha_score}")
        if not self.score_cap > 0:
            raise ValidationError(f"score_cap must be > 0, got {self.score_cap}")

    def to_dict(self) -> dict:
        """"""
        return {"alpha_score": self.alpha_score, "score_cap": self.score_cap}

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreConfig":
        """"""
        return cls(**data)


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Training feature mean and precision matrix"""

    mean: np.ndarray
    covariance_inverse: np.ndarray
    cholesky: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """"""
        mean: np.ndarray = check_finite(self.mean, "mean").reshape(-1)
        precision: np.ndarray = check_finite(self.covariance_inverse, "covariance_inverse")

        d: int = mean.shape[0]
        if precision.shape != (d, d):
            raise ValidationError(
                f"covariance_inverse shape {precision.shape} does not match mean dimension {d}"
            )

        if not np.allclose(precision, precision.T, rtol=0, atol=SUM_TOLERANCE):
            raise ValidationError("covariance_inverse must be symmetric")

        # Positive definiteness via Cholesky success
        try:
            factor, _ = linalg.cho_factor(precision, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("covariance_inverse must be positive definite")

        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance_inverse", precision)
        object.__setattr__(self, "cholesky", np.tril(factor))

    @property
    def d(self) -> int:
        """Feature dimension"""
        return self.mean.shape[0]

    @classmethod
    def from_features(cls, features: np.ndarray, ridge: float = 1e-6) -> "FeatureStats":
        """Estimate mean and ridge-regularised precision from calibration features"""
        features = check_finite(features, "features")
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValidationError("need at least two feature rows to estimate covariance")

        mean: np.ndarray = features.mean(axis=0)
        covariance: np.ndarray = np.cov(features, rowvar=False).reshape(features.shape[1], -1)
        covariance = covariance + ridge * np.eye(features.shape[1])

        try:
            factor = linalg.cho_factor(covariance, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("feature covariance is not positive definite")

        precision: np.ndarray = linalg.cho_solve(factor, np.eye(features.shape[1]))
        precision = 0.5 * (precision + precision.T)
        return cls(mean, precision)

    def to_dict(self) -> dict:
        """"""
        return {
            "mean": self.mean.tolist(),
            "covariance_inverse": self.covariance_inverse.tolist()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        """"""
        return cls(np.asarray(data["mean"]), np.asarray(data["covariance_inverse"]))


def check_probability(p: np.ndarray) -> np.ndarray:
    """Validate a probability vector"""
    p = check_finite(p, "probability vector").reshape(-1)

    if p.shape[0] < 2:
        raise ValidationError("probability vector needs at least two classes")
    if np.any(p < 0):
        raise ValidationError("probability entries must be nonnegative")
    if abs(p.sum() - 1.0) > SUM_TOLERANCE:
        raise ValidationError(f"probability vector sums to {p.sum()!r}, not 1")

    return p


def kl_to_uniform(p: np.ndarray) -> float:
    """KL divergence from p to the uniform distribution, ln C - H(p)"""
    p = check_probability(p)
    c: int = p.shape[0]

    # xlogy gives 0 for 0 * log(0)
    value: float = float(special.xlogy(p, p * c).sum())
    return min(max(value, 0.0), float(np.log(c)))


def mahalanobis_sq(x: np.ndarray, stats: FeatureStats) -> float:
    """Squared Mahalanobis distance of x to the training mean"""
    x = check_finite(x, "feature").reshape(-1)
    if x.shape[0] != stats.d:
        raise ValidationError(f"feature dimension {x.shape[0]} does not match stats dimension {stats.d}")

    offset: np.ndarray = x - stats.mean
    value: float = float(offset @ stats.covariance_inverse @ offset)
    return max(value, 0.0)


def nonconformity(
    p: np.ndarray,
    x: np.ndarray,
    stats: FeatureStats,
    cfg: ScoreConfig
) -> float:
    """Score S_t = KL(p || uniform) + alpha_score * Mahalanobis^2"""
    return kl_to_uniform(p) + cfg.alpha_score * mahalanobis_sq(x, stats)


def clip_score(score: float, cap: float) -> float:
    """Clip a score at the detector cap S_max"""
    return min(float(score), float(cap))


def nonconformity_grad_logits(logits: np.ndarray) -> np.ndarray:
    """Gradient of KL(softmax(logits) || uniform) with respect to logits"""
    logits = check_finite(logits, "logits").reshape(-1)

    log_p: np.ndarray = special.log_softmax(logits)
    p: np.ndarray = np.exp(log_p)

    # d/dz_k sum_i p_i log p_i = p_k (log p_k - sum_i p_i log p_i)
    neg_entropy: float = float(p @ log_p)
    # Entries sum to zero
    return p * (log_p - neg_entropy)
