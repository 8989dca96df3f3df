"""
Linear softmax head over frozen features, the learnable prompt stand-in.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import special

from .base import InputFormatError, ValidationError
from .score import FeatureStats, ScoreConfig, clip_score, nonconformity, nonconformity_grad_logits
from .utility import check_finite, load_json, save_json


DEFAULT_C: int = 4
DEFAULT_D: int = 8


class PromptParams:
    """Parameter matrix P (C x d) of the softmax head"""

    def __init__(self, weights: np.ndarray) -> None:
        """"""
        weights = check_finite(weights, "weights")
        if weights.ndim != 2 or weights.shape[0] < 2 or weights.shape[1] < 1:
            raise ValidationError(f"weights must be a C x d matrix with C >= 2, got {weights.shape}")

        self._weights: np.ndarray = weights.copy()
        self._weights.setflags(write=False)

    @property
    def weights(self) -> np.ndarray:
        """Read-only view of P"""
        return self._weights

    @property
    def C(self) -> int:
        """"""
        return self._weights.shape[0]

    @property
    def d(self) -> int:
        """"""
        return self._weights.shape[1]

    def replace(self, weights: np.ndarray) -> "PromptParams":
        """New params of the same shape"""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != self._weights.shape:
            raise ValidationError(f"shape {weights.shape} differs from {self._weights.shape}")
        return PromptParams(weights)

    @classmethod
    def zeros(cls, C: int = DEFAULT_C, d: int = DEFAULT_D) -> "PromptParams":
        """"""
        return cls(np.zeros((C, d)))

    @classmethod
    def from_class_means(cls, features: np.ndarray, labels: np.ndarray, C: int) -> "PromptParams":
        """Initialise row c with the mean training feature of class c"""
        features = check_finite(features, "features")
        labels = np.asarray(labels, dtype=int).reshape(-1)

        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ValidationError("features and labels must have matching rows")

        weights: np.ndarray = np.zeros((C, features.shape[1]))
        for c in range(C):
            mask: np.ndarray = labels == c
            if mask.any():
                weights[c] = features[mask].mean(axis=0)

        return cls(weights)

    def to_dict(self) -> dict:
        """Row-major matrix with a C, d header"""
        return {"C": self.C, "d": self.d, "weights": self._weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PromptParams":
        """"""
        try:
            C: int = int(data["C"])
            d: int = int(data["d"])
            weights: np.ndarray = np.asarray(data["weights"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InputFormatError(f"Invalid params document: {e}")

        if weights.shape != (C, d):
            raise InputFormatError(f"weights shape {weights.shape} does not match header ({C}, {d})")
        return cls(weights)

    def save(self, filepath: str | Path) -> Path:
        """"""
        return save_json(filepath, self.to_dict())

    @classmethod
    def load(cls, filepath: str | Path) -> "PromptParams":
        """"""
        return cls.from_dict(load_json(filepath))

    def __eq__(self, other: object) -> bool:
        """"""
        if not isinstance(other, PromptParams):
            return NotImplemented
        return np.array_equal(self._weights, other._weights)

    def __repr__(self) -> str:
        """"""
        return f"PromptParams(C={self.C}, d={self.d})"


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """Frozen feature with its class label"""

    feature: np.ndarray
    label: int

    def __post_init__(self) -> None:
        """"""
        object.__setattr__(self, "feature", check_finite(self.feature, "feature").reshape(-1))
        object.__setattr__(self, "label", int(self.label))

    def check(self, params: PromptParams) -> None:
        """"""
        if self.feature.shape[0] != params.d:
            raise ValidationError(f"feature dimension {self.feature.shape[0]} does not match d={params.d}")
        if not 0 <= self.label < params.C:
            raise ValidationError(f"label {self.label} out of range [0, {params.C})")


def _check_feature(params: PromptParams, feature: np.ndarray) -> np.ndarray:
    """"""
    feature = check_finite(feature, "feature").reshape(-1)
    if feature.shape[0] != params.d:
        raise ValidationError(f"feature dimension {feature.shape[0]} does not match d={params.d}")
    return feature


def logits(params: PromptParams, feature: np.ndarray) -> np.ndarray:
    """P phi(x)"""
    return params.weights @ _check_feature(params, feature)


def predict(params: PromptParams, feature: np.ndarray) -> np.ndarray:
    """softmax(P phi(x))"""
    return special.softmax(logits(params, feature))


def predict_many(params: PromptParams, features: np.ndarray) -> np.ndarray:
    """Row-wise predictions for an N x d feature matrix"""
    features = check_finite(features, "features")
    if features.ndim != 2 or features.shape[1] != params.d:
        raise ValidationError(f"features must be N x {params.d}")
    return special.softmax(features @ params.weights.T, axis=1)


def grad_log_prob(params: PromptParams, sample: LabeledSample) -> np.ndarray:
    """Score function (onehot(y) - p) phi(x)^T"""
    sample.check(params)

    residual: np.ndarray = -predict(params, sample.feature)
    residual[sample.label] += 1.0
    return np.outer(residual, sample.feature)


def grad_loss(
    params: PromptParams,
    feature: np.ndarray,
    cmp_grad_logits: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Gradient of S_t (plus an optional calibration term given in logit
    space) with respect to P. The Mahalanobis part is constant in P.
    """
    feature = _check_feature(params, feature)
    g: np.ndarray = nonconformity_grad_logits(params.weights @ feature)

    if cmp_grad_logits is not None:
        cmp_grad_logits = check_finite(cmp_grad_logits, "cmp_grad_logits").reshape(-1)
        if cmp_grad_logits.shape[0] != params.C:
            raise ValidationError("cmp_grad_logits length must equal C")
        g = g + cmp_grad_logits

    return np.outer(g, feature)


def score_feature(
    params: PromptParams,
    feature: np.ndarray,
    stats: FeatureStats,
    cfg: ScoreConfig
) -> float:
    """Clipped non-conformity score of one feature under the current params"""
    p: np.ndarray = predict(params, feature)
    return clip_score(nonconformity(p, feature, stats, cfg), cfg.score_cap)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for two probability vectors"""
    return float(special.rel_entr(np.asarray(p, dtype=float), np.asarray(q, dtype=float)).sum())


def logit_kl(z_old: np.ndarray, z_new: np.ndarray) -> float:
    """KL(softmax(z_old) || softmax(z_new)) evaluated in log space"""
    log_p: np.ndarray = special.log_softmax(np.asarray(z_old, dtype=float))
    log_q: np.ndarray = special.log_softmax(np.asarray(z_new, dtype=float))
    return float(np.exp(log_p) @ (log_p - log_q))
