"""
Damped diagonal Fisher, natural-gradient steps and the soft calibration
penalty used during adaptation.
"""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import special

from .base import LabelMode, ValidationError
from .model import PromptParams, grad_loss, predict_many
from .utility import check_finite


DEFAULT_GAMMA_DAMP: float = 1e-4
DEFAULT_ETA: float = 5e-5
ETA_GRID: tuple[float, ...] = (1e-5, 5e-5, 1e-4)


@dataclass(frozen=True, eq=False)
class FisherDiag:
    """Diagonal of the Fisher information over P with Tikhonov damping"""

    diag: np.ndarray
    gamma_damp: float = DEFAULT_GAMMA_DAMP
    n_samples: int = 1

    def __post_init__(self) -> None:
        """"""
        diag: np.ndarray = check_finite(self.diag, "diag")
        if diag.ndim != 2:
            raise ValidationError("diag must be a C x d matrix")
        if np.any(diag < 0):
            raise ValidationError("diag entries must be nonnegative")
        if not np.isfinite(self.gamma_damp) or self.gamma_damp <= 0:
            raise ValidationError(f"gamma_damp must be > 0, got {self.gamma_damp}")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be positive")

        object.__setattr__(self, "diag", diag)

    @property
    def preconditioner(self) -> np.ndarray:
        """Elementwise 1 / (diag + gamma)"""
        return 1.0 / (self.diag + self.gamma_damp)

    def to_dict(self) -> dict:
        """"""
        return {
            "diag": self.diag.tolist(),
            "gamma_damp": self.gamma_damp,
            "n_samples": self.n_samples
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FisherDiag":
        """"""
        return cls(np.asarray(data["diag"], dtype=float), float(data["gamma_damp"]), int(data["n_samples"]))


@dataclass(frozen=True)
class EceConfig:
    """Binning of the hard and soft calibration errors"""

    n_bins: int = 15
    sharpness: float = 100.0
    accuracy_sharpness: float = 1.0

    def __post_init__(self) -> None:
        """"""
        if self.n_bins < 1:
            raise ValidationError(f"n_bins must be >= 1, got {self.n_bins}")
        if not np.isfinite(self.sharpness) or self.sharpness <= 0:
            raise ValidationError(f"sharpness must be a positive finite number, got {self.sharpness}")
        if not np.isfinite(self.accuracy_sharpness) or self.accuracy_sharpness <= 0:
            raise ValidationError("accuracy_sharpness must be a positive finite number")

    def to_dict(self) -> dict:
        """"""
        return {
            "n_bins": self.n_bins,
            "sharpness": self.sharpness,
            "accuracy_sharpness": self.accuracy_sharpness
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EceConfig":
        """"""
        return cls(**data)


def _check_features(params: PromptParams, samples: Iterable) -> np.ndarray:
    """"""
    features: np.ndarray = check_finite(samples, "samples")
    if features.ndim == 1:
        features = features.reshape(1, -1)
    if features.shape[0] == 0:
        raise ValidationError("sample set is empty")
    if features.shape[1] != params.d:
        raise ValidationError(f"features must have dimension d={params.d}")
    return features


def estimate_fisher_diag(
    params: PromptParams,
    samples: Iterable,
    gamma_damp: float = DEFAULT_GAMMA_DAMP,
    label_mode: LabelMode = LabelMode.MODEL_EXPECTATION,
    labels: Optional[Iterable[int]] = None
) -> FisherDiag:
    """
    Mean squared score function per coordinate of P.

    Under the model expectation E_y[(1{y=i} - p_i)^2] = p_i (1 - p_i),
    so no label enumeration is needed.
    """
    features: np.ndarray = _check_features(params, samples)
    probs: np.ndarray = predict_many(params, features)
    n: int = features.shape[0]

    if LabelMode(label_mode) == LabelMode.MODEL_EXPECTATION:
        weight: np.ndarray = probs * (1 - probs)
    else:
        if labels is None:
            raise ValidationError("empirical Fisher needs labels")

        y: np.ndarray = np.asarray(labels, dtype=int).reshape(-1)
        if y.shape[0] != n:
            raise ValidationError("labels and samples differ in length")
        if np.any((y < 0) | (y >= params.C)):
            raise ValidationError("label out of range")

        residual: np.ndarray = -probs
        residual[np.arange(n), y] += 1.0
        weight = residual ** 2

    diag: np.ndarray = weight.T @ (features ** 2) / n
    return FisherDiag(diag, gamma_damp, n)


def _check_grad(params: PromptParams, grad: np.ndarray) -> np.ndarray:
    """"""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.weights.shape:
        raise ValidationError(f"gradient shape {grad.shape} differs from params {params.weights.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValidationError("gradient must be finite")
    return grad


def natural_grad_step(
    params: PromptParams,
    grad: np.ndarray,
    fisher: FisherDiag,
    eta: float
) -> PromptParams:
    """P <- P - eta grad / (diag + gamma)"""
    grad = _check_grad(params, grad)
    if fisher.diag.shape != grad.shape:
        raise ValidationError("Fisher diagonal shape differs from params")
    if not eta > 0:
        raise ValidationError(f"eta must be > 0, got {eta}")

    return params.replace(params.weights - eta * grad * fisher.preconditioner)


def euclidean_step(params: PromptParams, grad: np.ndarray, eta: float) -> PromptParams:
    """Plain gradient step, the identity-metric ablation"""
    grad = _check_grad(params, grad)
    if not eta > 0:
        raise ValidationError(f"eta must be > 0, got {eta}")

    return params.replace(params.weights - eta * grad)


def _check_predictions(probabilities: np.ndarray, labels: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """"""
    probs: np.ndarray = check_finite(probabilities, "probabilities")
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)

    y: np.ndarray = np.asarray(labels, dtype=int).reshape(-1)
    if probs.shape[0] == 0:
        raise ValidationError("prediction set is empty")
    if probs.shape[0] != y.shape[0]:
        raise ValidationError("predictions and labels differ in length")
    return probs, y


def bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width right-closed bins on [0, 1]"""
    index: np.ndarray = np.ceil(np.asarray(confidence) * n_bins - 1e-12).astype(int) - 1
    return np.clip(index, 0, n_bins - 1)


def ece_hard(probabilities: np.ndarray, labels: Iterable[int], n_bins: int = 15) -> float:
    """Binned expected calibration error over max-probability confidence"""
    probs, y = _check_predictions(probabilities, labels)
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")

    confidence: np.ndarray = probs.max(axis=1)
    correct: np.ndarray = (probs.argmax(axis=1) == y).astype(float)

    gaps: np.ndarray = np.bincount(
        bin_index(confidence, n_bins),
        weights=correct - confidence,
        minlength=n_bins
    )
    return float(min(np.abs(gaps).sum() / y.shape[0], 1.0))


def soft_memberships(confidence: np.ndarray, cfg: EceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Logistic bin memberships (N x n_bins) and their derivative in confidence"""
    edges: np.ndarray = np.arange(1, cfg.n_bins) / cfg.n_bins
    sig: np.ndarray = special.expit(cfg.sharpness * (confidence[:, None] - edges[None, :]))

    # Outer edges stay open: above-left is 1, above-right is 0
    n: int = confidence.shape[0]
    upper: np.ndarray = np.hstack([np.ones((n, 1)), sig, np.zeros((n, 1))])
    slope: np.ndarray = np.hstack([np.zeros((n, 1)), cfg.sharpness * sig * (1 - sig), np.zeros((n, 1))])

    weights: np.ndarray = upper[:, :-1] - upper[:, 1:]
    d_weights: np.ndarray = slope[:, :-1] - slope[:, 1:]
    return weights, d_weights


def ece_soft(
    logit_sets: np.ndarray,
    labels: Iterable[int],
    cfg: EceConfig = EceConfig()
) -> tuple[float, np.ndarray]:
    """
    Differentiable calibration error and its gradient in the logits.

    Confidence is the max softmax probability, correctness is the true-class
    probability of softmax(accuracy_sharpness * logits), and hard bins are
    replaced by logistic memberships. Returns (value, N x C gradient).
    """
    z, y = _check_predictions(logit_sets, labels)
    n, c = z.shape
    if np.any((y < 0) | (y >= c)):
        raise ValidationError("label out of range")

    rows: np.ndarray = np.arange(n)

    p: np.ndarray = special.softmax(z, axis=1)
    m: np.ndarray = p.argmax(axis=1)
    confidence: np.ndarray = p[rows, m]

    q: np.ndarray = special.softmax(cfg.accuracy_sharpness * z, axis=1)
    accuracy: np.ndarray = q[rows, y]

    weights, d_weights = soft_memberships(confidence, cfg)
    gap: np.ndarray = accuracy - confidence
    totals: np.ndarray = weights.T @ gap

    value: float = float(np.abs(totals).sum() / n)

    # d confidence / dz = p_m (e_m - p),  d accuracy / dz = kappa q_y (e_y - q)
    d_conf: np.ndarray = -confidence[:, None] * p
    d_conf[rows, m] += confidence

    d_acc: np.ndarray = -(cfg.accuracy_sharpness * accuracy)[:, None] * q
    d_acc[rows, y] += cfg.accuracy_sharpness * accuracy

    sign: np.ndarray = np.sign(totals)
    coef_conf: np.ndarray = d_weights @ sign * gap
    coef_gap: np.ndarray = weights @ sign

    grad: np.ndarray = (coef_conf[:, None] * d_conf + coef_gap[:, None] * (d_acc - d_conf)) / n
    return value, grad


def cmp_grad_matrix(
    params: PromptParams,
    buffer_features: np.ndarray,
    buffer_labels: Iterable[int],
    cfg: EceConfig = EceConfig()
) -> tuple[float, np.ndarray]:
    """Soft calibration penalty on a labelled buffer and its gradient in P"""
    features: np.ndarray = _check_features(params, buffer_features)
    value, grad_logits = ece_soft(features @ params.weights.T, buffer_labels, cfg)
    return value, grad_logits.T @ features


def adapt(
    params: PromptParams,
    feature: np.ndarray,
    fisher: Optional[FisherDiag],
    eta: float,
    cmp_buffer: Optional[tuple[np.ndarray, np.ndarray]] = None,
    cfg: EceConfig = EceConfig()
) -> PromptParams:
    """
    One preconditioned step on S_t + L_CMP.

    The calibration term only sees the labelled buffer. Without a Fisher
    the step falls back to the identity metric.
    """
    grad: np.ndarray = grad_loss(params, feature)

    if cmp_buffer is not None:
        buffer_features, buffer_labels = cmp_buffer
        _, cmp_grad = cmp_grad_matrix(params, buffer_features, buffer_labels, cfg)
        grad = grad + cmp_grad

    if fisher is None:
        return euclidean_step(params, grad, eta)
    return natural_grad_step(params, grad, fisher, eta)


def buffer_objective(
    params: PromptParams,
    buffer_features: np.ndarray,
    buffer_labels: np.ndarray,
    cfg: EceConfig
) -> float:
    """Mean confidence deviation plus soft calibration error on a buffer"""
    probs: np.ndarray = predict_many(params, buffer_features)
    c: int = probs.shape[1]
    kl: float = float(special.xlogy(probs, probs * c).sum(axis=1).mean())

    value, _ = cmp_grad_matrix(params, buffer_features, buffer_labels, cfg)
    return kl + value


def select_eta(
    params: PromptParams,
    fisher: Optional[FisherDiag],
    buffer_features: np.ndarray,
    buffer_labels: np.ndarray,
    eta_grid: Iterable[float] = ETA_GRID,
    cfg: EceConfig = EceConfig()
) -> float:
    """Learning rate from the grid minimising the buffer objective after one step"""
    features: np.ndarray = _check_features(params, buffer_features)
    labels: np.ndarray = np.asarray(buffer_labels, dtype=int).reshape(-1)

    grid: list[float] = sorted(float(eta) for eta in eta_grid)
    if not grid:
        raise ValidationError("eta grid is empty")

    grad: np.ndarray = np.mean([grad_loss(params, x) for x in features], axis=0)
    _, cmp_grad = cmp_grad_matrix(params, features, labels, cfg)
    grad = grad + cmp_grad

    best_eta: float = grid[0]
    best_value: float = np.inf

    for eta in grid:
        if fisher is None:
            candidate: PromptParams = euclidean_step(params, grad, eta)
        else:
            candidate = natural_grad_step(params, grad, fisher, eta)

        value: float = buffer_objective(candidate, features, labels, cfg)
        if value < best_value:
            best_eta, best_value = eta, value

    return best_eta

