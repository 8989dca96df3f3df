"""
Seeded synthetic feature streams with change points.

Randomness is drawn in fixed blocks keyed by (seed, block), so every sample
depends only on its own index and the config, never on the stream length
or on how generation is split across workers.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd
from scipy import linalg

from .base import ShiftKind, ValidationError
from .model import LabeledSample, PromptParams, score_feature
from .score import FeatureStats, ScoreConfig, check_probability
from .utility import check_finite, make_rng


BLOCK_SIZE: int = 256


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    """Shift family applied from a change point on"""

    kind: ShiftKind
    delta: Optional[np.ndarray] = None
    factor: float = 1.0
    new_prior: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        """"""
        kind: ShiftKind = ShiftKind(self.kind)
        object.__setattr__(self, "kind", kind)

        if kind == ShiftKind.MEAN_TRANSLATE:
            if self.delta is None:
                raise ValidationError("MeanTranslate needs delta")
            object.__setattr__(self, "delta", check_finite(self.delta, "delta").reshape(-1))
        elif kind == ShiftKind.COVARIANCE_SCALE:
            if not np.isfinite(self.factor) or self.factor <= 0:
                raise ValidationError(f"CovarianceScale factor must be > 0, got {self.factor}")
        elif kind == ShiftKind.CLASS_PRIOR_SHIFT:
            if self.new_prior is None:
                raise ValidationError("ClassPriorShift needs new_prior")
            object.__setattr__(self, "new_prior", check_probability(self.new_prior))

    @classmethod
    def mean_translate(cls, delta: np.ndarray) -> "ShiftSpec":
        """"""
        return cls(ShiftKind.MEAN_TRANSLATE, delta=np.asarray(delta, dtype=float))

    @classmethod
    def covariance_scale(cls, factor: float) -> "ShiftSpec":
        """"""
        return cls(ShiftKind.COVARIANCE_SCALE, factor=float(factor))

    @classmethod
    def class_prior_shift(cls, new_prior: np.ndarray) -> "ShiftSpec":
        """Experimental: label shift rather than covariate shift"""
        return cls(ShiftKind.CLASS_PRIOR_SHIFT, new_prior=np.asarray(new_prior, dtype=float))

    def to_dict(self) -> dict:
        """"""
        data: dict = {"kind": self.kind.value}
        if self.kind == ShiftKind.MEAN_TRANSLATE:
            data["delta"] = self.delta.tolist()
        elif self.kind == ShiftKind.COVARIANCE_SCALE:
            data["factor"] = self.factor
        else:
            data["new_prior"] = self.new_prior.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ShiftSpec":
        """"""
        data = dict(data)
        try:
            kind: ShiftKind = ShiftKind(data.pop("kind"))
        except (KeyError, ValueError) as e:
            raise ValidationError(f"Invalid shift kind: {e}")

        if kind == ShiftKind.MEAN_TRANSLATE:
            return cls.mean_translate(data["delta"])
        elif kind == ShiftKind.COVARIANCE_SCALE:
            return cls.covariance_scale(data["factor"])
        return cls.class_prior_shift(data["new_prior"])


def default_class_means(C: int, d: int, scale: float = 2.0) -> np.ndarray:
    """Class c centred at scale * e_c"""
    if C > d:
        raise ValidationError(f"default class means need C <= d, got C={C}, d={d}")
    return scale * np.eye(C, d)


@dataclass(frozen=True, eq=False)
class StreamConfig:
    """Gaussian class mixture with an optional sequence of change points"""

    seed: int
    length: int
    d: int = 8
    C: int = 4
    change_point: Optional[int] = None
    shift: Optional[ShiftSpec] = None
    class_means: Optional[np.ndarray] = None
    class_cov: Optional[np.ndarray] = None
    prior: Optional[np.ndarray] = None
    later_changes: tuple[tuple[int, ShiftSpec], ...] = ()
    cov_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """"""
        if self.length < 0:
            raise ValidationError(f"length must be >= 0, got {self.length}")
        if self.C < 2 or self.d < 1:
            raise ValidationError("need C >= 2 classes and d >= 1")

        means: np.ndarray = (
            default_class_means(self.C, self.d)
            if self.class_means is None
            else check_finite(self.class_means, "class_means")
        )
        if means.shape != (self.C, self.d):
            raise ValidationError(f"class_means must be {self.C} x {self.d}")

        cov: np.ndarray = np.eye(self.d) if self.class_cov is None else check_finite(self.class_cov, "class_cov")
        if cov.shape != (self.d, self.d) or not np.allclose(cov, cov.T, rtol=0, atol=1e-9):
            raise ValidationError("class_cov must be a symmetric d x d matrix")
        try:
            factor: np.ndarray = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("class_cov must be positive definite")

        prior: np.ndarray = (
            np.full(self.C, 1 / self.C)
            if self.prior is None
            else check_probability(self.prior)
        )
        if prior.shape[0] != self.C:
            raise ValidationError("prior length must equal C")

        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_cov", cov)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "cov_factor", factor)
        object.__setattr__(self, "later_changes", tuple(
            (int(t), s if isinstance(s, ShiftSpec) else ShiftSpec.from_dict(s))
            for t, s in self.later_changes
        ))

        if self.change_point is not None:
            if self.shift is None:
                raise ValidationError("a change point needs a shift")
            if not 0 <= self.change_point < max(self.length, 1):
                raise ValidationError(
                    f"change_point must be in [0, length), got {self.change_point}"
                )
        elif self.later_changes:
            raise ValidationError("later changes need a first change point")

        previous: Optional[int] = self.change_point
        for t, spec in self.later_changes:
            if not previous < t < self.length:
                raise ValidationError("later change points must increase and stay below length")
            previous = t

        for _, spec in self.segments()[1:]:
            self._check_shift(spec)

    def _check_shift(self, spec: ShiftSpec) -> None:
        """"""
        if spec.kind == ShiftKind.MEAN_TRANSLATE and spec.delta.shape[0] != self.d:
            raise ValidationError(f"delta must have dimension d={self.d}")
        if spec.kind == ShiftKind.CLASS_PRIOR_SHIFT and spec.new_prior.shape[0] != self.C:
            raise ValidationError(f"new_prior must have {self.C} entries")

    def segments(self) -> list[tuple[int, Optional[ShiftSpec]]]:
        """(start index, active shift) pairs; each change replaces the previous shift"""
        segments: list = [(0, None)]
        if self.change_point is not None:
            segments.append((self.change_point, self.shift))
            segments.extend(self.later_changes)
        return segments

    @property
    def change_points(self) -> list[int]:
        """"""
        return [t for t, _ in self.segments()[1:]]

    def mixture_mean(self) -> np.ndarray:
        """Mean feature of the base mixture"""
        return self.prior @ self.class_means

    def to_dict(self) -> dict:
        """"""
        return {
            "seed": self.seed,
            "length": self.length,
            "d": self.d,
            "C": self.C,
            "change_point": self.change_point,
            "shift": None if self.shift is None else self.shift.to_dict(),
            "class_means": self.class_means.tolist(),
            "class_cov": self.class_cov.tolist(),
            "prior": self.prior.tolist(),
            "later_changes": [[t, s.to_dict()] for t, s in self.later_changes]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StreamConfig":
        """"""
        data = dict(data)
        if data.get("shift") is not None:
            data["shift"] = ShiftSpec.from_dict(data["shift"])
        for key in ("class_means", "class_cov", "prior"):
            if data.get(key) is not None:
                data[key] = np.asarray(data[key], dtype=float)
        data["later_changes"] = tuple(
            (int(t), ShiftSpec.from_dict(s)) for t, s in data.get("later_changes", [])
        )
        return cls(**data)


def uniform_schedule(length: int, shifts: list[ShiftSpec]) -> tuple[int, ShiftSpec, tuple]:
    """
    Evenly spaced change points for a list of shifts: with k shifts the
    stream is cut into k + 1 equal segments, the first one unshifted.
    """
    if not shifts:
        raise ValidationError("need at least one shift")

    segment: int = length // (len(shifts) + 1)
    if segment < 1:
        raise ValidationError("stream too short for the schedule")

    points: list[int] = [segment * (i + 1) for i in range(len(shifts))]
    later: tuple = tuple(zip(points[1:], shifts[1:]))
    return points[0], shifts[0], later


def _draw_block(seed: int, block: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniforms for labels and standard normals for features of one block"""
    rng: np.random.Generator = make_rng(seed, block)
    uniforms: np.ndarray = rng.random(BLOCK_SIZE)
    normals: np.ndarray = rng.standard_normal((BLOCK_SIZE, d))
    return uniforms, normals


def _draw(seed: int, length: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """"""
    blocks: int = -(-length // BLOCK_SIZE)
    draws: list = [_draw_block(seed, b, d) for b in range(blocks)]
    if not draws:
        return np.empty(0), np.empty((0, d))

    uniforms: np.ndarray = np.concatenate([u for u, _ in draws])[:length]
    normals: np.ndarray = np.concatenate([z for _, z in draws])[:length]
    return uniforms, normals


def _inverse_cdf(uniforms: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Labels from uniforms by inverting the prior CDF"""
    cdf: np.ndarray = np.cumsum(prior)
    cdf[-1] = 1.0
    labels: np.ndarray = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(labels, prior.shape[0] - 1)


class SampleStream:
    """
    Generated samples behind a sequential cursor.

    Every read through the cursor is logged so that runs can be audited
    for reading ahead of the current time.
    """

    def __init__(self, cfg: StreamConfig, features: np.ndarray, labels: np.ndarray) -> None:
        """"""
        self.cfg: StreamConfig = cfg
        self.features: np.ndarray = features
        self.labels: np.ndarray = labels

        self.access_log: list[int] = []

    def __len__(self) -> int:
        """"""
        return self.labels.shape[0]

    def __iter__(self) -> Iterator[tuple[int, LabeledSample]]:
        """Yield (t, sample) with t starting at 1"""
        for ix in range(len(self)):
            yield ix + 1, self.read(ix + 1)

    def read(self, t: int) -> LabeledSample:
        """Sample at 1-based time t"""
        if not 1 <= t <= len(self):
            raise IndexError(f"t={t} outside stream of length {len(self)}")

        self.access_log.append(t)
        return LabeledSample(self.features[t - 1], int(self.labels[t - 1]))

    def is_causal(self) -> bool:
        """Whether the cursor was read strictly in time order"""
        log: np.ndarray = np.asarray(self.access_log)
        return bool(log.size == 0 or (log[0] >= 1 and np.all(np.diff(log) == 1)))

    def segment_mask(self) -> np.ndarray:
        """Boolean mask of samples after the first change point"""
        mask: np.ndarray = np.zeros(len(self), dtype=bool)
        if self.cfg.change_point is not None:
            mask[self.cfg.change_point:] = True
        return mask

    def to_frame(self) -> pd.DataFrame:
        """`t,label,f1..fd` table"""
        df: pd.DataFrame = pd.DataFrame(
            self.features, columns=[f"f{j + 1}" for j in range(self.cfg.d)]
        )
        df.insert(0, "label", self.labels.astype(int))
        df.insert(0, "t", np.arange(1, len(self) + 1))
        return df


def generate(cfg: StreamConfig) -> SampleStream:
    """Draw the labelled stream described by cfg"""
    uniforms, normals = _draw(cfg.seed, cfg.length, cfg.d)

    labels: np.ndarray = np.empty(cfg.length, dtype=int)
    features: np.ndarray = np.empty((cfg.length, cfg.d))

    segments: list = cfg.segments()
    bounds: list[int] = [start for start, _ in segments[1:]] + [cfg.length]

    for (start, spec), stop in zip(segments, bounds):
        prior: np.ndarray = cfg.prior
        noise: np.ndarray = normals[start:stop] @ cfg.cov_factor.T

        if spec is not None:
            if spec.kind == ShiftKind.CLASS_PRIOR_SHIFT:
                prior = spec.new_prior
            elif spec.kind == ShiftKind.COVARIANCE_SCALE:
                noise = np.sqrt(spec.factor) * noise

        y: np.ndarray = _inverse_cdf(uniforms[start:stop], prior)
        x: np.ndarray = cfg.class_means[y] + noise

        if spec is not None and spec.kind == ShiftKind.MEAN_TRANSLATE:
            x = x + spec.delta

        labels[start:stop] = y
        features[start:stop] = x

    return SampleStream(cfg, features, labels)


def generate_score_stream(
    cfg: StreamConfig,
    params: PromptParams,
    stats: FeatureStats,
    score_cfg: ScoreConfig
) -> pd.DataFrame:
    """`t,score` frame of clipped scores under fixed params"""
    stream: SampleStream = generate(cfg)

    scores: list[float] = [
        score_feature(params, feature, stats, score_cfg)
        for feature in stream.features
    ]
    return pd.DataFrame({
        "t": np.arange(1, len(stream) + 1, dtype=np.int64),
        "score": np.asarray(scores, dtype=float)
    })


def generate_gaussian_scores(
    seed: int,
    length: int,
    change_point: Optional[int] = None,
    shift: float = 0.0
) -> np.ndarray:
    """N(0, 1) null scores, N(shift, 1) from the change point on"""
    _, normals = _draw(seed, length, 1)
    scores: np.ndarray = normals[:, 0].copy()

    if change_point is not None:
        scores[change_point:] += shift
    return scores


def generate_ar1_scores(
    seed: int,
    length: int,
    phi: float,
    change_point: Optional[int] = None,
    shift: float = 0.0
) -> np.ndarray:
    """
    Stationary unit-variance AR(1) scores for the dependent case.
    """
    if not -1 < phi < 1:
        raise ValidationError(f"phi must be in (-1, 1), got {phi}")

    _, normals = _draw(seed, length, 1)
    innovations: np.ndarray = normals[:, 0]
    scores: np.ndarray = np.empty(length)

    scale: float = float(np.sqrt(1 - phi * phi))
    level: float = 0.0
    for ix in range(length):
        level = innovations[ix] if ix == 0 else phi * level + scale * innovations[ix]
        scores[ix] = level

    if change_point is not None:
        scores[change_point:] += shift
    return scores


def export_csv(stream: SampleStream, filepath: str | Path) -> Path:
    """Write `t,label,f1..fd` rows"""
    path: Path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    stream.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def export_score_csv(scores: pd.DataFrame, filepath: str | Path) -> Path:
    """Write `t,score` rows"""
    path: Path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    scores[["t", "score"]].to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path
