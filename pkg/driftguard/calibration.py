"""
Null score statistics fitted on a held-out calibration set.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional, TextIO

import numpy as np
import pandas as pd
from scipy import special

from .base import (
    AssertionBoundError,
    InputFormatError,
    InsufficientDataError,
    ValidationError
)
from .utility import check_finite, load_json, make_rng, save_json


DEFAULT_LAMBDA: float = 0.5
DEFAULT_B: int = 1000
DEFAULT_ALPHA_BOOT: float = 0.05

LAMBDA_GRID: np.ndarray = np.round(np.arange(1, 21) * 0.1, 10)

# Resamples drawn per counter-based generator
BOOTSTRAP_CHUNK: int = 100

# Bootstrap sizes from which psi_bar >= psi_plugin is enforced
DOMINANCE_MIN_B: int = 200

SCORE_COLUMNS: list[str] = ["t", "score"]


@dataclass(frozen=True)
class CalibrationSummary:
    """Held-out score statistics used by the detector"""

    mu_hat: float
    lam: float
    psi_plugin: float
    psi_bar: float
    n: int
    alpha_boot: float
    bootstrap_B: int
    seed: int
    is_exact: bool = False

    def __post_init__(self) -> None:
        """"""
        for name in ("mu_hat", "lam", "psi_plugin", "psi_bar", "alpha_boot"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

        if self.lam <= 0:
            raise ValidationError(f"lambda must be > 0, got {self.lam}")
        if self.n < 1 or self.bootstrap_B < 1:
            raise ValidationError("n and bootstrap_B must be positive")

        # An analytic summary carries no bootstrap level
        if self.is_exact:
            if self.alpha_boot != 0:
                raise ValidationError("exact summaries have alpha_boot = 0")
        elif not 0 < self.alpha_boot < 0.5:
            raise ValidationError(f"alpha_boot must be in (0, 0.5), got {self.alpha_boot}")

    @classmethod
    def exact(cls, mu: float, lam: float, psi: float) -> "CalibrationSummary":
        """Summary with a closed-form log-MGF injected in place of the bootstrap"""
        return cls(
            mu_hat=float(mu),
            lam=float(lam),
            psi_plugin=float(psi),
            psi_bar=float(psi),
            n=1,
            alpha_boot=0.0,
            bootstrap_B=1,
            seed=0,
            is_exact=True
        )

    def to_dict(self) -> dict:
        """"""
        return {
            "mu_hat": self.mu_hat,
            "lambda": self.lam,
            "psi_plugin": self.psi_plugin,
            "psi_bar": self.psi_bar,
            "n": self.n,
            "alpha_boot": self.alpha_boot,
            "bootstrap_B": self.bootstrap_B,
            "seed": self.seed,
            "exact": self.is_exact
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationSummary":
        """"""
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")

        required: set[str] = {f.name for f in fields(cls)} - {"is_exact"}

        missing: set[str] = required - set(data)
        unknown: set[str] = set(data) - required - {"exact"}
        if missing or unknown:
            raise InputFormatError(
                f"Calibration schema mismatch, missing {sorted(missing)}, unknown {sorted(unknown)}"
            )

        try:
            return cls(
                mu_hat=float(data["mu_hat"]),
                lam=float(data["lam"]),
                psi_plugin=float(data["psi_plugin"]),
                psi_bar=float(data["psi_bar"]),
                n=int(data["n"]),
                alpha_boot=float(data["alpha_boot"]),
                bootstrap_B=int(data["bootstrap_B"]),
                seed=int(data["seed"]),
                is_exact=bool(data.get("exact", False))
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise InputFormatError(f"Calibration field has wrong type: {e}")


@dataclass(frozen=True, eq=False)
class GrowthRateEstimate:
    """Grid maximum of the post-shift growth objective"""

    gamma: float
    lambda_star: float
    lambda_grid: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        """"""
        return {
            "gamma": self.gamma,
            "lambda_star": self.lambda_star,
            "lambda_grid": self.lambda_grid.tolist()
        }


def _check_scores(cal_scores: Iterable[float]) -> np.ndarray:
    """"""
    scores: np.ndarray = check_finite(cal_scores, "calibration scores").reshape(-1)
    if scores.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 calibration scores, got {scores.shape[0]}")
    return scores


def _check_lambda(lam: float) -> None:
    """"""
    if not np.isfinite(lam) or lam <= 0:
        raise ValidationError(f"lambda must be a positive finite number, got {lam}")


def fit_mu_hat(cal_scores: Iterable[float]) -> float:
    """Mean of the calibration scores"""
    scores: np.ndarray = _check_scores(cal_scores)
    return float(scores.mean())


def psi_plugin(cal_scores: Iterable[float], mu_hat: float, lam: float) -> float:
    """Plug-in log-MGF ln[(1/n) sum exp(lam (S - mu_hat))]"""
    scores: np.ndarray = _check_scores(cal_scores)
    _check_lambda(lam)

    value: float = float(special.logsumexp(lam * (scores - mu_hat)) - np.log(scores.shape[0]))
    if not np.isfinite(value):
        raise ArithmeticError("log-MGF overflow")
    return value


def bootstrap_log_mgf(
    cal_scores: Iterable[float],
    mu_hat: float,
    lam: float,
    B: int,
    seed: int
) -> np.ndarray:
    """ln of the resampled empirical MGF for each of the B resamples"""
    scores: np.ndarray = _check_scores(cal_scores)
    _check_lambda(lam)
    if B < 1:
        raise ValidationError(f"B must be >= 1, got {B}")

    n: int = scores.shape[0]
    centered: np.ndarray = lam * (scores - mu_hat)
    log_n: float = float(np.log(n))

    values: np.ndarray = np.empty(B)
    chunk_count: int = -(-B // BOOTSTRAP_CHUNK)

    for chunk in range(chunk_count):
        start: int = chunk * BOOTSTRAP_CHUNK
        size: int = min(BOOTSTRAP_CHUNK, B - start)

        rng: np.random.Generator = make_rng(seed, chunk)
        index: np.ndarray = rng.integers(0, n, size=(size, n))

        values[start:start + size] = special.logsumexp(centered[index], axis=1) - log_n

    return values


def lower_quantile(values: np.ndarray, level: float) -> float:
    """Lowest order statistic whose empirical CDF reaches level"""
    ordered: np.ndarray = np.sort(np.asarray(values, dtype=float))
    count: int = ordered.shape[0]

    k: int = int(np.ceil(level * count - 1e-9)) - 1
    k = min(max(k, 0), count - 1)
    return float(ordered[k])


def bootstrap_psi_bar(
    cal_scores: Iterable[float],
    mu_hat: float,
    lam: float,
    B: int = DEFAULT_B,
    alpha_boot: float = DEFAULT_ALPHA_BOOT,
    seed: int = 0
) -> float:
    """
    High-confidence upper bound on the log-MGF.

    The quantile is taken on ln m^(b), which picks the same order
    statistic as the quantile of m^(b) itself.
    """
    if not 0 < alpha_boot < 1:
        raise ValidationError(f"alpha_boot must be in (0, 1), got {alpha_boot}")

    values: np.ndarray = bootstrap_log_mgf(cal_scores, mu_hat, lam, B, seed)
    return lower_quantile(values, 1 - alpha_boot)


def fit_calibration(
    cal_scores: Iterable[float],
    lam: float = DEFAULT_LAMBDA,
    B: int = DEFAULT_B,
    alpha_boot: float = DEFAULT_ALPHA_BOOT,
    seed: int = 0
) -> CalibrationSummary:
    """Fit mu_hat, the plug-in psi and the bootstrap psi_bar in one pass"""
    scores: np.ndarray = _check_scores(cal_scores)

    mu_hat: float = fit_mu_hat(scores)
    plugin: float = psi_plugin(scores, mu_hat, lam)
    psi_bar: float = bootstrap_psi_bar(scores, mu_hat, lam, B, alpha_boot, seed)

    if B >= DOMINANCE_MIN_B and psi_bar < plugin - 1e-12:
        raise AssertionBoundError(
            f"bootstrap psi_bar {psi_bar!r} fell below plug-in psi {plugin!r}"
        )

    return CalibrationSummary(
        mu_hat=mu_hat,
        lam=float(lam),
        psi_plugin=plugin,
        psi_bar=psi_bar,
        n=int(scores.shape[0]),
        alpha_boot=float(alpha_boot),
        bootstrap_B=int(B),
        seed=int(seed)
    )


def plugin_psi_function(cal_scores: Iterable[float], mu_hat: float) -> Callable[[float], float]:
    """psi as a function of lambda for the growth-rate objective"""
    scores: np.ndarray = _check_scores(cal_scores)
    return lambda lam: psi_plugin(scores, mu_hat, lam)


def gaussian_psi(lam: float) -> float:
    """Log-MGF of a standard normal score"""
    return 0.5 * lam * lam


def estimate_gamma(
    mu_hat: float,
    psi_of: Callable[[float], float],
    post_shift_mean: float,
    lambda_grid: Optional[Iterable[float]] = None
) -> GrowthRateEstimate:
    """Maximise lam (post_shift_mean - mu_hat) - psi(lam) over the grid"""
    if lambda_grid is None:
        lambda_grid = LAMBDA_GRID

    grid: np.ndarray = np.sort(np.asarray(list(lambda_grid), dtype=float).reshape(-1))
    if grid.shape[0] == 0:
        raise ValidationError("lambda grid is empty")
    if np.any(grid <= 0):
        raise ValidationError("lambda grid values must be positive")

    objective: np.ndarray = np.array(
        [lam * (post_shift_mean - mu_hat) - psi_of(lam) for lam in grid],
        dtype=float
    )
    objective[~np.isfinite(objective)] = -np.inf

    if not np.isfinite(objective).any():
        raise ValidationError("growth objective is non-finite on the whole grid")

    # First maximum on the sorted grid, so grid order does not matter
    ix: int = int(np.argmax(objective))
    return GrowthRateEstimate(
        gamma=float(objective[ix]),
        lambda_star=float(grid[ix]),
        lambda_grid=grid
    )


def select_lambda(
    mu_hat: float,
    psi_of: Callable[[float], float],
    shift_magnitude: float,
    lambda_grid: Optional[Iterable[float]] = None
) -> float:
    """Lambda maximising the growth objective for a hypothesised mean shift"""
    estimate: GrowthRateEstimate = estimate_gamma(
        mu_hat, psi_of, mu_hat + shift_magnitude, lambda_grid
    )
    return estimate.lambda_star


def load_score_csv(source: str | Path | TextIO) -> pd.DataFrame:
    """Read a `t,score` file into a validated DataFrame"""
    try:
        df: pd.DataFrame = pd.read_csv(source, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise InputFormatError(f"File not found: {source}")
    except pd.errors.EmptyDataError:
        raise InputFormatError("score file is empty, expected a `t,score` header")
    except pd.errors.ParserError as e:
        raise InputFormatError(f"Malformed score csv: {e}")
    except UnicodeDecodeError as e:
        raise InputFormatError(f"score csv is not valid UTF-8: {e}")

    columns: list[str] = [str(c).strip() for c in df.columns]
    if columns != SCORE_COLUMNS:
        raise InputFormatError(f"score csv header must be t,score, got {','.join(columns)}")
    df.columns = columns

    try:
        t: pd.Series = pd.to_numeric(df["t"].str.strip(), errors="raise")
        score: pd.Series = pd.to_numeric(df["score"].str.strip(), errors="raise")
    except (ValueError, TypeError) as e:
        raise InputFormatError(f"score csv has a non-numeric value: {e}")

    if (t != np.floor(t)).any():
        raise InputFormatError("t column must hold integers")
    if not np.all(np.isfinite(score.to_numpy(dtype=float))):
        raise InputFormatError("score column must be finite")
    if len(t) > 1 and not (np.diff(t.to_numpy()) > 0).all():
        raise InputFormatError("t column must be strictly increasing")

    return pd.DataFrame({"t": t.astype("int64"), "score": score.astype(float)})


def save_summary(filepath: str | Path, summary: CalibrationSummary) -> Path:
    """Write a summary and read it back to check the schema"""
    path: Path = save_json(filepath, summary.to_dict())
    load_summary(path)
    return path


def load_summary(filepath: str | Path) -> CalibrationSummary:
    """Read a CalibrationSummary JSON file"""
    return CalibrationSummary.from_dict(load_json(filepath))
