"""
Experiment configuration: one JSON document, nested per module.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .base import InputFormatError, ResetPolicy, ScoreSource, ValidationError
from .calibration import DEFAULT_ALPHA_BOOT, DEFAULT_B, DEFAULT_LAMBDA
from .fisher import DEFAULT_ETA, DEFAULT_GAMMA_DAMP, ETA_GRID, EceConfig
from .score import ScoreConfig
from .stream import StreamConfig
from .utility import config_hash, load_json, save_json


DEFAULT_TAU_GRID: tuple[float, ...] = (20.0, 50.0, 100.0, 200.0, 500.0)
DEFAULT_CHECKPOINTS: tuple[int, ...] = (0, 1, 5, 10, 25, 50)

ASSERTION_KEYS: set[str] = {"min", "max", "equals"}


def _check_keys(cls: type, data: dict, block: str) -> None:
    """Reject keys the dataclass does not declare"""
    if not isinstance(data, dict):
        raise InputFormatError(f"`{block}` must be a json object")

    names: set[str] = {f.name for f in fields(cls) if f.init}
    aliases: dict = getattr(cls, "aliases", {})
    unknown: set[str] = set(data) - names - set(aliases)
    if unknown:
        raise InputFormatError(f"unknown keys in `{block}`: {sorted(unknown)}")


@dataclass(frozen=True)
class DetectorSetting:
    """Threshold, lambda and bootstrap settings of the detector"""

    aliases = {"lambda": "lam"}

    tau: float = 100.0
    lam: float = DEFAULT_LAMBDA
    alpha_boot: float = DEFAULT_ALPHA_BOOT
    B: int = DEFAULT_B
    reset_policy: ResetPolicy = ResetPolicy.RESET_ON_ALARM

    # Hypothesised post-change rise of the mean score, lambda is then picked per run
    lambda_shift: Optional[float] = None

    def __post_init__(self) -> None:
        """"""
        object.__setattr__(self, "reset_policy", ResetPolicy(self.reset_policy))

        if not self.tau > 1:
            raise ValidationError(f"tau must be > 1, got {self.tau}")
        if not self.lam > 0:
            raise ValidationError(f"lambda must be > 0, got {self.lam}")
        if not 0 < self.alpha_boot < 0.5:
            raise ValidationError(f"alpha_boot must be in (0, 0.5), got {self.alpha_boot}")
        if self.B < 1:
            raise ValidationError(f"B must be >= 1, got {self.B}")
        if self.lambda_shift is not None and not self.lambda_shift > 0:
            raise ValidationError(f"lambda_shift must be > 0, got {self.lambda_shift}")

    def to_dict(self) -> dict:
        """"""
        return {
            "tau": self.tau,
            "lambda": self.lam,
            "alpha_boot": self.alpha_boot,
            "B": self.B,
            "reset_policy": self.reset_policy.value,
            "lambda_shift": self.lambda_shift
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorSetting":
        """"""
        _check_keys(cls, data, "detector")
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data)


@dataclass(frozen=True)
class AdapterSetting:
    """Adaptation step settings, handed to the pipeline as its setting"""

    enabled: bool = True
    pipeline: str = "MFisherPipeline"
    eta: float = DEFAULT_ETA
    eta_grid: tuple[float, ...] = ETA_GRID
    select_eta: bool = False
    gamma_damp: float = DEFAULT_GAMMA_DAMP
    preconditioner: str = "fisher"
    use_cmp: bool = True
    cmp_buffer_size: int = 128
    fisher_mode: str = "train"
    window: int = 64
    interval: int = 50
    ece: EceConfig = field(default_factory=EceConfig)

    def __post_init__(self) -> None:
        """"""
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        if isinstance(self.ece, dict):
            _check_keys(EceConfig, self.ece, "adapter.ece")
            object.__setattr__(self, "ece", EceConfig.from_dict(self.ece))

        if not self.eta > 0 or not all(e > 0 for e in self.eta_grid):
            raise ValidationError("eta values must be > 0")
        if not self.gamma_damp > 0:
            raise ValidationError("gamma_damp must be > 0")
        if self.preconditioner not in ("fisher", "identity"):
            raise ValidationError(f"preconditioner must be fisher or identity, got {self.preconditioner}")
        if self.fisher_mode not in ("train", "window"):
            raise ValidationError(f"fisher_mode must be train or window, got {self.fisher_mode}")
        if self.window < 1 or self.interval < 1 or self.cmp_buffer_size < 1:
            raise ValidationError("window, interval and cmp_buffer_size must be >= 1")

    def pipeline_setting(self, eta: Optional[float] = None) -> dict:
        """Setting dict for the pipeline parameters"""
        return {
            "adapt_enabled": self.enabled,
            "eta": self.eta if eta is None else eta,
            "gamma_damp": self.gamma_damp,
            "preconditioner": self.preconditioner,
            "use_cmp": self.use_cmp,
            "fisher_mode": self.fisher_mode,
            "window": self.window,
            "interval": self.interval
        }

    def to_dict(self) -> dict:
        """"""
        return {
            "enabled": self.enabled,
            "pipeline": self.pipeline,
            "eta": self.eta,
            "eta_grid": list(self.eta_grid),
            "select_eta": self.select_eta,
            "gamma_damp": self.gamma_damp,
            "preconditioner": self.preconditioner,
            "use_cmp": self.use_cmp,
            "cmp_buffer_size": self.cmp_buffer_size,
            "fisher_mode": self.fisher_mode,
            "window": self.window,
            "interval": self.interval,
            "ece": self.ece.to_dict()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdapterSetting":
        """"""
        _check_keys(cls, data, "adapter")
        return cls(**data)


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one experiment"""

    stream: StreamConfig
    score: ScoreConfig = field(default_factory=ScoreConfig)
    detector: DetectorSetting = field(default_factory=DetectorSetting)
    adapter: AdapterSetting = field(default_factory=AdapterSetting)
    n_runs: int = 200
    calibration_size: int = 500
    train_size: int = 2000
    master_seed: int = 0
    score_source: ScoreSource = ScoreSource.PIPELINE
    gaussian_shift: float = 1.0
    exact_psi: bool = False
    psi_offset: float = 0.0
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID
    checkpoints: tuple[int, ...] = DEFAULT_CHECKPOINTS
    record_trajectories: bool = False
    assertions: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        """"""
        object.__setattr__(self, "score_source", ScoreSource(self.score_source))
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        object.__setattr__(self, "checkpoints", tuple(int(t) for t in self.checkpoints))

        if self.n_runs < 1:
            raise ValidationError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.calibration_size < 10:
            raise ValidationError(f"calibration_size must be >= 10, got {self.calibration_size}")
        if self.train_size < 2:
            raise ValidationError("train_size must be >= 2")
        if not np.isfinite(self.gaussian_shift) or not np.isfinite(self.psi_offset):
            raise ValidationError("gaussian_shift and psi_offset must be finite")
        if self.exact_psi and self.score_source != ScoreSource.GAUSSIAN:
            raise ValidationError("exact_psi needs the gaussian score source")
        if any(t <= 1 for t in self.tau_grid) or list(self.tau_grid) != sorted(set(self.tau_grid)):
            raise ValidationError("tau_grid values must be > 1 and increasing")
        if any(t < 0 for t in self.checkpoints):
            raise ValidationError("checkpoints must be >= 0")

        for name, bound in self.assertions.items():
            if not isinstance(bound, dict) or not bound or set(bound) - ASSERTION_KEYS:
                raise InputFormatError(f"assertion `{name}` must map to min, max or equals")

    @property
    def length(self) -> int:
        """"""
        return self.stream.length

    @property
    def change_point(self) -> Optional[int]:
        """"""
        return self.stream.change_point

    def replace(self, **changes) -> "ExperimentConfig":
        """"""
        return replace(self, **changes)

    def to_dict(self) -> dict:
        """"""
        return {
            "stream": self.stream.to_dict(),
            "score": self.score.to_dict(),
            "detector": self.detector.to_dict(),
            "adapter": self.adapter.to_dict(),
            "n_runs": self.n_runs,
            "calibration_size": self.calibration_size,
            "train_size": self.train_size,
            "master_seed": self.master_seed,
            "score_source": self.score_source.value,
            "gaussian_shift": self.gaussian_shift,
            "exact_psi": self.exact_psi,
            "psi_offset": self.psi_offset,
            "tau_grid": list(self.tau_grid),
            "checkpoints": list(self.checkpoints),
            "record_trajectories": self.record_trajectories,
            "assertions": self.assertions
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a json document, schema violations raise InputFormatError"""
        _check_keys(cls, data, "config")
        if "stream" not in data:
            raise InputFormatError("config needs a `stream` block")

        data = dict(data)
        try:
            stream: dict = dict(data.pop("stream"))
            stream.setdefault("seed", int(data.get("master_seed", 0)))
            _check_keys(StreamConfig, stream, "stream")

            kwargs: dict = {"stream": StreamConfig.from_dict(stream)}

            if "score" in data:
                _check_keys(ScoreConfig, data["score"], "score")
                kwargs["score"] = ScoreConfig.from_dict(data.pop("score"))
            if "detector" in data:
                kwargs["detector"] = DetectorSetting.from_dict(data.pop("detector"))
            if "adapter" in data:
                kwargs["adapter"] = AdapterSetting.from_dict(data.pop("adapter"))

            kwargs.update(data)
            return cls(**kwargs)
        except (TypeError, KeyError) as e:
            raise InputFormatError(f"config schema violation: {e}")
        except ValueError as e:
            if isinstance(e, ValidationError):
                raise
            raise InputFormatError(f"config schema violation: {e}")

    def hash(self) -> str:
        """SHA-256 of the canonical document"""
        return config_hash(self.to_dict())


def load_config(filepath: str | Path) -> ExperimentConfig:
    """"""
    return ExperimentConfig.from_dict(load_json(filepath))


def save_config(filepath: str | Path, cfg: ExperimentConfig) -> Path:
    """"""
    return save_json(filepath, cfg.to_dict())
