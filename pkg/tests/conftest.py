import numpy as np
import pytest

from driftguard.calibration import CalibrationSummary
from driftguard.config import AdapterSetting, DetectorSetting, ExperimentConfig
from driftguard.stream import ShiftSpec, StreamConfig
from driftguard.utility import logger


# psi of the centred {0, 1} scores at lambda = 1
LN_COSH_HALF: float = float(np.log(np.cosh(0.5)))


@pytest.fixture(autouse=True)
def detach_log_handlers():
    """Drop handlers bound to a captured stderr between tests"""
    yield
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def binary_summary() -> CalibrationSummary:
    """Calibration of alternating {0, 1} scores with lambda 1 and psi_bar at the plug-in value"""
    return CalibrationSummary(
        mu_hat=0.5,
        lam=1.0,
        psi_plugin=LN_COSH_HALF,
        psi_bar=LN_COSH_HALF,
        n=20,
        alpha_boot=0.05,
        bootstrap_B=1000,
        seed=0
    )


def gaussian_config(
    n_runs: int = 200,
    length: int = 400,
    change_point=None,
    shift: float = 1.0,
    lam: float = 0.5,
    tau: float = 100.0,
    **kwargs
) -> ExperimentConfig:
    """Gaussian score idealisation with exact psi"""
    stream: StreamConfig = StreamConfig(
        seed=0,
        length=length,
        change_point=change_point,
        shift=None if change_point is None else ShiftSpec.mean_translate(np.zeros(8))
    )
    data: dict = {
        "stream": stream,
        "n_runs": n_runs,
        "score_source": "gaussian",
        "exact_psi": True,
        "gaussian_shift": shift,
        "master_seed": 11
    }
    data.update(kwargs)

    cfg: ExperimentConfig = ExperimentConfig(**data)
    return cfg.replace(detector=DetectorSetting(tau=tau, lam=lam))


def pipeline_config(
    n_runs: int = 4,
    length: int = 300,
    change_point=100,
    enabled: bool = True,
    **kwargs
) -> ExperimentConfig:
    """Small feature-stream config for the full loop"""
    stream: StreamConfig = StreamConfig(
        seed=0,
        length=length,
        change_point=change_point,
        shift=None if change_point is None else ShiftSpec.mean_translate(2.0 * np.eye(8)[0])
    )
    cfg: ExperimentConfig = ExperimentConfig(
        stream=stream,
        n_runs=n_runs,
        calibration_size=300,
        train_size=1000,
        master_seed=5,
        **kwargs
    )
    return cfg.replace(
        adapter=AdapterSetting(enabled=enabled, eta=1e-3),
        detector=DetectorSetting(B=200)
    )
