import json
import logging
from pathlib import Path
from typing import Callable, Iterable, Optional

from .base import ResetPolicy, UsageError
from .calibration import DEFAULT_ALPHA_BOOT, CalibrationSummary, fit_calibration, load_summary
from .eprocess import EProcessState
from .handler import ScoreRowHandler
from .utility import logger


class DetectionEngine:
    """Streaming detector fed by `t,score` rows"""

    def __init__(
        self,
        tau: float = 100.0,
        reset_policy: ResetPolicy = ResetPolicy.RESET_ON_ALARM,
        output: Optional[Callable[[str], None]] = None
    ) -> None:
        """"""
        self.tau: float = tau
        self.reset_policy: ResetPolicy = ResetPolicy(reset_policy)
        self.output: Callable[[str], None] = output or print

        self.calibration: Optional[CalibrationSummary] = None
        self.detector: Optional[EProcessState] = None

        self.alarms: list[dict] = []

    def load_calibration(self, filepath: str | Path) -> CalibrationSummary:
        """Load a summary file and start a fresh detector on it"""
        summary: CalibrationSummary = load_summary(filepath)
        self.set_calibration(summary)
        self.write_log(f"Calibration loaded from {filepath}, psi_bar {summary.psi_bar:.6f}.")
        return summary

    def set_calibration(self, summary: CalibrationSummary) -> None:
        """"""
        self.calibration = summary
        self.detector = EProcessState(summary, self.tau, self.reset_policy)

    def process_source(self, lines: Iterable[str]) -> list[dict]:
        """Feed every row of the source, emitting one JSON line per alarm"""
        if self.detector is None:
            raise UsageError("load a calibration before processing scores")

        handler: ScoreRowHandler = ScoreRowHandler(self.on_score)
        for line in lines:
            handler.update_line(line)

        self.write_log(f"Processed {self.detector.t} scores, {len(self.alarms)} alarms.")
        return self.alarms

    def on_score(self, t: int, score: float) -> None:
        """Callback of one parsed row"""
        alarm: bool = self.detector.update(score)
        if not alarm:
            return

        data: dict = {"t": t, "log_m": self.detector.last_log_m}
        self.alarms.append(data)

        self.output(json.dumps(data))
        self.write_log(f"Alarm at t={t}, ln M={data['log_m']:.4f}", logging.DEBUG)

    def recalibrate(self, scores: Iterable[float]) -> CalibrationSummary:
        """Refit mu_hat and psi_bar from a fresh null buffer and restart M"""
        if self.calibration is None:
            raise UsageError("recalibration needs an initial calibration")

        old: CalibrationSummary = self.calibration
        summary: CalibrationSummary = fit_calibration(
            list(scores),
            old.lam,
            old.bootstrap_B,
            DEFAULT_ALPHA_BOOT if old.is_exact else old.alpha_boot,
            old.seed
        )

        self.calibration = summary
        self.detector.recalibrate(summary)
        self.write_log(f"Detector recalibrated on {summary.n} scores.")
        return summary

    def write_log(self, msg: str, level: int = logging.INFO) -> None:
        """Write log message"""
        logger.log(level, msg)
