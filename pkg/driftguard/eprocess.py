"""
Log-domain e-process detector with a Ville threshold.
"""

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .base import NonFiniteStateError, ResetPolicy, ValidationError
from .calibration import CalibrationSummary


@dataclass(eq=False)
class Trajectory:
    """Per-step output of a detector replay"""

    log_m: np.ndarray = field(repr=False)
    alarm: np.ndarray = field(repr=False)

    @property
    def alarm_times(self) -> list[int]:
        """1-based times of the alarms in this trajectory"""
        return (np.flatnonzero(self.alarm) + 1).tolist()


def false_alarm_budget(tau: float, alpha_boot: float) -> float:
    """Unconditional time-uniform false alarm bound alpha_boot + 1/tau"""
    if not tau > 1:
        raise ValidationError(f"tau must be > 1, got {tau}")
    return alpha_boot + 1 / tau


class EProcessState:
    """Running exponential supermartingale ln M_t with alarm history"""

    def __init__(
        self,
        calibration: CalibrationSummary,
        tau: float,
        reset_policy: ResetPolicy = ResetPolicy.RESET_ON_ALARM
    ) -> None:
        """"""
        if not np.isfinite(tau) or not tau > 1:
            raise ValidationError(f"tau must be a finite number > 1, got {tau}")

        self.calibration: CalibrationSummary = calibration
        self.tau: float = float(tau)
        self.log_tau: float = float(np.log(tau))
        self.reset_policy: ResetPolicy = ResetPolicy(reset_policy)

        self.log_m: float = 0.0
        self.t: int = 0
        self.alarm_times: list[int] = []

        # ln M_t that was compared against the threshold on the last step
        self.last_log_m: float = 0.0

    def increments(self, scores: Iterable[float]) -> np.ndarray:
        """Per-step log factors lam (s - mu_hat) - psi_bar"""
        cal: CalibrationSummary = self.calibration
        values: np.ndarray = np.asarray(scores, dtype=float).reshape(-1)
        return cal.lam * (values - cal.mu_hat) - cal.psi_bar

    def update(self, score: float) -> bool:
        """Process one score, return whether the threshold was reached"""
        score = float(score)
        if not np.isfinite(score):
            raise ValidationError(f"score must be finite, got {score}")

        increment: float = float(self.increments([score])[0])

        self.log_m = self.log_m + increment
        self.t += 1

        if not np.isfinite(self.log_m):
            raise NonFiniteStateError(f"ln M became {self.log_m} at t={self.t}")

        self.last_log_m = self.log_m
        alarm: bool = self.log_m >= self.log_tau

        if alarm:
            self.alarm_times.append(self.t)

            if self.reset_policy == ResetPolicy.RESET_ON_ALARM:
                self.log_m = 0.0

        return alarm

    def replay(self, scores: Iterable[float]) -> Trajectory:
        """
        Vectorised equivalent of calling update on every score.

        Cumulative sums accumulate left to right, so the returned values
        equal the sequential ones bit for bit.
        """
        values: np.ndarray = np.asarray(scores, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValidationError("scores must be finite")

        count: int = values.shape[0]
        log_m: np.ndarray = np.empty(count)
        alarm: np.ndarray = np.zeros(count, dtype=bool)
        if not count:
            return Trajectory(log_m, alarm)

        increments: np.ndarray = self.increments(values)

        if self.reset_policy == ResetPolicy.PAPER_LITERAL_NO_RESET:
            log_m[:] = np.cumsum(np.concatenate(([self.log_m], increments)))[1:]
            alarm[:] = log_m >= self.log_tau
        else:
            start: int = 0
            level: float = self.log_m

            while start < count:
                segment: np.ndarray = np.cumsum(np.concatenate(([level], increments[start:])))[1:]
                crossed: np.ndarray = np.flatnonzero(segment >= self.log_tau)

                if not crossed.size:
                    log_m[start:] = segment
                    break

                stop: int = start + int(crossed[0]) + 1
                log_m[start:stop] = segment[:stop - start]
                alarm[stop - 1] = True

                start = stop
                level = 0.0

        if not np.all(np.isfinite(log_m)):
            bad: int = int(np.flatnonzero(~np.isfinite(log_m))[0])
            raise NonFiniteStateError(f"ln M became non-finite at t={self.t + bad + 1}")

        # Advance the state as the sequential updates would have
        self.alarm_times.extend((self.t + np.flatnonzero(alarm) + 1).tolist())
        self.last_log_m = float(log_m[-1])

        if alarm[-1] and self.reset_policy == ResetPolicy.RESET_ON_ALARM:
            self.log_m = 0.0
        else:
            self.log_m = float(log_m[-1])
        self.t += count

        return Trajectory(log_m, alarm)

    def reset(self) -> None:
        """Restart the martingale at M = 1, keeping the alarm history"""
        self.log_m = 0.0
        self.last_log_m = 0.0

    def recalibrate(self, calibration: CalibrationSummary) -> None:
        """Swap in a freshly fitted summary and restart"""
        self.calibration = calibration
        self.reset()

    def false_alarm_budget(self) -> float:
        """Bound for this detector, 1/tau when psi is exact"""
        if self.calibration.is_exact:
            return false_alarm_budget(self.tau, 0.0)
        return false_alarm_budget(self.tau, self.calibration.alpha_boot)

    @property
    def m(self) -> float:
        """Martingale value on the natural scale"""
        return float(np.exp(self.log_m))


def first_alarm_times(
    score_matrix: np.ndarray,
    calibration: CalibrationSummary,
    tau: float
) -> np.ndarray:
    """
    First threshold crossing of each row, 1-based, 0 for none.

    The first alarm of a fresh detector does not depend on the reset policy.
    """
    if not tau > 1:
        raise ValidationError(f"tau must be > 1, got {tau}")

    scores: np.ndarray = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    increments: np.ndarray = calibration.lam * (scores - calibration.mu_hat) - calibration.psi_bar
    paths: np.ndarray = np.cumsum(increments, axis=1)

    crossed: np.ndarray = paths >= np.log(tau)

    first: np.ndarray = np.argmax(crossed, axis=1) + 1
    first[~crossed.any(axis=1)] = 0
    return first
