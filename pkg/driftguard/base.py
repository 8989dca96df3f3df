from enum import Enum, IntEnum


APP_NAME = "DriftGuard"


THREADS_ENV = "DRIFTGUARD_THREADS"


class ResetPolicy(Enum):
    """What the detector does after crossing the threshold"""

    RESET_ON_ALARM = "ResetOnAlarm"
    PAPER_LITERAL_NO_RESET = "PaperLiteralNoReset"


class LabelMode(Enum):
    """Label source of the Fisher estimate"""

    MODEL_EXPECTATION = "ModelExpectation"
    EMPIRICAL = "Empirical"


class ShiftKind(Enum):
    """Shift family applied after a change point"""

    MEAN_TRANSLATE = "MeanTranslate"
    COVARIANCE_SCALE = "CovarianceScale"
    CLASS_PRIOR_SHIFT = "ClassPriorShift"


class ScoreSource(Enum):
    """Where run scores come from"""

    PIPELINE = "pipeline"
    GAUSSIAN = "gaussian"


class ExperimentMode(Enum):
    """Experiment suites reachable from the command line"""

    NULL_FAR = "null_far"
    DELAY_SWEEP = "delay_sweep"
    ADAPT = "adapt"
    AUDIT = "audit"


class ExitCode(IntEnum):
    """Process exit codes of the command line"""

    SUCCESS = 0
    ASSERTION = 1
    INPUT_FORMAT = 2
    INSUFFICIENT_DATA = 3
    USAGE = 4


class DriftGuardError(Exception):
    """Base error carrying the exit code used by the command line"""

    exit_code: ExitCode = ExitCode.INPUT_FORMAT


class InputFormatError(DriftGuardError):
    """Malformed file, row or document"""

    exit_code: ExitCode = ExitCode.INPUT_FORMAT


class InsufficientDataError(DriftGuardError):
    """Not enough rows or samples to fit"""

    exit_code: ExitCode = ExitCode.INSUFFICIENT_DATA


class UsageError(DriftGuardError):
    """Invalid mode or flag combination"""

    exit_code: ExitCode = ExitCode.USAGE


class ValidationError(DriftGuardError, ValueError):
    """Domain invariant violated by an input"""

    exit_code: ExitCode = ExitCode.INPUT_FORMAT


class NonFiniteStateError(DriftGuardError, ArithmeticError):
    """Numeric state of a run became non-finite"""

    exit_code: ExitCode = ExitCode.INPUT_FORMAT


class AssertionBoundError(DriftGuardError):
    """Acceptance bound of an experiment violated"""

    exit_code: ExitCode = ExitCode.ASSERTION
