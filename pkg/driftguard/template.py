import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Type, Union

import numpy as np

from .base import ResetPolicy
from .calibration import CalibrationSummary
from .eprocess import EProcessState
from .fisher import EceConfig, FisherDiag
from .model import LabeledSample, PromptParams
from .score import FeatureStats, ScoreConfig


class PipelineEngine(Protocol):
    """What a pipeline needs from the engine driving it"""

    def write_log(
        self,
        msg: str,
        pipeline: Optional["PipelineTemplate"] = None,
        level: int = logging.INFO
    ) -> None:
        ...


@dataclass
class PipelineContext:
    """Shared state handed to a pipeline for one run"""

    params: PromptParams
    stats: FeatureStats
    score_cfg: ScoreConfig
    calibration: CalibrationSummary
    tau: float = 100.0
    reset_policy: ResetPolicy = ResetPolicy.RESET_ON_ALARM
    fisher: Optional[FisherDiag] = None
    cmp_buffer: Optional[tuple[np.ndarray, np.ndarray]] = None
    ece_cfg: EceConfig = field(default_factory=EceConfig)


@dataclass
class SampleRecord:
    """Outcome of processing one stream sample"""

    t: int
    score: float
    log_m: float
    alarm: bool
    adapted: bool
    label: int
    correct: bool
    confidence: float
    probabilities: np.ndarray = field(repr=False)


class PipelineTemplate:
    """Pipeline template"""

    author: str = ""
    parameters: list = []
    variables: list = []

    def __init__(
        self,
        pipeline_engine: PipelineEngine,
        pipeline_name: str,
        context: PipelineContext,
        setting: dict,
    ) -> None:
        """
        Normally no need to call this __init__ when implementing a pipeline.
        """
        self.pipeline_engine: PipelineEngine = pipeline_engine

        self.pipeline_name: str = pipeline_name
        self.context: PipelineContext = context

        # Pipeline status variable
        self.inited: bool = False
        self.running: bool = False

        self.detector: Optional[EProcessState] = None

        # Update pipeline setting
        self.update_setting(setting)

    def update_setting(self, setting: dict) -> None:
        """Update parameters from setting"""
        for name in self.parameters:
            if name in setting:
                setattr(self, name, setting[name])

    @classmethod
    def get_class_parameters(cls) -> dict:
        """Get pipeline default parameters"""
        class_parameters: dict = {}
        for name in cls.parameters:
            class_parameters[name] = getattr(cls, name)
        return class_parameters

    def get_parameters(self) -> dict:
        """Get pipeline object parameters"""
        pipeline_parameters: dict = {}
        for name in self.parameters:
            pipeline_parameters[name] = getattr(self, name)
        return pipeline_parameters

    def get_variables(self) -> dict:
        """Get pipeline object variables"""
        pipeline_variables: dict = {}
        for name in self.variables:
            pipeline_variables[name] = getattr(self, name)
        return pipeline_variables

    def get_data(self) -> dict:
        """Get pipeline data dict"""
        pipeline_data: dict = {
            "pipeline_name": self.pipeline_name,
            "class_name": self.__class__.__name__,
            "author": self.author,
            "inited": self.inited,
            "running": self.running,
            "parameters": self.get_parameters(),
            "variables": self.get_variables(),
        }
        return pipeline_data

    def on_init(self) -> None:
        """Callback when pipeline is inited"""
        pass

    def on_sample(self, t: int, sample: LabeledSample) -> Optional[SampleRecord]:
        """Callback of a new stream sample"""
        pass

    def on_finish(self) -> None:
        """Callback when the stream is exhausted"""
        pass

    def new_detector(self) -> EProcessState:
        """Create a fresh detector from the context"""
        context: PipelineContext = self.context
        return EProcessState(context.calibration, context.tau, context.reset_policy)

    def write_log(self, msg: str, level: int = logging.INFO) -> None:
        """Write log"""
        self.pipeline_engine.write_log(msg, self, level)


FieldValue = Union[str, int, float, bool]


class PipelineField:
    """Member value of pipeline class"""

    def __init__(
        self,
        value: FieldValue,
        type: str,
    ) -> None:
        """"""
        self.value: FieldValue = value
        self.type: str = type

    def __set_name__(self, owner: Type[PipelineTemplate], name: str) -> None:
        """Add field name into related list"""
        # Copy the inherited list so subclasses do not grow their parents
        inherited: list[str] = getattr(owner, self.type, [])
        if self.type not in owner.__dict__:
            setattr(owner, self.type, list(inherited))

        names: list[str] = getattr(owner, self.type)
        if name not in names:
            names.append(name)

        setattr(owner, name, self.value)


class Parameter(PipelineField):
    """Pipeline parameter member"""

    def __init__(self, value: Any) -> None:
        """"""
        super().__init__(value, "parameters")


class Variable(PipelineField):
    """Pipeline variable member"""

    def __init__(self, value: Any) -> None:
        """"""
        super().__init__(value, "variables")
