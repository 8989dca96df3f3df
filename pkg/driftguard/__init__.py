# MIT License
#
# Copyright (c) 2024 DriftGuard developers
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.


__version__ = "0.1.1"


from .base import APP_NAME, ResetPolicy, LabelMode, ShiftKind, ScoreSource, ExperimentMode
from .calibration import CalibrationSummary, fit_calibration, estimate_gamma
from .eprocess import EProcessState, Trajectory
from .model import PromptParams, LabeledSample
from .fisher import FisherDiag, EceConfig, adapt
from .stream import ShiftSpec, StreamConfig, SampleStream, generate
from .template import PipelineTemplate, Parameter, Variable
from .engine import DetectionEngine
from .config import ExperimentConfig
from .harness import ExperimentEngine, run_mfisher
