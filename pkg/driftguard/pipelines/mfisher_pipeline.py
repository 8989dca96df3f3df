import logging
from typing import Optional

import numpy as np

from driftguard.fisher import FisherDiag, adapt, estimate_fisher_diag
from driftguard.model import LabeledSample, predict, score_feature
from driftguard.table import FeatureWindow
from driftguard.template import Parameter, PipelineTemplate, SampleRecord, Variable


class MFisherPipeline(PipelineTemplate):
    """Martingale detection with Fisher preconditioned adaptation on alarm"""

    author: str = "DriftGuard"

    adapt_enabled = Parameter(True)
    eta = Parameter(5e-5)
    gamma_damp = Parameter(1e-4)
    preconditioner = Parameter("fisher")
    use_cmp = Parameter(True)
    fisher_mode = Parameter("train")
    window = Parameter(64)

    log_m = Variable(0.0)
    last_score = Variable(0.0)
    alarm_count = Variable(0)
    adapt_count = Variable(0)

    def on_init(self) -> None:
        """Callback when pipeline is inited"""
        if self.preconditioner not in ("fisher", "identity"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.fisher_mode not in ("train", "window"):
            raise ValueError(f"unknown fisher_mode {self.fisher_mode!r}")

        self.detector = self.new_detector()
        self.feature_window: FeatureWindow = FeatureWindow(self.context.params.d, int(self.window))

        self.write_log("Pipeline is inited.")

    def on_sample(self, t: int, sample: LabeledSample) -> SampleRecord:
        """Predict, score, update the detector, adapt on alarm"""
        context = self.context

        probabilities: np.ndarray = predict(context.params, sample.feature)
        score: float = score_feature(context.params, sample.feature, context.stats, context.score_cfg)

        alarm: bool = self.detector.update(score)
        self.feature_window.update_feature(sample.feature)

        self.last_score = score
        self.log_m = self.detector.log_m

        adapted: bool = False
        if alarm:
            self.alarm_count += 1
            self.write_log(f"Alarm at t={t}, ln M={self.detector.last_log_m:.4f}", logging.DEBUG)

        if self.should_adapt(t, alarm):
            self.adapt_step(sample.feature)
            adapted = True

        return SampleRecord(
            t=t,
            score=score,
            log_m=self.detector.last_log_m,
            alarm=alarm,
            adapted=adapted,
            label=sample.label,
            correct=bool(int(np.argmax(probabilities)) == sample.label),
            confidence=float(probabilities.max()),
            probabilities=probabilities
        )

    def should_adapt(self, t: int, alarm: bool) -> bool:
        """One step per alarm, or per sample above threshold without reset"""
        return bool(self.adapt_enabled and alarm)

    def get_fisher(self) -> Optional[FisherDiag]:
        """Fisher used for the next step, None for the identity metric"""
        if self.preconditioner == "identity":
            return None

        if self.fisher_mode == "window" and len(self.feature_window):
            return estimate_fisher_diag(
                self.context.params,
                self.feature_window.get_array(),
                self.gamma_damp
            )

        return self.context.fisher

    def adapt_step(self, feature: np.ndarray) -> None:
        """Take one step on S_t + L_CMP"""
        context = self.context

        cmp_buffer = context.cmp_buffer if self.use_cmp else None
        context.params = adapt(
            context.params,
            feature,
            self.get_fisher(),
            self.eta,
            cmp_buffer,
            context.ece_cfg
        )

        self.adapt_count += 1
        self.write_log(f"Adaptation step {self.adapt_count} taken.", logging.DEBUG)


class IntervalPipeline(MFisherPipeline):
    """Adapts every `interval` samples whatever the detector says"""

    interval = Parameter(50)

    def should_adapt(self, t: int, alarm: bool) -> bool:
        """Fixed schedule in place of the martingale trigger"""
        return bool(self.adapt_enabled and t % int(self.interval) == 0)
