import json

import numpy as np
import pytest

from driftguard.base import InputFormatError, ResetPolicy, UsageError
from driftguard.calibration import save_summary
from driftguard.engine import DetectionEngine
from driftguard.eprocess import EProcessState
from driftguard.handler import ScoreRowHandler


def _rows(scores, header: bool = True) -> list[str]:
    lines = ["t,score\n"] if header else []
    lines.extend(f"{t},{s}\n" for t, s in enumerate(scores, start=1))
    return lines


class TestScoreRowHandler:

    def test_parses_rows(self):
        seen = []
        handler = ScoreRowHandler(lambda t, s: seen.append((t, s)))
        for line in ["t,score\n", "1,0.5\n", "\n", "3, -1.25 \n"]:
            handler.update_line(line)

        assert seen == [(1, 0.5), (3, -1.25)]

    def test_header_is_optional(self):
        seen = []
        handler = ScoreRowHandler(lambda t, s: seen.append(t))
        handler.update_line("7,1.0")
        assert seen == [7]

    @pytest.mark.parametrize("lines", [
        ["1,0.5", "t,score"],
        ["1,0.5,2"],
        ["1,abc"],
        ["x,1.0"],
        ["1,nan"],
        ["1,inf"],
        ["2,0.5", "2,0.6"],
        ["3,0.5", "1,0.6"],
    ])
    def test_malformed_rows(self, lines):
        handler = ScoreRowHandler(lambda t, s: None)
        with pytest.raises(InputFormatError):
            for line in lines:
                handler.update_line(line)


class TestDetectionEngine:

    def test_emits_one_alarm(self, binary_summary):
        output = []
        engine = DetectionEngine(tau=100.0, output=output.append)
        engine.set_calibration(binary_summary)

        alarms = engine.process_source(_rows([1.0] * 13))

        assert [a["t"] for a in alarms] == [13]
        assert len(output) == 1

        record = json.loads(output[0])
        assert record["t"] == 13
        assert record["log_m"] == pytest.approx(13 * (0.5 - binary_summary.psi_bar))

    def test_no_reset_policy_keeps_alarming(self, binary_summary):
        output = []
        engine = DetectionEngine(100.0, ResetPolicy.PAPER_LITERAL_NO_RESET, output.append)
        engine.set_calibration(binary_summary)
        engine.process_source(_rows([1.0] * 15))

        assert [json.loads(line)["t"] for line in output] == [13, 14, 15]

    def test_alarm_uses_row_time(self, binary_summary):
        output = []
        engine = DetectionEngine(output=output.append)
        engine.set_calibration(binary_summary)
        engine.process_source([f"{10 * t},1.0" for t in range(1, 14)])

        assert json.loads(output[0])["t"] == 130

    def test_empty_input(self, binary_summary):
        output = []
        engine = DetectionEngine(output=output.append)
        engine.set_calibration(binary_summary)

        assert engine.process_source(["t,score\n"]) == []
        assert output == []

    def test_load_calibration(self, tmp_path, binary_summary):
        path = save_summary(tmp_path / "cal.json", binary_summary)
        engine = DetectionEngine(output=lambda _: None)

        assert engine.load_calibration(path) == binary_summary
        assert engine.detector.t == 0

    def test_needs_calibration(self):
        engine = DetectionEngine(output=lambda _: None)
        with pytest.raises(UsageError):
            engine.process_source(_rows([1.0]))
        with pytest.raises(UsageError):
            engine.recalibrate([0.0, 1.0] * 10)

    def test_recalibrate_restarts_detector(self, binary_summary, rng):
        engine = DetectionEngine(output=lambda _: None)
        engine.set_calibration(binary_summary)
        engine.process_source(_rows([1.0] * 5))
        assert engine.detector.log_m != 0.0

        summary = engine.recalibrate(rng.normal(loc=2.0, size=200))

        assert engine.detector.log_m == 0.0
        assert engine.calibration is summary
        assert summary.mu_hat == pytest.approx(2.0, abs=0.2)
        assert summary.lam == binary_summary.lam
        assert summary.psi_bar >= summary.psi_plugin

    def test_malformed_row_stops_processing(self, binary_summary):
        engine = DetectionEngine(output=lambda _: None)
        engine.set_calibration(binary_summary)
        with pytest.raises(InputFormatError):
            engine.process_source(["1,0.5", "2,oops", "3,0.5"])
        assert engine.detector.t == 1

    def test_scores_match_replay(self, binary_summary, rng):
        scores = rng.normal(loc=0.8, size=200)

        engine = DetectionEngine(tau=20.0, output=lambda _: None)
        engine.set_calibration(binary_summary)
        alarms = engine.process_source(_rows(scores.tolist(), header=False))

        expected = EProcessState(binary_summary, 20.0).replay(np.asarray(scores)).alarm_times
        assert [a["t"] for a in alarms] == expected
