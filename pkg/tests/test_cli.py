import io
import json

import numpy as np
import pytest

from driftguard import __version__
from driftguard.base import ExitCode
from driftguard.calibration import load_summary, save_summary
from driftguard.cli import RunManifest, main
from driftguard.config import save_config

from conftest import LN_COSH_HALF, gaussian_config


def _write_scores(path, scores) -> str:
    lines = ["t,score"] + [f"{t},{s!r}" for t, s in enumerate(scores, start=1)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _call(argv, stdin: str = "") -> tuple[int, str]:
    stdout = io.StringIO()
    code = main(argv, stdin=io.StringIO(stdin), stdout=stdout)
    return code, stdout.getvalue()


class TestCalibrate:

    def test_alternating_scores(self, tmp_path):
        scores = _write_scores(tmp_path / "cal.csv", [0.0, 1.0] * 10)
        out = tmp_path / "summary.json"

        code, text = _call(["calibrate", scores, "--lambda", "1", "--B", "200", "--out", str(out)])
        values = dict(line.split("\t") for line in text.splitlines())

        assert code == ExitCode.SUCCESS
        assert float(values["mu_hat"]) == pytest.approx(0.5)
        assert float(values["psi_plugin"]) == pytest.approx(0.120114, abs=1e-6)
        assert float(values["psi_bar"]) >= float(values["psi_plugin"])
        assert load_summary(out).lam == 1.0

    def test_reproducible_output(self, tmp_path, rng):
        scores = _write_scores(tmp_path / "cal.csv", rng.normal(size=300).tolist())
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"

        _, text_a = _call(["calibrate", scores, "--seed", "4", "--out", str(first)])
        _, text_b = _call(["calibrate", scores, "--seed", "4", "--out", str(second)])

        assert text_a == text_b
        assert first.read_bytes() == second.read_bytes()

    def test_too_few_rows(self, tmp_path):
        scores = _write_scores(tmp_path / "cal.csv", [0.1, 0.2, 0.3, 0.4, 0.5])
        code, _ = _call(["calibrate", scores, "--out", str(tmp_path / "s.json")])
        assert code == ExitCode.INSUFFICIENT_DATA

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "cal.csv"
        path.write_text("t,score\n1,0.5\n2,abc\n")
        code, _ = _call(["calibrate", str(path), "--out", str(tmp_path / "s.json")])
        assert code == ExitCode.INPUT_FORMAT

    def test_missing_file(self, tmp_path):
        code, _ = _call(["calibrate", str(tmp_path / "none.csv"), "--out", str(tmp_path / "s.json")])
        assert code == ExitCode.INPUT_FORMAT

    def test_invalid_utf8_file(self, tmp_path):
        path = tmp_path / "cal.csv"
        path.write_bytes(b"\xff\xfe")
        code, _ = _call(["calibrate", str(path), "--out", str(tmp_path / "s.json")])
        assert code == ExitCode.INPUT_FORMAT


class TestDetect:

    @pytest.fixture
    def summary_path(self, tmp_path, binary_summary) -> str:
        return str(save_summary(tmp_path / "summary.json", binary_summary))

    def test_stdin(self, summary_path):
        rows = "t,score\n" + "".join(f"{t},1.0\n" for t in range(1, 14))
        code, text = _call(["detect", summary_path], stdin=rows)

        assert code == ExitCode.SUCCESS
        alarms = [json.loads(line) for line in text.splitlines()]
        assert [a["t"] for a in alarms] == [13]
        assert alarms[0]["log_m"] == pytest.approx(13 * (0.5 - LN_COSH_HALF))

    def test_score_file(self, tmp_path, summary_path):
        scores = _write_scores(tmp_path / "stream.csv", [1.0] * 30)
        code, text = _call(["detect", summary_path, "--scores", scores, "--reset-policy", "PaperLiteralNoReset"])

        assert code == ExitCode.SUCCESS
        assert [json.loads(line)["t"] for line in text.splitlines()] == list(range(13, 31))

    def test_empty_stream(self, summary_path):
        code, text = _call(["detect", summary_path], stdin="")
        assert code == ExitCode.SUCCESS
        assert text == ""

    def test_malformed_row(self, summary_path):
        code, _ = _call(["detect", summary_path], stdin="1,0.5\n1,0.7\n")
        assert code == ExitCode.INPUT_FORMAT

    def test_missing_score_file(self, tmp_path, summary_path):
        code, _ = _call(["detect", summary_path, "--scores", str(tmp_path / "none.csv")])
        assert code == ExitCode.INPUT_FORMAT

    def test_bad_summary(self, tmp_path):
        path = tmp_path / "summary.json"
        path.write_text(json.dumps({"mu_hat": 0.0}))
        code, _ = _call(["detect", str(path)], stdin="1,0.5\n")
        assert code == ExitCode.INPUT_FORMAT

    def test_invalid_utf8_stdin(self, summary_path):
        stdin = io.TextIOWrapper(io.BytesIO(b"\xff\xfe"), encoding="UTF-8")
        assert main(["detect", summary_path], stdin=stdin, stdout=io.StringIO()) == ExitCode.INPUT_FORMAT

    def test_invalid_utf8_score_file(self, tmp_path, summary_path):
        path = tmp_path / "scores.csv"
        path.write_bytes(b"\xff\xfe")
        code, _ = _call(["detect", summary_path, "--scores", str(path)])
        assert code == ExitCode.INPUT_FORMAT

    def test_invalid_utf8_summary(self, tmp_path):
        path = tmp_path / "summary.json"
        path.write_bytes(b"\xff\xfe")
        code, _ = _call(["detect", str(path)], stdin="1,0.5\n")
        assert code == ExitCode.INPUT_FORMAT


class TestExperiment:

    @pytest.fixture
    def config_path(self, tmp_path) -> str:
        cfg = gaussian_config(n_runs=40, length=100)
        return str(save_config(tmp_path / "cfg.json", cfg))

    def test_report_and_manifest(self, tmp_path, config_path):
        out_dir = tmp_path / "out"
        code, text = _call(["experiment", "--config", config_path, "--mode", "null_far", "--seed", "3", "--out-dir", str(out_dir)])

        assert code == ExitCode.SUCCESS
        report_path = out_dir / "null_far_report.json"
        assert text.strip() == str(report_path)

        report = json.loads(report_path.read_text())
        assert report["n_runs"] == 40
        assert report["false_alarm_budget"] == pytest.approx(0.01)

        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["tool_version"] == __version__
        assert len(manifest["config_hash"]) == 64
        assert str(report_path) in manifest["output_paths"]

    def test_rerun_is_identical(self, tmp_path, config_path):
        argv = ["experiment", "--config", config_path, "--mode", "null_far", "--seed", "3"]
        _call(argv + ["--out-dir", str(tmp_path / "a")])
        _call(argv + ["--out-dir", str(tmp_path / "b")])

        first = (tmp_path / "a" / "null_far_report.json").read_bytes()
        second = (tmp_path / "b" / "null_far_report.json").read_bytes()
        assert first == second

        hash_a = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_hash"]
        hash_b = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_hash"]
        assert hash_a == hash_b

    def test_violated_assertion(self, tmp_path):
        cfg = gaussian_config(n_runs=20, length=100, assertions={"empirical_far": {"max": -1.0}})
        path = save_config(tmp_path / "cfg.json", cfg)

        code, _ = _call(["experiment", "--config", str(path), "--mode", "null_far", "--seed", "1", "--out-dir", str(tmp_path / "out")])

        assert code == ExitCode.ASSERTION
        assert (tmp_path / "out" / "null_far_report.json").exists()

    def test_audit_mode(self, tmp_path):
        cfg = gaussian_config(n_runs=50, checkpoints=(0, 1, 5))
        path = save_config(tmp_path / "cfg.json", cfg)

        code, _ = _call(["experiment", "--config", str(path), "--mode", "audit", "--seed", "2", "--out-dir", str(tmp_path)])
        report = json.loads((tmp_path / "audit_report.json").read_text())

        assert code == ExitCode.SUCCESS
        assert [c["t"] for c in report["checkpoints"]] == [0, 1, 5]

    def test_delay_sweep_without_change_point(self, tmp_path, config_path):
        code, _ = _call(["experiment", "--config", config_path, "--mode", "delay_sweep", "--seed", "1", "--out-dir", str(tmp_path)])
        assert code == ExitCode.USAGE

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"stream": {"length": 10}, "runs": 3}))

        code, _ = _call(["experiment", "--config", str(path), "--mode", "null_far", "--seed", "1", "--out-dir", str(tmp_path)])
        assert code == ExitCode.INPUT_FORMAT


class TestSimulate:

    def test_stream_and_scores(self, tmp_path):
        stream_path = tmp_path / "stream.csv"
        score_path = tmp_path / "scores.csv"

        code, text = _call([
            "simulate", "--seed", "3", "--length", "50", "--change-point", "20",
            "--out", str(stream_path), "--scores-out", str(score_path)
        ])

        assert code == ExitCode.SUCCESS
        assert text.splitlines() == [str(stream_path), str(score_path)]

        stream_lines = stream_path.read_text().splitlines()
        assert stream_lines[0].startswith("t,label,f1")
        assert len(stream_lines) == 51

        score_lines = score_path.read_text().splitlines()
        assert score_lines[0] == "t,score"
        assert len(score_lines) == 51

    def test_same_seed_same_file(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            _call(["simulate", "--seed", "8", "--length", "30", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_prior_shift_needs_config(self, tmp_path):
        code, _ = _call([
            "simulate", "--seed", "1", "--change-point", "5", "--shift", "ClassPriorShift",
            "--out", str(tmp_path / "s.csv")
        ])
        assert code == ExitCode.USAGE


class TestUsage:

    @pytest.mark.parametrize("argv", [
        [],
        ["unknown"],
        ["calibrate", "scores.csv"],
        ["detect"],
        ["experiment", "--mode", "nope", "--seed", "1", "--out-dir", "x"],
        ["detect", "cal.json", "--tau", "abc"],
    ])
    def test_usage_errors(self, argv):
        code, _ = _call(argv)
        assert code == ExitCode.USAGE

    def test_manifest_timestamp(self):
        manifest = RunManifest(config_hash="0" * 64)
        assert manifest.timestamp.endswith("+00:00")
        assert manifest.to_dict()["output_paths"] == []


def test_seed_overrides_config(tmp_path):
    cfg = gaussian_config(n_runs=5, length=50)
    path = save_config(tmp_path / "cfg.json", cfg)

    reports = []
    for seed in ("1", "2"):
        out_dir = tmp_path / seed
        _call(["experiment", "--config", str(path), "--mode", "null_far", "--seed", seed, "--out-dir", str(out_dir)])
        reports.append(json.loads((out_dir / "null_far_report.json").read_text()))

    assert reports[0]["n_runs"] == reports[1]["n_runs"] == 5
    assert np.isfinite(reports[0]["empirical_far"])
