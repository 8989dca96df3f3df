"""
Command line entry point: calibrate, detect, experiment and simulate.
"""

import sys
import logging
from argparse import ArgumentParser, Namespace
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, TextIO

import numpy as np
import pandas as pd

from . import __version__
from .base import (
    AssertionBoundError,
    DriftGuardError,
    ExitCode,
    ExperimentMode,
    InputFormatError,
    InsufficientDataError,
    ResetPolicy,
    ShiftKind,
    UsageError
)
from .calibration import (
    DEFAULT_ALPHA_BOOT,
    DEFAULT_B,
    DEFAULT_LAMBDA,
    CalibrationSummary,
    fit_calibration,
    load_score_csv,
    save_summary
)
from .config import ExperimentConfig, load_config
from .engine import DetectionEngine
from .harness import (
    RunSetup,
    check_assertions,
    default_adaptation_config,
    delay_scaling_sweep,
    flatten_report,
    null_far,
    prepare_run,
    run_mfisher,
    run_mfisher_with_trajectories,
    supermartingale_audit
)
from .stream import (
    SampleStream,
    ShiftSpec,
    StreamConfig,
    export_csv,
    export_score_csv,
    generate,
    generate_score_stream
)
from .utility import config_hash, logger, save_json, setup_logging


MIN_CALIBRATION_ROWS: int = 10


@dataclass
class RunManifest:
    """Provenance record written next to every experiment report"""

    config_hash: str
    tool_version: str = __version__
    timestamp: str = ""
    output_paths: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        """"""
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def to_dict(self) -> dict:
        """"""
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "output_paths": self.output_paths
        }


class CliParser(ArgumentParser):
    """Argument parser reporting usage errors through UsageError"""

    def error(self, message: str) -> None:
        """"""
        raise UsageError(message)


def build_parser() -> CliParser:
    """"""
    parser: CliParser = CliParser(prog="driftguard", description="Streaming shift detection and adaptation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug level logging")

    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    calibrate: CliParser = subparsers.add_parser("calibrate", help="fit a calibration summary")
    calibrate.add_argument("scores", help="`t,score` csv of null scores")
    calibrate.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    calibrate.add_argument("--B", dest="B", type=int, default=DEFAULT_B)
    calibrate.add_argument("--alpha-boot", type=float, default=DEFAULT_ALPHA_BOOT)
    calibrate.add_argument("--seed", type=int, default=0)
    calibrate.add_argument("--out", required=True, help="summary json path")

    detect: CliParser = subparsers.add_parser("detect", help="run the detector over a score stream")
    detect.add_argument("calibration", help="calibration summary json")
    detect.add_argument("--scores", default="-", help="`t,score` rows, `-` for standard input")
    detect.add_argument("--tau", type=float, default=100.0)
    detect.add_argument(
        "--reset-policy",
        choices=[p.value for p in ResetPolicy],
        default=ResetPolicy.RESET_ON_ALARM.value
    )

    experiment: CliParser = subparsers.add_parser("experiment", help="run a Monte Carlo suite")
    experiment.add_argument("--config", help="experiment config json")
    experiment.add_argument("--mode", required=True, choices=[m.value for m in ExperimentMode])
    experiment.add_argument("--seed", type=int, required=True, help="master seed")
    experiment.add_argument("--out-dir", required=True)
    experiment.add_argument("--runs", type=int, help="override n_runs")
    experiment.add_argument("--workers", type=int, help="worker processes, capped by DRIFTGUARD_THREADS")
    experiment.add_argument("--progress", action="store_true", help="show a progress bar")

    simulate: CliParser = subparsers.add_parser("simulate", help="dump a synthetic stream")
    simulate.add_argument("--seed", type=int, required=True)
    simulate.add_argument("--out", required=True, help="stream csv path")
    simulate.add_argument("--config", help="experiment config json, its stream block is used")
    simulate.add_argument("--length", type=int, default=1000)
    simulate.add_argument("--d", type=int, default=8)
    simulate.add_argument("--C", dest="C", type=int, default=4)
    simulate.add_argument("--change-point", type=int)
    simulate.add_argument("--shift", choices=[k.value for k in ShiftKind], default=ShiftKind.MEAN_TRANSLATE.value)
    simulate.add_argument("--magnitude", type=float, default=2.0, help="translation along e_1 or covariance factor")
    simulate.add_argument("--scores-out", help="also write `t,score` of a model fitted on null data")

    return parser


def cmd_calibrate(args: Namespace, stdout: TextIO) -> int:
    """Fit mu_hat, psi_hat and psi_bar from a score file"""
    df: pd.DataFrame = load_score_csv(args.scores)
    if len(df) < MIN_CALIBRATION_ROWS:
        raise InsufficientDataError(
            f"need at least {MIN_CALIBRATION_ROWS} calibration rows, got {len(df)}"
        )

    summary: CalibrationSummary = fit_calibration(
        df["score"].to_numpy(), args.lam, args.B, args.alpha_boot, args.seed
    )
    save_summary(args.out, summary)

    stdout.write(f"mu_hat\t{summary.mu_hat!r}\n")
    stdout.write(f"psi_plugin\t{summary.psi_plugin!r}\n")
    stdout.write(f"psi_bar\t{summary.psi_bar!r}\n")
    return ExitCode.SUCCESS


def cmd_detect(args: Namespace, stdin: TextIO, stdout: TextIO) -> int:
    """Stream rows through the detector, one JSON line per alarm"""
    def output(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    engine: DetectionEngine = DetectionEngine(args.tau, ResetPolicy(args.reset_policy), output)
    engine.load_calibration(args.calibration)

    try:
        if args.scores == "-":
            engine.process_source(stdin)
        else:
            path: Path = Path(args.scores)
            if not path.exists():
                raise InputFormatError(f"File not found: {path}")
            with open(path, mode="r", encoding="UTF-8") as f:
                engine.process_source(f)
    except UnicodeDecodeError as e:
        raise InputFormatError(f"score rows are not valid UTF-8: {e}")

    return ExitCode.SUCCESS


def run_experiment(
    cfg: ExperimentConfig,
    mode: ExperimentMode,
    out_dir: Path,
    workers: Optional[int] = None,
    progress: bool = False
) -> tuple[dict, list[Path]]:
    """Run one suite and write its report, return the report and written paths"""
    disable_tqdm: bool = not progress
    paths: list[Path] = []

    if mode == ExperimentMode.NULL_FAR:
        report: dict = null_far(cfg, workers, disable_tqdm).to_dict()
    elif mode == ExperimentMode.DELAY_SWEEP:
        report = delay_scaling_sweep(cfg, max_workers=workers, disable_tqdm=disable_tqdm)
    elif mode == ExperimentMode.AUDIT:
        report = supermartingale_audit(cfg, workers, disable_tqdm)
    elif cfg.record_trajectories:
        detection, adaptation, table = run_mfisher_with_trajectories(cfg, workers, disable_tqdm)
        paths.append(table.save_csv(out_dir.joinpath("trajectories.csv")))
        report = {"detection": detection.to_dict(), "adaptation": adaptation.to_dict() if adaptation else None}
    else:
        detection, adaptation = run_mfisher(cfg, workers, disable_tqdm)
        report = {"detection": detection.to_dict(), "adaptation": adaptation.to_dict() if adaptation else None}

    paths.insert(0, save_json(out_dir.joinpath(f"{mode.value}_report.json"), report))
    return report, paths


def cmd_experiment(args: Namespace, stdout: TextIO) -> int:
    """Run a suite from a config document and write report plus manifest"""
    if args.config:
        cfg: ExperimentConfig = load_config(args.config)
        cfg = cfg.replace(master_seed=args.seed)
    else:
        cfg = default_adaptation_config(args.seed)

    if args.runs is not None:
        cfg = cfg.replace(n_runs=args.runs)

    mode: ExperimentMode = ExperimentMode(args.mode)
    out_dir: Path = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    logger.info(f"Experiment {mode.value}, config {cfg.hash()[:12]}, {cfg.n_runs} runs.")
    report, paths = run_experiment(cfg, mode, out_dir, args.workers, args.progress)

    manifest_path: Path = out_dir.joinpath("manifest.json")
    manifest: RunManifest = RunManifest(
        config_hash=config_hash(cfg.to_dict()),
        output_paths=[str(p) for p in paths] + [str(manifest_path)]
    )
    save_json(manifest_path, manifest.to_dict())

    stdout.write(f"{paths[0]}\n")

    violations: list[str] = check_assertions(flatten_report(report), cfg.assertions)
    if violations:
        raise AssertionBoundError("; ".join(violations))
    return ExitCode.SUCCESS


def _simulate_config(args: Namespace) -> ExperimentConfig:
    """Config of the simulated stream from a file or the flags"""
    if args.config:
        cfg: ExperimentConfig = load_config(args.config)
        stream: StreamConfig = StreamConfig.from_dict({**cfg.stream.to_dict(), "seed": args.seed})
        return cfg.replace(master_seed=args.seed, stream=stream)

    shift: Optional[ShiftSpec] = None
    if args.change_point is not None:
        if ShiftKind(args.shift) == ShiftKind.MEAN_TRANSLATE:
            shift = ShiftSpec.mean_translate(args.magnitude * np.eye(args.d)[0])
        elif ShiftKind(args.shift) == ShiftKind.COVARIANCE_SCALE:
            shift = ShiftSpec.covariance_scale(args.magnitude)
        else:
            raise UsageError("ClassPriorShift streams need a config file")

    stream: StreamConfig = StreamConfig(
        seed=args.seed,
        length=args.length,
        d=args.d,
        C=args.C,
        change_point=args.change_point,
        shift=shift
    )
    return ExperimentConfig(stream=stream, master_seed=args.seed)


def cmd_simulate(args: Namespace, stdout: TextIO) -> int:
    """Dump a seeded stream, and optionally its scores"""
    cfg: ExperimentConfig = _simulate_config(args)

    stream: SampleStream = generate(cfg.stream)
    stdout.write(f"{export_csv(stream, args.out)}\n")

    if args.scores_out:
        setup: RunSetup = prepare_run(cfg, 0)
        scores: pd.DataFrame = generate_score_stream(cfg.stream, setup.params, setup.stats, cfg.score)
        stdout.write(f"{export_score_csv(scores, args.scores_out)}\n")

    return ExitCode.SUCCESS


def main(argv: Optional[list[str]] = None, stdin: TextIO = None, stdout: TextIO = None) -> int:
    """Parse arguments, dispatch, and map errors to exit codes"""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    try:
        args: Namespace = build_parser().parse_args(argv)
        setup_logging(logging.DEBUG if args.verbose else logging.INFO)

        if args.command == "calibrate":
            return cmd_calibrate(args, stdout)
        elif args.command == "detect":
            return cmd_detect(args, stdin, stdout)
        elif args.command == "experiment":
            return cmd_experiment(args, stdout)
        return cmd_simulate(args, stdout)
    except DriftGuardError as e:
        setup_logging()
        logger.error(f"{type(e).__name__}: {e}")
        return int(e.exit_code)
