"""
Monte Carlo harness: runs the detection and adaptation loop on seeded
streams and aggregates the results of many independent runs.
"""

import logging
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Type

import numpy as np
from pandas import DataFrame
from tqdm import tqdm

from .base import DriftGuardError, ResetPolicy, ScoreSource, UsageError
from .calibration import (
    CalibrationSummary,
    estimate_gamma,
    fit_calibration,
    fit_mu_hat,
    gaussian_psi,
    plugin_psi_function,
    select_lambda
)
from .config import AdapterSetting, DetectorSetting, ExperimentConfig
from .eprocess import EProcessState, Trajectory, first_alarm_times
from .fisher import FisherDiag, ece_hard, estimate_fisher_diag, select_eta
from .model import PromptParams, score_feature
from .pipelines import load_pipeline_classes
from .score import FeatureStats
from .stream import SampleStream, ShiftSpec, StreamConfig, generate, generate_gaussian_scores
from .table import TrajectoryTable
from .template import PipelineContext, PipelineTemplate, SampleRecord
from .utility import derive_seed, get_worker_count, logger


# Desk-scale adaptation suite
ADAPT_SHIFT: float = 2.0
ADAPT_LAMBDA_SHIFT: float = 1.25
ADAPT_ETA: float = 5e-3

# Runs handed to one worker task; fixed so results never depend on the pool
CHUNK_SIZE: int = 250

# Sub-stream keys of one run
TRAIN_KEY: int = 0
CALIBRATION_KEY: int = 1
BOOTSTRAP_KEY: int = 2
TEST_KEY: int = 3

# Threshold the audit detector never reaches
AUDIT_TAU: float = 1e300


@dataclass
class DetectionReport:
    """Detection metrics aggregated over runs"""

    runs: list[dict]
    empirical_far: float
    mean_delay: Optional[float]
    delay_std: Optional[float]
    gamma_hat: Optional[float]
    gamma_sup: Optional[float]
    predicted_delay: Optional[float]
    false_alarm_budget: float
    tau: float
    n_runs: int
    n_aborted: int = 0

    def to_dict(self) -> dict:
        """"""
        return {
            "runs": self.runs,
            "empirical_far": self.empirical_far,
            "mean_delay": self.mean_delay,
            "delay_std": self.delay_std,
            "gamma_hat": self.gamma_hat,
            "gamma_sup": self.gamma_sup,
            "predicted_delay": self.predicted_delay,
            "false_alarm_budget": self.false_alarm_budget,
            "tau": self.tau,
            "n_runs": self.n_runs,
            "n_aborted": self.n_aborted
        }


@dataclass
class AdaptationReport:
    """Accuracy and calibration before and after the shift, per arm"""

    acc_pre: float
    acc_post_no_adapt: float
    acc_post_adapt: float
    ece_pre: float
    ece_post_no_adapt: float
    ece_post_adapt: float
    n_adapt_steps: int
    win_rate: float = 0.0
    n_runs: int = 0

    @property
    def ece_reduction(self) -> float:
        """Mean post-change ECE removed by adapting, negative when it grew"""
        return self.ece_post_no_adapt - self.ece_post_adapt

    def to_dict(self) -> dict:
        """"""
        return {
            "acc_pre": self.acc_pre,
            "acc_post_no_adapt": self.acc_post_no_adapt,
            "acc_post_adapt": self.acc_post_adapt,
            "ece_pre": self.ece_pre,
            "ece_post_no_adapt": self.ece_post_no_adapt,
            "ece_post_adapt": self.ece_post_adapt,
            "ece_reduction": self.ece_reduction,
            "n_adapt_steps": self.n_adapt_steps,
            "win_rate": self.win_rate,
            "n_runs": self.n_runs
        }


@dataclass
class RunSetup:
    """Objects fitted before the test stream of one run starts"""

    calibration: CalibrationSummary
    cal_scores: np.ndarray = field(repr=False)
    params: Optional[PromptParams] = None
    stats: Optional[FeatureStats] = None
    fisher: Optional[FisherDiag] = None
    cmp_buffer: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    eta: Optional[float] = None


def run_seed(cfg: ExperimentConfig, run: int) -> int:
    """Seed of one run derived from the master seed"""
    return derive_seed(cfg.master_seed, run)


def run_stream_config(cfg: ExperimentConfig, run: int) -> StreamConfig:
    """Test stream of one run"""
    return replace(cfg.stream, seed=derive_seed(run_seed(cfg, run), TEST_KEY))


def _null_stream_config(cfg: ExperimentConfig, run: int, key: int, length: int) -> StreamConfig:
    """Unshifted stream with the base distribution of the experiment"""
    base: StreamConfig = cfg.stream
    return StreamConfig(
        seed=derive_seed(run_seed(cfg, run), key),
        length=length,
        d=base.d,
        C=base.C,
        class_means=base.class_means,
        class_cov=base.class_cov,
        prior=base.prior
    )


def run_lambda(cfg: ExperimentConfig, cal_scores: np.ndarray) -> float:
    """Configured lambda, or the growth maximiser for the hypothesised shift"""
    detector = cfg.detector
    if detector.lambda_shift is None:
        return detector.lam

    if cfg.exact_psi:
        return select_lambda(0.0, gaussian_psi, detector.lambda_shift)

    mu_hat: float = fit_mu_hat(cal_scores)
    return select_lambda(mu_hat, plugin_psi_function(cal_scores, mu_hat), detector.lambda_shift)


def _fit_summary(cfg: ExperimentConfig, run: int, cal_scores: np.ndarray) -> CalibrationSummary:
    """Calibration of one run, exact or bootstrapped, with the optional offset"""
    detector = cfg.detector
    lam: float = run_lambda(cfg, cal_scores)

    if cfg.exact_psi:
        summary: CalibrationSummary = CalibrationSummary.exact(0.0, lam, gaussian_psi(lam))
    else:
        summary = fit_calibration(
            cal_scores,
            lam,
            detector.B,
            detector.alpha_boot,
            derive_seed(run_seed(cfg, run), BOOTSTRAP_KEY)
        )

    if cfg.psi_offset:
        summary = replace(summary, psi_bar=summary.psi_bar + cfg.psi_offset)
    return summary


def prepare_run(cfg: ExperimentConfig, run: int) -> RunSetup:
    """Fit model, feature statistics, calibration and Fisher for one run"""
    if cfg.score_source == ScoreSource.GAUSSIAN:
        cal_scores: np.ndarray = generate_gaussian_scores(
            derive_seed(run_seed(cfg, run), CALIBRATION_KEY),
            cfg.calibration_size
        )
        return RunSetup(_fit_summary(cfg, run, cal_scores), cal_scores)

    train: SampleStream = generate(_null_stream_config(cfg, run, TRAIN_KEY, cfg.train_size))
    params: PromptParams = PromptParams.from_class_means(train.features, train.labels, cfg.stream.C)
    stats: FeatureStats = FeatureStats.from_features(train.features)

    # Held-out null samples, disjoint from the test stream
    held_out: SampleStream = generate(_null_stream_config(cfg, run, CALIBRATION_KEY, cfg.calibration_size))
    cal_scores = np.array([
        score_feature(params, x, stats, cfg.score) for x in held_out.features
    ])

    adapter = cfg.adapter
    fisher: FisherDiag = estimate_fisher_diag(params, train.features, adapter.gamma_damp)

    size: int = min(adapter.cmp_buffer_size, len(held_out))
    cmp_buffer: tuple = (held_out.features[:size], held_out.labels[:size])

    eta: float = adapter.eta
    if adapter.select_eta:
        eta = select_eta(
            params,
            fisher if adapter.preconditioner == "fisher" else None,
            cmp_buffer[0],
            cmp_buffer[1],
            adapter.eta_grid,
            adapter.ece
        )

    return RunSetup(
        calibration=_fit_summary(cfg, run, cal_scores),
        cal_scores=cal_scores,
        params=params,
        stats=stats,
        fisher=fisher,
        cmp_buffer=cmp_buffer,
        eta=eta
    )


def score_path(cfg: ExperimentConfig, setup: RunSetup, run: int) -> np.ndarray:
    """Test-stream scores of one run with the model held fixed"""
    stream_cfg: StreamConfig = run_stream_config(cfg, run)

    if cfg.score_source == ScoreSource.GAUSSIAN:
        return generate_gaussian_scores(
            stream_cfg.seed,
            stream_cfg.length,
            stream_cfg.change_point,
            cfg.gaussian_shift
        )

    stream: SampleStream = generate(stream_cfg)
    return np.array([
        score_feature(setup.params, x, setup.stats, cfg.score) for x in stream.features
    ])


def growth_rates(
    cfg: ExperimentConfig,
    setup: RunSetup,
    post_mean: float
) -> tuple[float, float]:
    """Growth at the detector lambda and grid supremum, both for one run"""
    cal: CalibrationSummary = setup.calibration
    at_lambda: float = cal.lam * (post_mean - cal.mu_hat) - cal.psi_bar

    if cfg.exact_psi:
        psi_of: Callable = gaussian_psi
    else:
        psi_of = plugin_psi_function(setup.cal_scores, cal.mu_hat)

    supremum: float = estimate_gamma(cal.mu_hat, psi_of, post_mean).gamma
    return at_lambda, supremum


def alarm_summary(alarms: list[int], change_point: Optional[int]) -> tuple[Optional[int], bool]:
    """Delay of the first alarm after the change and the false alarm flag"""
    if change_point is None:
        return None, bool(alarms)

    falsely_alarmed: bool = any(t <= change_point for t in alarms)
    if falsely_alarmed:
        return None, True

    later: list[int] = [t for t in alarms if t > change_point]
    if not later:
        return None, False
    return later[0] - change_point, False


class ExperimentEngine:
    """
    Runs one pipeline over one stream and computes its statistics
    """

    def __init__(self) -> None:
        """"""
        self.cfg: ExperimentConfig = None
        self.run: int = 0

        self.pipeline_class: Type[PipelineTemplate] = None
        self.pipeline: PipelineTemplate = None

        self.records: list[SampleRecord] = []
        self.logs: list[str] = []
        self.abort_msg: Optional[str] = None

        self.result_df: DataFrame = None

    def set_parameters(self, cfg: ExperimentConfig, run: int = 0) -> None:
        """Set experiment parameters"""
        self.cfg = cfg
        self.run = run

    def add_pipeline(
        self,
        pipeline_class: Type[PipelineTemplate],
        context: PipelineContext,
        setting: dict
    ) -> None:
        """Add the pipeline for this run"""
        self.pipeline_class = pipeline_class
        self.pipeline = pipeline_class(
            self,
            f"{pipeline_class.__name__}_{self.run}",
            context,
            setting
        )

    def run_stream(self, stream: SampleStream, disable_tqdm: bool = True) -> None:
        """Feed every sample of the stream to the pipeline in time order"""
        pipeline: PipelineTemplate = self.pipeline

        self._call_pipeline_func(pipeline, pipeline.on_init)
        if self.abort_msg:
            return

        pipeline.inited = True
        pipeline.running = True

        for t, sample in tqdm(stream, total=len(stream), disable=disable_tqdm):
            record: Optional[SampleRecord] = self._call_pipeline_func(pipeline, pipeline.on_sample, t, sample)
            if self.abort_msg:
                return
            self.records.append(record)

        self._call_pipeline_func(pipeline, pipeline.on_finish)
        pipeline.running = False

    def _call_pipeline_func(self, pipeline: PipelineTemplate, func: Callable, *args) -> object:
        """Call pipeline method with exception process"""
        try:
            return func(*args)
        except Exception as e:
            pipeline.running = False
            pipeline.inited = False

            self.abort_msg = f"{type(e).__name__}: {e}"
            msg: str = f"Pipeline stopped due to exception\n{traceback.format_exc()}"
            self.write_log(msg, pipeline, logging.ERROR)

    def calculate_result(self) -> DataFrame:
        """Per-sample records as a DataFrame"""
        results: dict = defaultdict(list)

        for record in self.records:
            for key in ("t", "score", "log_m", "alarm", "adapted", "label", "correct", "confidence"):
                results[key].append(getattr(record, key))

        if results:
            self.result_df = DataFrame.from_dict(results).set_index("t")
        else:
            self.result_df = DataFrame(columns=["score", "log_m", "alarm", "adapted", "label", "correct", "confidence"])
        return self.result_df

    def calculate_statistics(self, df: DataFrame = None, change_point: Optional[int] = None) -> dict:
        """Detection and accuracy statistics split at the change point"""
        if df is None:
            df = self.result_df

        n_bins: int = self.cfg.adapter.ece.n_bins
        probabilities: np.ndarray = np.array([r.probabilities for r in self.records])

        count: int = len(df)
        split: int = count if change_point is None else min(change_point, count)

        def segment(start: int, stop: int) -> tuple[float, float]:
            if stop <= start:
                return float("nan"), float("nan")
            correct: np.ndarray = df["correct"].to_numpy()[start:stop]
            labels: np.ndarray = df["label"].to_numpy()[start:stop]
            return float(correct.mean()), ece_hard(probabilities[start:stop], labels, n_bins)

        acc_pre, ece_pre = segment(0, split)
        if change_point is None:
            acc_post, ece_post = acc_pre, ece_pre
        else:
            acc_post, ece_post = segment(split, count)

        alarms: list[int] = [int(t) for t in df.index[df["alarm"].to_numpy(dtype=bool)]]
        delay, falsely_alarmed = alarm_summary(alarms, change_point)

        scores: np.ndarray = df["score"].to_numpy(dtype=float)
        post_scores: np.ndarray = scores if change_point is None else scores[split:]

        statistics: dict = {
            "alarms": alarms,
            "delay": delay,
            "falsely_alarmed": falsely_alarmed,
            "acc_pre": acc_pre,
            "acc_post": acc_post,
            "ece_pre": ece_pre,
            "ece_post": ece_post,
            "n_adapt_steps": int(df["adapted"].sum()) if count else 0,
            "post_mean_score": float(post_scores.mean()) if post_scores.size else float("nan")
        }
        return statistics

    def write_log(self, msg: str, pipeline: PipelineTemplate = None, level: int = logging.INFO) -> None:
        """Write log message"""
        if pipeline:
            msg = f"{pipeline.pipeline_name}: {msg}"

        self.logs.append(msg)
        logger.log(level, msg)

    def output(self, msg: str) -> None:
        """Output message of the experiment"""
        logger.info(msg)


def _pipeline_class(name: str) -> Type[PipelineTemplate]:
    """"""
    classes: dict = load_pipeline_classes()
    if name not in classes:
        raise UsageError(f"pipeline class not found: {name}")
    return classes[name]


def _run_arm(
    cfg: ExperimentConfig,
    run: int,
    setup: RunSetup,
    stream: SampleStream,
    adapt_enabled: bool
) -> tuple[ExperimentEngine, dict]:
    """Run one arm of the paired comparison on a private cursor"""
    context: PipelineContext = PipelineContext(
        params=setup.params,
        stats=setup.stats,
        score_cfg=cfg.score,
        calibration=setup.calibration,
        tau=cfg.detector.tau,
        reset_policy=cfg.detector.reset_policy,
        fisher=setup.fisher,
        cmp_buffer=setup.cmp_buffer,
        ece_cfg=cfg.adapter.ece
    )

    setting: dict = cfg.adapter.pipeline_setting(setup.eta)
    setting["adapt_enabled"] = adapt_enabled

    cursor: SampleStream = SampleStream(stream.cfg, stream.features, stream.labels)

    engine: ExperimentEngine = ExperimentEngine()
    engine.set_parameters(cfg, run)
    engine.add_pipeline(_pipeline_class(cfg.adapter.pipeline), context, setting)
    engine.run_stream(cursor)

    if engine.abort_msg:
        return engine, {"aborted": engine.abort_msg}

    engine.calculate_result()
    statistics: dict = engine.calculate_statistics(change_point=cfg.change_point)
    statistics["causal"] = cursor.is_causal()
    return engine, statistics


def _aborted(run: int, msg: str) -> dict:
    """"""
    return {
        "run": run,
        "alarms": [],
        "delay": None,
        "falsely_alarmed": False,
        "aborted": msg
    }


def run_single(cfg: ExperimentConfig, run: int) -> dict:
    """
    One run of the full loop: both arms of the pipeline on the same stream
    when adaptation is enabled, detection only otherwise.
    """
    try:
        setup: RunSetup = prepare_run(cfg, run)

        if cfg.score_source == ScoreSource.GAUSSIAN:
            return _replay_run(cfg, run, setup, cfg.detector.tau)

        stream: SampleStream = generate(run_stream_config(cfg, run))

        base_engine, base = _run_arm(cfg, run, setup, stream, False)
        if "aborted" in base:
            return _aborted(run, base["aborted"])

        primary_engine, primary = base_engine, base
        if cfg.adapter.enabled:
            primary_engine, primary = _run_arm(cfg, run, setup, stream, True)
            if "aborted" in primary:
                return _aborted(run, primary["aborted"])
    except (DriftGuardError, ArithmeticError) as e:
        return _aborted(run, f"{type(e).__name__}: {e}")

    gamma_at, gamma_sup = growth_rates(cfg, setup, base["post_mean_score"])

    result: dict = {
        "run": run,
        "alarms": primary["alarms"],
        "delay": primary["delay"],
        "falsely_alarmed": primary["falsely_alarmed"],
        "aborted": None,
        "causal": base["causal"] and primary["causal"],
        "gamma_at_lambda": gamma_at,
        "gamma_sup": gamma_sup,
        "acc_pre": base["acc_pre"],
        "acc_post_no_adapt": base["acc_post"],
        "acc_post_adapt": primary["acc_post"],
        "ece_pre": base["ece_pre"],
        "ece_post_no_adapt": base["ece_post"],
        "ece_post_adapt": primary["ece_post"],
        "n_adapt_steps": primary["n_adapt_steps"]
    }

    if cfg.record_trajectories:
        df: DataFrame = primary_engine.result_df
        result["trajectory"] = {
            "score": df["score"].to_numpy(dtype=float),
            "log_m": df["log_m"].to_numpy(dtype=float),
            "alarm": df["alarm"].to_numpy(dtype=bool)
        }
    return result


def _replay_run(cfg: ExperimentConfig, run: int, setup: RunSetup, tau: float) -> dict:
    """Detection-only run on a precomputed score path"""
    scores: np.ndarray = score_path(cfg, setup, run)
    detector: EProcessState = EProcessState(setup.calibration, tau, cfg.detector.reset_policy)
    trajectory: Trajectory = detector.replay(scores)

    change_point: Optional[int] = cfg.change_point
    delay, falsely_alarmed = alarm_summary(trajectory.alarm_times, change_point)

    post: np.ndarray = scores if change_point is None else scores[change_point:]
    post_mean: float = float(post.mean()) if post.size else float("nan")
    gamma_at, gamma_sup = growth_rates(cfg, setup, post_mean) if post.size else (None, None)

    result: dict = {
        "run": run,
        "alarms": trajectory.alarm_times,
        "delay": delay,
        "falsely_alarmed": falsely_alarmed,
        "aborted": None,
        "gamma_at_lambda": gamma_at,
        "gamma_sup": gamma_sup
    }

    if cfg.record_trajectories:
        result["trajectory"] = {"score": scores, "log_m": trajectory.log_m, "alarm": trajectory.alarm}
    return result


def run_chunk(func: Callable[[ExperimentConfig, int], dict], cfg_data: dict, runs: list[int]) -> list[dict]:
    """Worker task: a fixed slice of run indices"""
    cfg: ExperimentConfig = ExperimentConfig.from_dict(cfg_data)
    return [func(cfg, run) for run in runs]


def wrap_run(cfg: ExperimentConfig, func: Callable = run_single) -> Callable:
    """Wrap the per-run process into a picklable task"""
    return partial(run_chunk, func, cfg.to_dict())


def run_parallel(
    cfg: ExperimentConfig,
    func: Callable = run_single,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = False
) -> list[dict]:
    """
    Evaluate func for every run index, folded in run order.

    Chunks are fixed by CHUNK_SIZE, so the worker count only changes
    the wall time.
    """
    runs: list[int] = list(range(cfg.n_runs))
    chunks: list[list[int]] = [runs[i:i + CHUNK_SIZE] for i in range(0, len(runs), CHUNK_SIZE)]
    task: Callable = wrap_run(cfg, func)

    workers: int = min(get_worker_count(max_workers), len(chunks))
    results: list[list[dict]] = []

    if workers <= 1:
        for chunk in tqdm(chunks, disable=disable_tqdm):
            results.append(task(chunk))
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            iterator = executor.map(task, chunks)
            for chunk_result in tqdm(iterator, total=len(chunks), disable=disable_tqdm):
                results.append(chunk_result)

    return [result for chunk_result in results for result in chunk_result]


def _budget(cfg: ExperimentConfig, tau: float) -> float:
    """"""
    if cfg.exact_psi:
        return 1 / tau
    return cfg.detector.alpha_boot + 1 / tau


def _mean(values: list) -> Optional[float]:
    """"""
    clean: list = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(clean)) if clean else None


def aggregate_detection(cfg: ExperimentConfig, results: list[dict], tau: float) -> DetectionReport:
    """Fold per-run results into a DetectionReport"""
    finished: list[dict] = [r for r in results if not r.get("aborted")]

    # Runs with a null segment: any run without a change point or with nu > 0
    if cfg.change_point is None or cfg.change_point > 0:
        empirical_far: float = (
            float(np.mean([r["falsely_alarmed"] for r in finished])) if finished else 0.0
        )
    else:
        empirical_far = 0.0

    delays: list[int] = [r["delay"] for r in finished if r["delay"] is not None]
    mean_delay: Optional[float] = float(np.mean(delays)) if delays else None
    delay_std: Optional[float] = float(np.std(delays, ddof=1)) if len(delays) > 1 else None

    gamma_hat: Optional[float] = _mean([r.get("gamma_at_lambda") for r in finished])
    gamma_sup: Optional[float] = _mean([r.get("gamma_sup") for r in finished])

    predicted_delay: Optional[float] = None
    if cfg.change_point is not None and gamma_hat is not None and gamma_hat > 0:
        predicted_delay = float(np.log(tau) / gamma_hat)

    runs: list[dict] = [
        {
            "run": r["run"],
            "alarms": r["alarms"],
            "delay": r["delay"],
            "falsely_alarmed": r["falsely_alarmed"],
            "aborted": r.get("aborted")
        }
        for r in results
    ]

    return DetectionReport(
        runs=runs,
        empirical_far=empirical_far,
        mean_delay=mean_delay,
        delay_std=delay_std,
        gamma_hat=gamma_hat,
        gamma_sup=gamma_sup,
        predicted_delay=predicted_delay,
        false_alarm_budget=_budget(cfg, tau),
        tau=tau,
        n_runs=len(results),
        n_aborted=len(results) - len(finished)
    )


def aggregate_adaptation(results: list[dict]) -> Optional[AdaptationReport]:
    """Fold the paired-arm metrics of pipeline runs"""
    finished: list[dict] = [r for r in results if not r.get("aborted") and "acc_pre" in r]
    if not finished:
        return None

    def mean(key: str) -> float:
        values: np.ndarray = np.array([r[key] for r in finished], dtype=float)
        values = values[np.isfinite(values)]
        return float(values.mean()) if values.size else float("nan")

    wins: list[bool] = [r["acc_post_adapt"] > r["acc_post_no_adapt"] for r in finished]

    return AdaptationReport(
        acc_pre=mean("acc_pre"),
        acc_post_no_adapt=mean("acc_post_no_adapt"),
        acc_post_adapt=mean("acc_post_adapt"),
        ece_pre=mean("ece_pre"),
        ece_post_no_adapt=mean("ece_post_no_adapt"),
        ece_post_adapt=mean("ece_post_adapt"),
        n_adapt_steps=int(sum(r["n_adapt_steps"] for r in finished)),
        win_rate=float(np.mean(wins)),
        n_runs=len(finished)
    )


def trajectory_table(results: list[dict]) -> TrajectoryTable:
    """Collect recorded trajectories in run order"""
    table: TrajectoryTable = TrajectoryTable()
    for r in results:
        trajectory: Optional[dict] = r.get("trajectory")
        if trajectory is not None:
            table.add_run(r["run"], trajectory["score"], trajectory["log_m"], trajectory["alarm"])
    return table


def run_mfisher(
    cfg: ExperimentConfig,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = True
) -> tuple[DetectionReport, Optional[AdaptationReport]]:
    """Full detection and adaptation loop over cfg.n_runs seeded runs"""
    logger.info(f"Running {cfg.n_runs} runs, score source {cfg.score_source.value}.")

    results: list[dict] = run_parallel(cfg, run_single, max_workers, disable_tqdm)

    detection: DetectionReport = aggregate_detection(cfg, results, cfg.detector.tau)
    adaptation: Optional[AdaptationReport] = aggregate_adaptation(results)

    for r in results:
        if r.get("aborted"):
            logger.warning(f"Run {r['run']} aborted: {r['aborted']}")

    logger.info(f"Runs finished, empirical FAR {detection.empirical_far:.4f}.")
    return detection, adaptation


def run_mfisher_with_trajectories(
    cfg: ExperimentConfig,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = True
) -> tuple[DetectionReport, Optional[AdaptationReport], TrajectoryTable]:
    """run_mfisher that also returns the recorded per-step trajectories"""
    cfg = cfg.replace(record_trajectories=True)
    results: list[dict] = run_parallel(cfg, run_single, max_workers, disable_tqdm)

    return (
        aggregate_detection(cfg, results, cfg.detector.tau),
        aggregate_adaptation(results),
        trajectory_table(results)
    )


def null_far(
    cfg: ExperimentConfig,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = True
) -> DetectionReport:
    """False alarms on streams without any change, adaptation off"""
    stream: StreamConfig = replace(cfg.stream, change_point=None, shift=None, later_changes=())
    adapter = replace(cfg.adapter, enabled=False)

    detection, _ = run_mfisher(cfg.replace(stream=stream, adapter=adapter), max_workers, disable_tqdm)
    return detection


def _delay_run(cfg: ExperimentConfig, run: int) -> dict:
    """One score path replayed at every threshold of the grid"""
    try:
        setup: RunSetup = prepare_run(cfg, run)
        scores: np.ndarray = score_path(cfg, setup, run)

        # Delay and false alarm depend on the first crossing only
        delays: list[Optional[int]] = []
        for tau in cfg.tau_grid:
            first: int = int(first_alarm_times(scores, setup.calibration, tau)[0])
            delay, _ = alarm_summary([first] if first else [], cfg.change_point)
            delays.append(delay)
    except (DriftGuardError, ArithmeticError) as e:
        return _aborted(run, f"{type(e).__name__}: {e}")

    change_point: int = cfg.change_point
    gamma_at, gamma_sup = growth_rates(cfg, setup, float(scores[change_point:].mean()))
    return {
        "run": run,
        "delays": delays,
        "aborted": None,
        "gamma_at_lambda": gamma_at,
        "gamma_sup": gamma_sup
    }


def delay_scaling_sweep(
    cfg: ExperimentConfig,
    tau_grid: Optional[list[float]] = None,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = True
) -> dict:
    """
    Mean detection delay at each threshold with common random numbers
    across thresholds, plus the least-squares slope against ln tau.
    """
    if tau_grid is not None:
        cfg = cfg.replace(tau_grid=tuple(tau_grid))
    if cfg.change_point is None:
        raise UsageError("delay sweep needs a change point")

    results: list[dict] = run_parallel(cfg, _delay_run, max_workers, disable_tqdm)
    finished: list[dict] = [r for r in results if not r.get("aborted")]

    mean_delays: list[Optional[float]] = []
    delay_std: list[Optional[float]] = []
    detected: list[int] = []

    for ix in range(len(cfg.tau_grid)):
        delays: list[int] = [r["delays"][ix] for r in finished if r["delays"][ix] is not None]
        detected.append(len(delays))
        mean_delays.append(float(np.mean(delays)) if delays else None)
        delay_std.append(float(np.std(delays, ddof=1)) if len(delays) > 1 else None)

    points: list[tuple[float, float]] = [
        (float(np.log(tau)), delay)
        for tau, delay in zip(cfg.tau_grid, mean_delays)
        if delay is not None
    ]

    slope: Optional[float] = None
    intercept: Optional[float] = None
    if len(points) >= 2:
        x, y = zip(*points)
        slope, intercept = (float(v) for v in np.polyfit(x, y, 1))

    gamma_hat: Optional[float] = _mean([r.get("gamma_at_lambda") for r in finished])

    return {
        "tau_grid": list(cfg.tau_grid),
        "mean_delays": mean_delays,
        "delay_std": delay_std,
        "detected_runs": detected,
        "slope": slope,
        "intercept": intercept,
        "gamma_hat": gamma_hat,
        "gamma_sup": _mean([r.get("gamma_sup") for r in finished]),
        "inverse_gamma": (1 / gamma_hat) if gamma_hat else None,
        "predicted_delays": [
            float(np.log(tau) / gamma_hat) if gamma_hat and gamma_hat > 0 else None
            for tau in cfg.tau_grid
        ],
        "n_runs": len(results),
        "n_aborted": len(results) - len(finished)
    }


def _audit_run(cfg: ExperimentConfig, run: int) -> dict:
    """Martingale values of one null stream at every checkpoint"""
    length: int = max(cfg.checkpoints)
    null_cfg: ExperimentConfig = cfg.replace(
        stream=replace(cfg.stream, length=max(length, 1), change_point=None, shift=None, later_changes=())
    )

    try:
        setup: RunSetup = prepare_run(null_cfg, run)
        scores: np.ndarray = score_path(null_cfg, setup, run)[:length]
    except (DriftGuardError, ArithmeticError) as e:
        return _aborted(run, f"{type(e).__name__}: {e}")

    # The audit follows M_t itself, without restarts
    detector: EProcessState = EProcessState(setup.calibration, AUDIT_TAU, ResetPolicy.PAPER_LITERAL_NO_RESET)
    log_m: np.ndarray = np.concatenate(([0.0], detector.replay(scores).log_m))

    return {
        "run": run,
        "aborted": None,
        "m": [float(np.exp(log_m[t])) for t in cfg.checkpoints]
    }


def supermartingale_audit(
    cfg: ExperimentConfig,
    max_workers: Optional[int] = None,
    disable_tqdm: bool = True
) -> dict:
    """Estimate E[M_t] at the checkpoints and flag means above 1 + 3 SE"""
    results: list[dict] = run_parallel(cfg, _audit_run, max_workers, disable_tqdm)
    finished: list[dict] = [r for r in results if not r.get("aborted")]
    if not finished:
        raise UsageError("every audit stream aborted")

    values: np.ndarray = np.array([r["m"] for r in finished])
    means: np.ndarray = values.mean(axis=0)

    if values.shape[0] > 1:
        errors: np.ndarray = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    else:
        errors = np.zeros(values.shape[1])

    checkpoints: list[dict] = []
    for t, mean, error in zip(cfg.checkpoints, means, errors):
        flagged: bool = bool(mean > 1 + 3 * error + 1e-12)
        checkpoints.append({
            "t": t,
            "mean": float(mean),
            "standard_error": float(error),
            "status": "flag" if flagged else "pass"
        })

    return {
        "checkpoints": checkpoints,
        "passed": all(c["status"] == "pass" for c in checkpoints),
        "n_streams": int(values.shape[0]),
        "n_aborted": len(results) - len(finished),
        "exact_psi": cfg.exact_psi,
        "psi_offset": cfg.psi_offset,
        "lambda": cfg.detector.lam
    }


def flatten_report(report: dict) -> dict:
    """
    Report keys for assertions.

    Nested blocks are addressed as `block.key`. The bare `key` is kept
    only when no other block or top-level entry uses the same name.
    """
    flat: dict = {k: v for k, v in report.items() if not isinstance(v, dict)}
    owners: defaultdict = defaultdict(list)

    for block, values in report.items():
        if not isinstance(values, dict):
            continue
        for key, value in values.items():
            flat[f"{block}.{key}"] = value
            owners[key].append(block)

    for key, blocks in owners.items():
        if len(blocks) == 1 and key not in report:
            flat[key] = report[blocks[0]][key]

    return flat


def check_assertions(report: dict, assertions: dict) -> list[str]:
    """Violations of the config's acceptance bounds against a flat report"""
    violations: list[str] = []

    for name, bound in assertions.items():
        if name not in report:
            violations.append(f"{name}: not in report")
            continue

        value = report[name]
        if "equals" in bound and value != bound["equals"]:
            violations.append(f"{name}={value!r}, expected {bound['equals']!r}")

        if "min" not in bound and "max" not in bound:
            continue

        if value is None or isinstance(value, (bool, list, dict, str)):
            violations.append(f"{name}={value!r} is not a number")
            continue

        if "min" in bound and value < bound["min"]:
            violations.append(f"{name}={value!r} below {bound['min']!r}")
        if "max" in bound and value > bound["max"]:
            violations.append(f"{name}={value!r} above {bound['max']!r}")

    return violations


def default_adaptation_config(seed: int, n_runs: int = 50) -> ExperimentConfig:
    """
    Desk-scale adaptation suite: a 2 e_1 translation after 100 samples.

    Lambda is picked per run for the rise of the Mahalanobis term alone,
    half of delta' Sigma^-1 delta under the pooled training covariance.
    """
    d: int = 8
    stream: StreamConfig = StreamConfig(
        seed=seed,
        length=600,
        d=d,
        C=4,
        change_point=100,
        shift=ShiftSpec.mean_translate(ADAPT_SHIFT * np.eye(d)[0])
    )
    detector: DetectorSetting = DetectorSetting(lambda_shift=ADAPT_LAMBDA_SHIFT)
    adapter: AdapterSetting = AdapterSetting(eta=ADAPT_ETA)
    return ExperimentConfig(
        stream=stream,
        detector=detector,
        adapter=adapter,
        n_runs=n_runs,
        master_seed=seed
    )
