"""Trial execution, experiment fan-out, sweeps and the estimator comparison."""

import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.events import StepFlag
from shared.logging_config import get_logger, trial_context
from app.checkpoint import save_network
from app.controllers import build_controller
from app.dataset import ReplayDataset
from app.errors import AdaptationDivergenceError, ConvergenceError, PlantDivergenceError
from app.estimators import NetworkEstimator, fit_estimator, load_pretrained_estimator
from app.linalg import RiccatiSolution, solve_care
from app.logs import TrajectoryLog, emit_csv, mean_estimation_error, summarize
from app.metrics import record_estimator_training, record_trial
from app.plant import (
    LtiModel,
    RandomSetpointSchedule,
    Reference,
    ResidualObserver,
    SimState,
    TruthModel,
    reference_at,
    residual_force,
    simulate_interval,
)
from app.schemas import ControllerKind, ExperimentConfig, MetricsReport, PretrainedKind

logger = get_logger(__name__)

SEED_NOTE = "seed varies network initialization, mini-batch sampling and measurement noise; references are identical"
SUMMARY_FILE = "summary.csv"
COMPARISON_FILE = "estimator_comparison.csv"


def synthesize_gain(cfg: ExperimentConfig) -> Tuple[LtiModel, RiccatiSolution]:
    """LQR synthesis on the nominal car model m * pddot = u"""
    nominal = LtiModel.car(cfg.truth.mass)
    q = np.diag(cfg.controller.q_diag)
    r = np.array([[cfg.controller.r]])
    return nominal, solve_care(nominal.a, nominal.b, q, r)


def trial_label(cfg: ExperimentConfig) -> str:
    kind = cfg.controller.kind.value
    if cfg.controller.pretrained is not None:
        kind = f"{kind}_{cfg.controller.pretrained.value}"
    return f"{cfg.name}:{cfg.truth.kind.value}:{kind}"


def trial_header(cfg: ExperimentConfig) -> dict:
    header = cfg.echo()
    header["label"] = trial_label(cfg)
    header["estimates_residual"] = cfg.controller.kind != ControllerKind.LQR
    header["seed_note"] = SEED_NOTE
    header["row_policy"] = "round(duration * control_rate) rows at t = k / control_rate"
    return header


def run_trial(
    cfg: ExperimentConfig,
    seed: int,
    estimator=None,
    reference_fn: Optional[Callable[[float], Reference]] = None,
    dataset: Optional[ReplayDataset] = None,
    instrument: Optional[Callable] = None,
    on_step: Optional[Callable] = None,
) -> TrajectoryLog:
    """
    Simulate one seeded trial and log every control step.

    Args:
        estimator: Offline-trained estimator for friday_with_pretrained
        reference_fn: Overrides the configured reference (t -> Reference)
        dataset: If given, receives every ([p, pdot], u_k, r_obs) pair observed
        instrument: Called once with the controller before the first step
        on_step: Called after every control step as on_step(k, controller, state, ref)

    Returns:
        TrajectoryLog, marked diverged if the plant or the adaptation blew up
        or a numerical routine failed mid-trial
    """
    start = time.perf_counter()
    sim = cfg.simulation
    nominal, sol = synthesize_gain(cfg)
    truth = TruthModel.from_config(cfg.truth, sim.duration)
    controller = build_controller(cfg, sol, nominal, seed, estimator)
    if instrument is not None:
        instrument(controller)
    observer = ResidualObserver(sim.observation, nominal.mass, sim.control_period, sim.noise_std, seed + 2)
    if reference_fn is None:

        def reference_fn(t: float) -> Reference:
            return reference_at(cfg.reference, t, nominal.mass)

    log = TrajectoryLog(header=trial_header(cfg), seed=seed)
    state = SimState(sim.initial_state[0], sim.initial_state[1], 0.0)
    previous: Optional[SimState] = None
    u_prev: Optional[float] = None
    dt = sim.control_period

    with trial_context(seed=seed, controller=cfg.controller.kind.value, truth=cfg.truth.kind.value):
        logger.info("trial_started", steps=sim.n_steps)
        k = 0
        try:
            for k in range(sim.n_steps):
                t = k * dt
                state = SimState(state.p, state.pdot, t)
                ref = reference_fn(t)
                r_obs = None if u_prev is None else observer.observe(truth, state, previous, u_prev)
                outcome = controller.step(state.x, ref, r_obs)
                if dataset is not None and r_obs is not None:
                    dataset.append(state.x, outcome.u, r_obs)
                log.append(
                    t,
                    state.p,
                    state.pdot,
                    ref.x_r[0],
                    ref.x_r[1],
                    outcome.u,
                    residual_force(truth, state, outcome.u),
                    outcome.r_hat,
                    outcome.loss,
                    outcome.flags,
                )
                if on_step is not None:
                    on_step(k, controller, state, ref)
                previous, u_prev = state, outcome.u
                state = simulate_interval(truth, state, outcome.u, sim.sim_substep, sim.substeps)
        except (PlantDivergenceError, AdaptationDivergenceError) as e:
            log.diverged = True
            log.mark_last(StepFlag.DIVERGED)
            logger.warning("trial_diverged", step=k, error=str(e), error_type=type(e).__name__)
        except (ConvergenceError, ArithmeticError, np.linalg.LinAlgError) as e:
            # numerical failure inside one trial; the other seeds still run
            log.diverged = True
            log.mark_last(StepFlag.DIVERGED)
            logger.error("trial_failed", step=k, error=str(e), error_type=type(e).__name__, exc_info=True)

        log.wall_time = time.perf_counter() - start
        logger.info("trial_completed", rows=len(log), diverged=log.diverged, wall_time_s=round(log.wall_time, 3))
    return log


def _run_trial_task(args) -> TrajectoryLog:
    cfg, seed, estimator = args
    return run_trial(cfg, seed, estimator=estimator)


def run_experiment(cfg: ExperimentConfig, parallel: int = 1, estimator=None) -> List[TrajectoryLog]:
    """
    One trial per configured seed; with parallel > 1 trials run in a process pool.
    Results come back in seed order either way.
    """
    if cfg.controller.kind == ControllerKind.FRIDAY_WITH_PRETRAINED and estimator is None:
        estimator, wall = load_pretrained_estimator(cfg, seed=cfg.seeds[0] if cfg.seeds else 0)
        record_estimator_training(cfg.controller.pretrained.value, wall)
    else:
        wall = 0.0

    tasks = [(cfg, seed, estimator) for seed in cfg.seeds]
    logger.info("experiment_started", name=cfg.name, seeds=len(tasks), parallel=parallel)
    if parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            logs = list(pool.map(_run_trial_task, tasks))
    else:
        logs = [_run_trial_task(task) for task in tasks]

    for log in logs:
        log.train_wall_time = wall
        record_trial(log)
    diverged = sum(1 for log in logs if log.diverged)
    logger.info("experiment_completed", name=cfg.name, trials=len(logs), diverged=diverged)
    return logs


def log_filename(name: str, seed: int) -> str:
    return f"{name}_seed{seed}.csv"


def write_logs(logs: Sequence[TrajectoryLog], out_dir: str, name: str) -> List[Path]:
    return [emit_csv(log, str(Path(out_dir) / log_filename(name, log.seed))) for log in logs]


def summary_rows(logs: Sequence[TrajectoryLog], warmup: float) -> List[dict]:
    """One MetricsReport row per non-empty log"""
    rows = []
    for log in logs:
        if not log.rows:
            continue
        row = summarize(log, warmup).model_dump()
        row["seed"] = log.seed
        rows.append(row)
    return rows


def write_summary(rows: List[dict], out_dir: str, filename: str = SUMMARY_FILE) -> Path:
    target = Path(out_dir) / filename
    target.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(target, index=False, float_format="%.12g")
    return target


def aggregate(label: str, logs: Sequence[TrajectoryLog], warmup: float = 0.0, train_wall_time: float = 0.0) -> MetricsReport:
    """Mean of the per-trial metrics over the non-empty logs of one scenario"""
    reports = [summarize(log, warmup) for log in logs if log.rows]
    if not reports:
        raise ValueError(f"{label}: no logged steps to summarize")
    estimation = [r.mean_estimation_error for r in reports if r.mean_estimation_error is not None]
    return MetricsReport(
        label=label,
        mean_tracking_error=float(np.mean([r.mean_tracking_error for r in reports])),
        mean_estimation_error=float(np.mean(estimation)) if estimation else None,
        final_offset=float(np.mean([r.final_offset for r in reports])),
        train_wall_time=train_wall_time,
        diverged=any(log.diverged for log in logs),
    )


def run_and_write(cfg: ExperimentConfig, out_dir: str, parallel: int = 1) -> Tuple[List[TrajectoryLog], List[dict]]:
    """The `run` command: trials, per-seed CSV logs and a summary table"""
    logs = run_experiment(cfg, parallel=parallel)
    write_logs(logs, out_dir, cfg.name)
    rows = summary_rows(logs, cfg.warmup)
    for row in rows:
        row["label"] = trial_label(cfg)
    write_summary(rows, out_dir)
    return logs, rows


def scenario_config(cfg: ExperimentConfig, truth: str, controller: str) -> ExperimentConfig:
    return cfg.override(
        {
            "name": f"{cfg.name}_{truth}_{controller}",
            "truth": {"kind": truth},
            "controller": {"kind": controller, "pretrained": None},
        }
    )


def sweep(cfg: ExperimentConfig, out_dir: str, parallel: int = 1) -> List[dict]:
    """Every configured truth model x controller pair; per-trial CSV plus summary.csv"""
    rows = []
    for truth in cfg.sweep.truths:
        for controller in cfg.sweep.controllers:
            scenario = scenario_config(cfg, truth.value, controller.value)
            logs = run_experiment(scenario, parallel=parallel)
            write_logs(logs, out_dir, scenario.name)
            for row in summary_rows(logs, cfg.warmup):
                row.update(label=trial_label(scenario), truth=truth.value, controller=controller.value)
                rows.append(row)
    write_summary(rows, out_dir)
    return rows


def collect_offline_data(cfg: ExperimentConfig, seed: int) -> ReplayDataset:
    """LQR driven to random setpoints over the scenario's truth model"""
    section = cfg.estimator_comparison
    collection = cfg.override(
        {
            "controller": {"kind": ControllerKind.LQR.value, "pretrained": None},
            "simulation": {"duration": section.collection_duration},
        }
    )
    schedule = RandomSetpointSchedule(seed, period=section.setpoint_period, span=section.setpoint_range)
    dataset = ReplayDataset()
    log = run_trial(collection, seed, reference_fn=schedule.reference_at, dataset=dataset)
    if log.diverged:
        logger.warning("offline_collection_diverged", seed=seed, samples=len(dataset))
    logger.info("offline_data_collected", seed=seed, samples=len(dataset))
    return dataset


def compare_estimators(cfg: ExperimentConfig, out_dir: str, parallel: int = 1) -> List[MetricsReport]:
    """
    Offline SN-DNN, plain DNN and GP estimators, each frozen inside the controller.

    Returns one MetricsReport per estimator with its training wall time and the
    mean estimation error over all seeds; diverged sub-runs flag the row.
    """
    section = cfg.estimator_comparison
    dataset = ReplayDataset()
    for seed in section.collection_seeds:
        collected = collect_offline_data(cfg, seed)
        xs, ys = collected.as_arrays()
        for x, y in zip(xs, ys):
            dataset.append(x[:2], x[2], y)
    dataset.dump_csv(str(Path(out_dir) / "offline_data.csv"))

    reports = []
    for kind in (PretrainedKind.SN_DNN, PretrainedKind.DNN, PretrainedKind.GP):
        estimator, wall = fit_estimator(cfg, kind, dataset, seed=cfg.seeds[0] if cfg.seeds else 0)
        record_estimator_training(kind.value, wall)
        if isinstance(estimator, NetworkEstimator):
            save_network(estimator.net, str(Path(out_dir) / f"{kind.value}.rclnet"))

        scenario = cfg.override(
            {"name": f"{cfg.name}_{kind.value}", "controller": {"kind": "friday_with_pretrained", "pretrained": kind.value}}
        )
        logs = run_experiment(scenario, parallel=parallel, estimator=estimator)
        write_logs(logs, out_dir, scenario.name)
        report = aggregate(kind.value, logs, cfg.warmup, train_wall_time=wall)
        logger.info(
            "estimator_compared",
            model=kind.value,
            samples=len(dataset),
            train_wall_time_s=round(wall, 4),
            mean_estimation_error=report.mean_estimation_error,
            diverged=report.diverged,
        )
        reports.append(report)

    write_summary([r.model_dump() for r in reports], out_dir, COMPARISON_FILE)
    return reports


def online_estimation_error(logs: Sequence[TrajectoryLog]) -> float:
    """Mean estimation error of real-time runs, for comparison with the frozen estimators"""
    return float(np.mean([mean_estimation_error(log) for log in logs if log.rows]))
