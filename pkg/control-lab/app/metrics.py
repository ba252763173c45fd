from __future__ import annotations

from typing import Iterable

from prometheus_client import Counter, Histogram

from shared.events import StepFlag, TrialStatus

TRIALS_TOTAL = Counter(
    "lab_trials_total",
    "Finished trials grouped by controller, truth model and outcome",
    ["controller", "truth", "status"],
)

TRIAL_WALL_TIME = Histogram(
    "lab_trial_wall_time_seconds",
    "Wall time of one seeded trial",
    ["controller"],
    buckets=[0.5, 1, 2, 5, 10, 30, 60, 120],
)

CONTROL_STEPS_TOTAL = Counter(
    "lab_control_steps_total",
    "Control steps executed across all trials",
    ["controller"],
)

FALLBACK_STEPS_TOTAL = Counter(
    "lab_fallback_steps_total",
    "Control steps where the network output was non-finite and pure LQR was applied",
    ["controller"],
)

ESTIMATOR_TRAIN_SECONDS = Histogram(
    "lab_estimator_train_seconds",
    "Offline estimator training wall time",
    ["model"],
    buckets=[0.1, 0.5, 1, 2, 5, 10, 30, 60, 120, 300],
)

_registered = False


def record_trial(log) -> None:
    """Record one finished TrajectoryLog; called in the parent process"""
    controller = log.header.get("controller", {}).get("kind", "")
    truth = log.header.get("truth", {}).get("kind", "")
    status = TrialStatus.DIVERGED if log.diverged else TrialStatus.COMPLETED
    TRIALS_TOTAL.labels(controller=controller, truth=truth, status=status.value).inc()
    TRIAL_WALL_TIME.labels(controller=controller).observe(log.wall_time)
    CONTROL_STEPS_TOTAL.labels(controller=controller).inc(len(log.rows))
    fallbacks = sum(1 for row in log.rows if StepFlag.FALLBACK.value in row.flags)
    if fallbacks:
        FALLBACK_STEPS_TOTAL.labels(controller=controller).inc(fallbacks)


def record_estimator_training(model: str, seconds: float) -> None:
    ESTIMATOR_TRAIN_SECONDS.labels(model=model).observe(seconds)


def register_lab_metrics(
    controllers: Iterable[str] | None = None,
    truths: Iterable[str] | None = None,
    models: Iterable[str] | None = None,
) -> None:
    global _registered
    if _registered:
        return
    _registered = True

    controller_values = tuple(controllers or ("friday", "friday_no_sn", "lqr", "adaptive", "friday_with_pretrained"))
    truth_values = tuple(truths or ("param", "multi", "enviro", "nominal"))
    model_values = tuple(models or ("gp", "dnn", "sn_dnn"))

    for controller in controller_values:
        for truth in truth_values:
            for status in TrialStatus:
                TRIALS_TOTAL.labels(controller=controller, truth=truth, status=status.value)
        TRIAL_WALL_TIME.labels(controller=controller)
        CONTROL_STEPS_TOTAL.labels(controller=controller)
        FALLBACK_STEPS_TOTAL.labels(controller=controller)

    for model in model_values:
        ESTIMATOR_TRAIN_SECONDS.labels(model=model)
