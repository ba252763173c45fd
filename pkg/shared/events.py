"""
Shared step/trial event vocabulary used by controllers, logs and metrics
"""

from enum import Enum


class StepFlag(str, Enum):
    """Per-control-step anomaly flags written to the trajectory log"""

    FALLBACK = "fallback"  # non-finite network output, pure LQR used
    NONFINITE_LOSS = "nonfinite_loss"
    REJECTED_SAMPLE = "rejected_sample"  # observation not appended to the dataset
    DIVERGED = "diverged"  # plant integration blew up after this step


class TrialStatus(str, Enum):
    """Outcome of one seeded trial"""

    COMPLETED = "completed"
    DIVERGED = "diverged"


class HookEvent(str, Enum):
    """Instrumentation points inside one FRIDAY iteration, in execution order"""

    NORMALIZED = "normalized"
    PREDICTED = "predicted"
    APPENDED = "appended"
    TRAINED = "trained"


FLAG_SEPARATOR = "|"


def join_flags(flags) -> str:
    """Serialize a collection of StepFlag into the CSV flags column"""
    return FLAG_SEPARATOR.join(sorted(StepFlag(f).value for f in flags))


def split_flags(text: str) -> list[StepFlag]:
    """Parse the CSV flags column back into StepFlag values"""
    if not text:
        return []
    return [StepFlag(part) for part in str(text).split(FLAG_SEPARATOR) if part]
