"""Per-step trajectory logs, their CSV form and the headline metrics."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional

import numpy as np
import pandas as pd
import yaml

from shared.events import TrialStatus, join_flags, split_flags
from shared.logging_config import get_logger
from app.errors import EstimatorUnavailableError
from app.schemas import MetricsReport

logger = get_logger(__name__)

LOG_COLUMNS = ["t", "p", "pdot", "pr", "prdot", "u", "r_true", "r_hat", "loss", "flags"]
SIGNIFICANT_DIGITS = 12
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"
HEADER_PREFIX = "# "


def round_significant(value: float) -> float:
    """Round to the precision the CSV stores so disk and memory agree exactly"""
    return float(FLOAT_FORMAT % value)


class LogRow(NamedTuple):
    t: float
    p: float
    pdot: float
    pr: float
    prdot: float
    u: float
    r_true: float
    r_hat: float
    loss: float
    flags: str


@dataclass
class TrajectoryLog:
    """
    One seeded trial: a header echoing the effective configuration plus one
    row per control step, strictly increasing in t.

    wall_time and train_wall_time stay in memory only; they are not written
    to the CSV so that identical seeds give identical files.
    """

    header: dict
    seed: int
    rows: List[LogRow] = field(default_factory=list)
    diverged: bool = False
    wall_time: float = 0.0
    train_wall_time: float = 0.0

    @property
    def label(self) -> str:
        return str(self.header.get("label", ""))

    @property
    def estimates_residual(self) -> bool:
        return bool(self.header.get("estimates_residual", False))

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, t, p, pdot, pr, prdot, u, r_true, r_hat, loss, flags: Iterable = ()) -> None:
        values = [round_significant(v) for v in (t, p, pdot, pr, prdot, u, r_true, r_hat, loss)]
        if self.rows and values[0] <= self.rows[-1].t:
            raise ValueError(f"log rows must be strictly increasing in t (got {values[0]} after {self.rows[-1].t})")
        self.rows.append(LogRow(*values, join_flags(flags)))

    def mark_last(self, flag) -> None:
        """Add a flag to the most recent row"""
        if not self.rows:
            return
        last = self.rows[-1]
        existing = split_flags(last.flags)
        self.rows[-1] = last._replace(flags=join_flags(existing + [flag]))

    def column(self, name: str) -> np.ndarray:
        index = LOG_COLUMNS.index(name)
        return np.array([row[index] for row in self.rows], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def tracking_errors(self) -> np.ndarray:
        """||z|| per row with z = x - x_r"""
        return np.hypot(self.column("p") - self.column("pr"), self.column("pdot") - self.column("prdot"))


def emit_csv(log: TrajectoryLog, path: str) -> Path:
    """
    Write '#'-prefixed YAML header lines (config echo, seed, status) followed
    by a header row and one row per control step.

    Raises:
        OSError: If the file cannot be written; the message names the path
    """
    target = Path(path)
    header = dict(log.header)
    header["seed"] = log.seed
    header["status"] = (TrialStatus.DIVERGED if log.diverged else TrialStatus.COMPLETED).value
    header_text = yaml.safe_dump(header, sort_keys=True, default_flow_style=False)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="") as f:
            for line in header_text.splitlines():
                f.write(f"{HEADER_PREFIX}{line}\n")
            log.to_frame().to_csv(f, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OSError(f"cannot write trajectory log {target}: {e}") from e
    return target


def read_csv(path: str) -> TrajectoryLog:
    """Restore a TrajectoryLog (header included) from a file written by emit_csv"""
    source = Path(path)
    header_lines = []
    with open(source) as f:
        for line in f:
            if not line.startswith("#"):
                break
            header_lines.append(line[len(HEADER_PREFIX) :] if line.startswith(HEADER_PREFIX) else line[1:])
    header = yaml.safe_load("".join(header_lines)) or {}

    frame = pd.read_csv(source, skiprows=len(header_lines), dtype={"flags": str}, float_precision="round_trip")
    missing = [c for c in LOG_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{source}: missing columns {missing}")
    frame["flags"] = frame["flags"].fillna("")
    seed = int(header.pop("seed", 0))
    status = TrialStatus(header.pop("status", TrialStatus.COMPLETED.value))
    log = TrajectoryLog(header=header, seed=seed, diverged=status == TrialStatus.DIVERGED)
    for values in frame[LOG_COLUMNS].itertuples(index=False, name=None):
        log.rows.append(LogRow(*[float(v) for v in values[:-1]], str(values[-1])))
    return log


def _require_rows(log: TrajectoryLog) -> None:
    if not log.rows:
        raise ValueError("metric needs a non-empty log")


def mean_tracking_error(log: TrajectoryLog, warmup: float = 0.0) -> float:
    """Mean |p - p_r| [m] over rows with t >= warmup"""
    _require_rows(log)
    t = log.column("t")
    mask = t >= warmup
    if not np.any(mask):
        raise ValueError(f"no rows at or after warmup={warmup}s")
    return float(np.mean(np.abs(log.column("p")[mask] - log.column("pr")[mask])))


def mean_estimation_error(log: TrajectoryLog) -> float:
    """Mean |r_true - r_hat| [N]"""
    if not log.estimates_residual:
        raise EstimatorUnavailableError(f"controller '{log.header.get('controller', {}).get('kind')}' has no estimator")
    _require_rows(log)
    return float(np.mean(np.abs(log.column("r_true") - log.column("r_hat"))))


def final_offset(log: TrajectoryLog) -> float:
    """|p - p_r| [m] at the last logged step"""
    _require_rows(log)
    last = log.rows[-1]
    return abs(last.p - last.pr)


def _non_negative(value: float) -> float:
    # NaN from an overflowed run is reported as an unbounded error
    return math.inf if math.isnan(value) else value


def summarize(log: TrajectoryLog, warmup: float = 0.0, label: Optional[str] = None) -> MetricsReport:
    estimation = _non_negative(mean_estimation_error(log)) if log.estimates_residual else None
    return MetricsReport(
        label=label if label is not None else log.label,
        mean_tracking_error=_non_negative(mean_tracking_error(log, warmup)),
        mean_estimation_error=estimation,
        final_offset=_non_negative(final_offset(log)),
        train_wall_time=log.train_wall_time,
        diverged=log.diverged,
    )
