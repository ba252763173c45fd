"""Real-time-growing training store of (p, pdot, u) -> observed residual force."""

from collections import deque
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from shared.logging_config import get_logger
from app.errors import DimensionError, NonFiniteValueError

logger = get_logger(__name__)

# Column names and units of the CSV dump: p [m], pdot [m/s], u [N], r_obs [N]
CSV_COLUMNS = ["p", "pdot", "u", "r_obs"]


class ReplayDataset:
    """
    Growing store of network inputs [p, pdot, u] and targets [r_obs].

    With a capacity the store behaves as a ring: the oldest pair is evicted
    once the capacity is exceeded. Unbounded by default.
    """

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 or None")
        self.capacity = capacity
        self.inputs: deque = deque(maxlen=capacity)
        self.targets: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.inputs)

    def append(self, x, u, r_obs) -> None:
        """
        Add one training pair.

        Args:
            x: State [p, pdot]
            u: Control input (scalar or length-1 vector) [N]
            r_obs: Observed residual force (scalar or length-1 vector) [N]

        Raises:
            NonFiniteValueError: If any value is NaN or infinite
        """
        features = np.concatenate([np.ravel(np.asarray(x, dtype=np.float64)), np.ravel(np.asarray(u, dtype=np.float64))])
        target = np.ravel(np.asarray(r_obs, dtype=np.float64))
        if self.inputs and (features.shape != self.inputs[0].shape or target.shape != self.targets[0].shape):
            raise DimensionError("sample shape differs from stored samples")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(target))):
            raise NonFiniteValueError("refusing to store a non-finite training pair")
        self.inputs.append(features)
        self.targets.append(target)

    def sample_minibatch(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Uniform mini-batch: without replacement when n <= len, with replacement otherwise.

        Returns:
            (inputs n x 3, targets n x 1)
        """
        size = len(self)
        if size == 0:
            raise ValueError("cannot sample from an empty dataset")
        if n > size:
            idx = rng.integers(0, size, size=n)
        else:
            idx = rng.choice(size, size=n, replace=False)
        xs = np.array([self.inputs[i] for i in idx])
        ys = np.array([self.targets[i] for i in idx])
        return xs, ys

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.inputs:
            return np.empty((0, 3)), np.empty((0, 1))
        return np.array(self.inputs), np.array(self.targets)

    def dump_csv(self, path: str) -> None:
        """Write columns p, pdot, u, r_obs with a header row"""
        xs, ys = self.as_arrays()
        frame = pd.DataFrame(np.hstack([xs, ys]) if len(xs) else np.empty((0, 4)), columns=CSV_COLUMNS)
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(target, index=False, float_format="%.17g")
        logger.info("dataset_dumped", path=str(target), samples=len(frame))

    @classmethod
    def load_csv(cls, path: str, capacity: Optional[int] = None) -> "ReplayDataset":
        frame = pd.read_csv(Path(path), float_precision="round_trip")
        missing = [c for c in CSV_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        ds = cls(capacity=capacity)
        for p, pdot, u, r_obs in frame[CSV_COLUMNS].itertuples(index=False, name=None):
            ds.append([p, pdot], u, r_obs)
        return ds
