from collections import defaultdict
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .base import ValidationError


TRAJECTORY_COLUMNS: list[str] = ["run", "t", "score", "log_m", "alarm"]


class FeatureWindow:
    """Sliding window over the most recent stream features"""

    def __init__(self, d: int, size: int = 64) -> None:
        """"""
        if size < 1:
            raise ValidationError(f"window size must be >= 1, got {size}")

        self.d: int = d
        self.size: int = size
        self.periods: int = size * 50

        self.data: Optional[np.ndarray] = None
        self.ix: int = 0
        self.inited: bool = False

    def update_feature(self, feature: np.ndarray) -> bool:
        """Append one feature, return whether the window is full"""
        # Check buffer state
        if self.data is None:
            self._init_data()
        elif self.ix == self.periods:
            self._reset_data()

        self.data[self.ix] = feature
        self.ix += 1

        if not self.inited and self.ix >= self.size:
            self.inited = True

        return self.inited

    def _init_data(self) -> None:
        """"""
        self.data = np.zeros((self.periods, self.d))
        self.ix = 0

    def _reset_data(self) -> None:
        """Move the last window to the front of the buffer"""
        self.data[:self.size] = self.data[-self.size:]
        self.ix = self.size

    def get_array(self) -> np.ndarray:
        """Current window, oldest first"""
        if self.data is None:
            return np.empty((0, self.d))

        start: int = max(self.ix - self.size, 0)
        return self.data[start:self.ix].copy()

    def __len__(self) -> int:
        """"""
        return min(self.ix, self.size)


class TrajectoryTable:
    """Per-step detector records of many runs"""

    def __init__(self) -> None:
        """"""
        self.results: dict[str, list] = defaultdict(list)

    def add_run(
        self,
        run: int,
        scores: np.ndarray,
        log_m: np.ndarray,
        alarm: np.ndarray
    ) -> None:
        """Append the trajectory of one run"""
        count: int = len(scores)
        if not len(log_m) == len(alarm) == count:
            raise ValidationError("trajectory columns differ in length")

        self.results["run"].extend([int(run)] * count)
        self.results["t"].extend(range(1, count + 1))
        self.results["score"].extend(np.asarray(scores, dtype=float).tolist())
        self.results["log_m"].extend(np.asarray(log_m, dtype=float).tolist())
        self.results["alarm"].extend(np.asarray(alarm, dtype=int).tolist())

    def get_df(self) -> pd.DataFrame:
        """"""
        if not self.results:
            return pd.DataFrame(columns=TRAJECTORY_COLUMNS)
        return pd.DataFrame.from_dict(self.results)[TRAJECTORY_COLUMNS]

    def save_csv(self, filepath: str | Path) -> Path:
        """Dump `run,t,score,log_m,alarm` rows"""
        path: Path = Path(filepath)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.get_df().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path
