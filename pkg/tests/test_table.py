import numpy as np
import pandas as pd
import pytest

from driftguard.base import ValidationError
from driftguard.table import TRAJECTORY_COLUMNS, FeatureWindow, TrajectoryTable


class TestFeatureWindow:

    def test_fills_up(self):
        window = FeatureWindow(2, size=3)
        assert [window.update_feature(np.full(2, i)) for i in range(4)] == [False, False, True, True]
        assert len(window) == 3

    def test_keeps_latest_items(self):
        window = FeatureWindow(1, size=4)
        for i in range(500):
            window.update_feature(np.array([float(i)]))

        np.testing.assert_array_equal(window.get_array()[:, 0], [496.0, 497.0, 498.0, 499.0])

    def test_partial_window(self):
        window = FeatureWindow(3, size=10)
        assert window.get_array().shape == (0, 3)

        window.update_feature(np.ones(3))
        assert window.get_array().shape == (1, 3)

    def test_rejects_empty_window(self):
        with pytest.raises(ValidationError):
            FeatureWindow(2, size=0)


class TestTrajectoryTable:

    def test_rows(self):
        table = TrajectoryTable()
        table.add_run(0, [0.1, 0.2], [0.0, 0.5], [False, True])
        table.add_run(1, [0.3], [-0.1], [False])

        df = table.get_df()
        assert list(df.columns) == TRAJECTORY_COLUMNS
        assert df["run"].tolist() == [0, 0, 1]
        assert df["t"].tolist() == [1, 2, 1]
        assert df["alarm"].tolist() == [0, 1, 0]

    def test_empty_table(self):
        df = TrajectoryTable().get_df()
        assert df.empty
        assert list(df.columns) == TRAJECTORY_COLUMNS

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            TrajectoryTable().add_run(0, [0.1, 0.2], [0.0], [False, False])

    def test_csv(self, tmp_path):
        table = TrajectoryTable()
        table.add_run(3, [1.5], [0.25], [True])
        path = table.save_csv(tmp_path / "out" / "trajectories.csv")

        df = pd.read_csv(path)
        assert df.to_dict("records") == [{"run": 3, "t": 1, "score": 1.5, "log_m": 0.25, "alarm": 1}]
