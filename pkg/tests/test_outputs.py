"""
Unit tests for run logs, CSV files, plots and the output directory layout
"""

import os
import sys
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.config import ExperimentConfig, read_snapshot
from app.errors import ConfigError
from app.outputs import (
    REGRET_COLUMNS,
    RUN_COLUMNS,
    RunLog,
    RunLogRow,
    curve_summary,
    emit_outputs,
    git_describe,
    plot_learning_curves,
    read_run_csv,
    version_stamp,
    write_run_csv,
)
from app.regret import RegretRecord


def make_log(label: str, seed: int, returns) -> RunLog:
    log = RunLog(label, seed)
    for epoch, value in enumerate(returns, start=1):
        log.append(RunLogRow(epoch, 100 * epoch, float(value), 1.0, 100 * epoch, 10 * epoch, 0.5))
    return log


class TestRunLog:
    """Test cases for the per-run log"""

    def test_env_steps_must_not_decrease(self):
        """Test appending a row with fewer env steps is rejected"""
        log = make_log("demorl", 0, [-900.0])
        with pytest.raises(ConfigError):
            log.append(RunLogRow(2, 50, -800.0, 0.0))

    def test_frame_columns(self):
        """Test the frame has the run CSV columns in order"""
        frame = make_log("sac", 1, [-1000.0, -900.0]).to_frame()
        assert list(frame.columns) == RUN_COLUMNS
        assert list(frame["seed"]) == [1, 1]

    def test_csv_round_trip(self, tmp_path):
        """Test run CSV files read back into the same logs and order"""
        logs = [make_log("demorl", 0, [-900.0, -500.0]), make_log("sac", 0, [-1100.0, -1000.0]),
                make_log("demorl", 1, [-950.0, -400.0])]
        path = write_run_csv(logs, tmp_path / "run.csv")
        loaded = read_run_csv(path)
        assert [(log.label, log.seed) for log in loaded] == [("demorl", 0), ("sac", 0), ("demorl", 1)]
        assert loaded == logs

    def test_csv_missing_columns(self, tmp_path):
        """Test a CSV without the run columns is rejected"""
        path = tmp_path / "bad.csv"
        pd.DataFrame({"epoch": [1]}).to_csv(path, index=False)
        with pytest.raises(ConfigError):
            read_run_csv(path)


class TestCurves:
    """Test cases for learning-curve summaries and plots"""

    def test_summary_across_seeds(self):
        """Test per-epoch mean and population std across three seeds"""
        logs = [make_log("demorl", s, r) for s, r in enumerate([[-900, -300], [-800, -200], [-700, -400]])]
        summary = curve_summary(logs)
        assert list(summary["epoch"]) == [1, 2]
        np.testing.assert_allclose(summary["mean"], [-800.0, -300.0])
        np.testing.assert_allclose(summary["std"], [np.std([-900, -800, -700]), np.std([-300, -200, -400])])
        assert list(summary["seeds"]) == [3, 3]

    def test_single_seed_has_no_band(self, tmp_path):
        """Test one seed plots a single line without a spread band"""
        fig = plot_learning_curves([make_log("sac", 0, [-1000, -900, -800])], tmp_path / "curve.svg")
        ax = fig.axes[0]
        assert len(ax.lines) == 1
        assert len(ax.collections) == 0
        assert (tmp_path / "curve.svg").read_text().lstrip().startswith("<?xml")

    def test_band_per_label(self, tmp_path):
        """Test several seeds add one band per label and a threshold line"""
        logs = [make_log("demorl", s, [-900 + s, -300 - s]) for s in range(3)]
        logs += [make_log("sac", s, [-1000 + s, -800 - s]) for s in range(3)]
        fig = plot_learning_curves(logs, tmp_path / "curve.svg", title="pendulum", threshold=-400.0)
        ax = fig.axes[0]
        assert len(ax.collections) == 2
        assert len(ax.lines) == 3
        assert ax.get_title() == "pendulum"


class TestEmitOutputs:
    """Test cases for the output directory"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.config = ExperimentConfig()

    def test_training_outputs(self, tmp_path):
        """Test a training run writes the snapshot, run CSV and curve"""
        written = emit_outputs(tmp_path / "out", self.config, [make_log("demorl", 0, [-900, -500])])
        assert set(written) == {"config", "run", "curve"}
        for path in written.values():
            assert path.exists()
        config, stamp = read_snapshot(written["config"])
        assert config == self.config
        assert stamp["package"] == "demo-mpc"
        assert "git" in stamp

    def test_regret_outputs(self, tmp_path):
        """Test a regret run writes the regret CSV and no run CSV"""
        records = [RegretRecord(t, 1.0, 0.5, 0.0, 0.5, 0.5 * t, 10.0 * t) for t in range(1, 4)]
        written = emit_outputs(tmp_path, self.config, regret_records={0: records},
                               tables={"regret_summary": pd.DataFrame({"seed": [0]})})
        assert "run" not in written and "curve" not in written
        frame = pd.read_csv(written["regret"])
        assert list(frame.columns) == REGRET_COLUMNS
        assert list(frame["seed"]) == [0, 0, 0]
        np.testing.assert_allclose(frame["regret"], [0.5, 1.0, 1.5])
        assert (tmp_path / "regret_summary.csv").exists()

    def test_empty_training_run(self, tmp_path):
        """Test a run with no epochs still writes a header-only run CSV and no curve"""
        written = emit_outputs(tmp_path, self.config, [RunLog("demorl", 0)])
        assert "curve" not in written
        assert list(pd.read_csv(written["run"]).columns) == RUN_COLUMNS


class TestVersionStamp:
    """Test cases for the version stamp"""

    def test_git_failure_is_unknown(self):
        """Test a missing git binary yields 'unknown'"""
        with patch("app.outputs.subprocess.run", side_effect=OSError("git not found")):
            assert git_describe() == "unknown"

    def test_stamp_fields(self):
        """Test the stamp names the package, its version and the git state"""
        with patch("app.outputs.git_describe", return_value="abc1234"):
            stamp = version_stamp()
        assert stamp["package"] == "demo-mpc"
        assert stamp["git"] == "abc1234"
        assert stamp["package_version"]
