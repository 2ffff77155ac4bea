"""
Unit tests for the command-line entry point
"""

import os
import sys
from pathlib import Path
from unittest.mock import patch

import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.cli import build_parser, main, resolve_config
from app.config import COMMANDS
from app.errors import PlanningError, RunAbortedError


class TestParser:
    """Test cases for argument parsing"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.parser = build_parser()

    def test_every_command_is_registered(self):
        """Test each experiment command parses with defaults"""
        for command in COMMANDS:
            args = self.parser.parse_args([command])
            assert args.command == command
            assert args.config is None and args.seed is None
            assert args.log_level == "INFO"

    def test_repeated_seeds(self):
        """Test --seed collects every occurrence in order"""
        args = self.parser.parse_args(["train-sac", "--seed", "3", "--seed", "1", "--out", "runs/sac"])
        assert args.seed == [3, 1]
        assert args.out == "runs/sac"

    def test_policy_only_for_demolayer(self):
        """Test --policy is accepted by run-demolayer and nothing else"""
        args = self.parser.parse_args(["run-demolayer", "--policy", "policy.json"])
        assert args.policy == "policy.json"
        with pytest.raises(SystemExit):
            self.parser.parse_args(["train-ars", "--policy", "policy.json"])

    def test_missing_command(self):
        """Test a missing sub-command is a usage error"""
        with pytest.raises(SystemExit):
            self.parser.parse_args([])

    def test_command_overrides_file(self, tmp_path):
        """Test the sub-command replaces the file's experiment command"""
        path = tmp_path / "run.yaml"
        path.write_text("experiment:\n  command: train-demorl\n  env: cartpole_balance\n")
        args = self.parser.parse_args(["train-ars", "--config", str(path)])
        config = resolve_config(args)
        assert config.experiment.command == "train-ars"
        assert config.experiment.env == "cartpole_balance"


class TestMain:
    """Test cases for the exit code and campaign dispatch"""

    def test_success(self, tmp_path):
        """Test a finished campaign exits 0 and receives the parsed options"""
        written = {"config": tmp_path / "config.snapshot"}
        with patch("app.cli.run_campaign", return_value=written) as run:
            code = main(["regret-check", "--seed", "3", "--out", str(tmp_path)])
        assert code == 0
        config = run.call_args.args[0]
        assert config.experiment.command == "regret-check"
        assert run.call_args.kwargs["seeds"] == [3]
        assert Path(run.call_args.kwargs["out_dir"]) == tmp_path
        assert run.call_args.kwargs["policy_path"] is None

    def test_aborted_run(self):
        """Test an aborted run exits 1"""
        error = RunAbortedError("demorl seed 0 aborted at epoch 2: every rollout cost is infinite", None)
        with patch("app.cli.run_campaign", side_effect=error):
            assert main(["train-demorl"]) == 1

    def test_planning_error(self):
        """Test any toolkit error exits 1"""
        with patch("app.cli.run_campaign", side_effect=PlanningError("no finite rollout")):
            assert main(["ablate-elite"]) == 1

    def test_bad_config_file(self, tmp_path):
        """Test an invalid config file exits 1 before any run starts"""
        path = tmp_path / "bad.yaml"
        path.write_text("mpc:\n  objective: random\n")
        with patch("app.cli.run_campaign") as run:
            assert main(["train-demorl", "--config", str(path)]) == 1
        run.assert_not_called()

    def test_missing_config_file(self, tmp_path):
        """Test a missing config file exits 1"""
        assert main(["train-sac", "--config", str(tmp_path / "absent.yaml")]) == 1
