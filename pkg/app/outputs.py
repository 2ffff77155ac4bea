"""
Run logs and result files: per-run CSV, config snapshot with a version
stamp, learning-curve SVG (mean +/- std across seeds) and regret CSV.
"""

import logging
import subprocess
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .config import ExperimentConfig, dump_config  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .regret import RegretRecord  # noqa: E402

logger = logging.getLogger(__name__)

PACKAGE_NAME = "demo-mpc"
RUN_COLUMNS = ["label", "seed", "epoch", "env_steps", "mean_eval_return", "std_eval_return",
               "env_buffer", "mpc_buffer", "wall_time"]
REGRET_COLUMNS = ["seed", "t", "J_tilde", "J_star", "drift", "regret", "bound"]


@dataclass
class RunLogRow:
    epoch: int
    env_steps: int
    mean_eval_return: float
    std_eval_return: float
    env_buffer: int = 0
    mpc_buffer: int = 0
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class RunLog:
    label: str
    seed: int
    rows: List[RunLogRow] = field(default_factory=list)

    def append(self, row: RunLogRow) -> None:
        if self.rows and row.env_steps < self.rows[-1].env_steps:
            raise ConfigError(f"env_steps went backwards at epoch {row.epoch}")
        self.rows.append(row)

    def returns(self) -> np.ndarray:
        return np.array([r.mean_eval_return for r in self.rows])

    def to_frame(self) -> pd.DataFrame:
        records = [{"label": self.label, "seed": self.seed, **asdict(r)} for r in self.rows]
        return pd.DataFrame(records, columns=RUN_COLUMNS)


def logs_to_frame(logs: Iterable[RunLog]) -> pd.DataFrame:
    frames = [log.to_frame() for log in logs]
    if not frames:
        return pd.DataFrame(columns=RUN_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def write_run_csv(logs: Sequence[RunLog], path: Union[str, Path]) -> Path:
    path = Path(path)
    logs_to_frame(logs).to_csv(path, index=False)
    return path


def read_run_csv(path: Union[str, Path]) -> List[RunLog]:
    """Inverse of write_run_csv; runs keep their file order"""
    frame = pd.read_csv(path)
    missing = set(RUN_COLUMNS) - set(frame.columns)
    if missing:
        raise ConfigError(f"{path} is missing columns {sorted(missing)}")
    row_fields = [f.name for f in fields(RunLogRow)]
    logs: List[RunLog] = []
    for (label, seed), group in frame.groupby(["label", "seed"], sort=False):
        rows = [
            RunLogRow(int(r.epoch), int(r.env_steps), float(r.mean_eval_return), float(r.std_eval_return),
                      int(r.env_buffer), int(r.mpc_buffer), float(r.wall_time))
            for r in group[row_fields].itertuples(index=False)
        ]
        logs.append(RunLog(str(label), int(seed), rows))
    return logs


def curve_summary(logs: Sequence[RunLog]) -> pd.DataFrame:
    """Per (label, epoch): mean and population std of the eval return across seeds"""
    frame = logs_to_frame(logs)
    summary = (frame.groupby(["label", "epoch"], sort=False)["mean_eval_return"]
               .agg(mean="mean", std=lambda v: float(np.std(v)), seeds="count")
               .reset_index())
    return summary


def plot_learning_curves(logs: Sequence[RunLog], path: Union[str, Path],
                         title: Optional[str] = None, threshold: Optional[float] = None):
    """One line per label; a +/- 1 std band only where more than one seed ran"""
    summary = curve_summary(logs)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, group in summary.groupby("label", sort=False):
        epochs = group["epoch"].to_numpy()
        mean = group["mean"].to_numpy()
        ax.plot(epochs, mean, label=label)
        if group["seeds"].max() > 1:
            std = group["std"].to_numpy()
            ax.fill_between(epochs, mean - std, mean + std, alpha=0.25)
    if threshold is not None:
        ax.axhline(threshold, color="grey", linestyle=":", linewidth=1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("evaluation return")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return fig


def regret_frame(records_by_seed: Mapping[int, Sequence[RegretRecord]]) -> pd.DataFrame:
    """One row per round per seed, seeds in insertion order"""
    return pd.DataFrame(
        [[seed, r.t, r.j_tilde, r.j_star, r.drift, r.regret, r.bound]
         for seed, records in records_by_seed.items() for r in records],
        columns=REGRET_COLUMNS,
    )


def git_describe(cwd: Optional[Union[str, Path]] = None) -> str:
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=cwd,
                                capture_output=True, text=True, check=True, timeout=10)
    except (OSError, subprocess.CalledProcessError, subprocess.TimeoutExpired):
        return "unknown"
    return result.stdout.strip() or "unknown"


def version_stamp() -> Dict[str, str]:
    try:
        version = metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"package": PACKAGE_NAME, "package_version": version,
            "git": git_describe(Path(__file__).resolve().parent)}


def emit_outputs(out_dir: Union[str, Path], config: ExperimentConfig, logs: Sequence[RunLog] = (),
                 regret_records: Optional[Mapping[int, Sequence[RegretRecord]]] = None,
                 tables: Optional[Dict[str, pd.DataFrame]] = None) -> Dict[str, Path]:
    """
    Write run.csv, config.snapshot and curve.svg (when there are rows),
    plus regret.csv (records keyed by seed) and any named summary tables. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"config": out / "config.snapshot"}
    dump_config(config, written["config"], stamp=version_stamp())

    if logs or regret_records is None:
        written["run"] = write_run_csv(logs, out / "run.csv")
    if any(log.rows for log in logs):
        written["curve"] = out / "curve.svg"
        plot_learning_curves(logs, written["curve"], title=f"{config.experiment.command} on {config.experiment.env}",
                             threshold=config.experiment.threshold)
    if regret_records is not None:
        written["regret"] = out / "regret.csv"
        regret_frame(regret_records).to_csv(written["regret"], index=False)
    for name, table in (tables or {}).items():
        written[name] = out / f"{name}.csv"
        table.to_csv(written[name], index=False)
    logger.info(f"Wrote {', '.join(p.name for p in written.values())} to {out}")
    return written
