"""
Experiment Configuration
Hyperparameter dataclasses for every part of the toolkit and the YAML
file layer (one flat mapping per section).

Defaults are desk-scale: a pendulum epoch is 400 true-environment steps and
4,000 model transitions, keeping the 1:10 env:model ratio of the full-size
runs (1,000 vs 10,000).
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from .env_config import get_env_config
from .errors import ConfigError

logger = logging.getLogger(__name__)

OBJECTIVES = ("cem", "mppi")
SHIFT_MODES = ("policy_shift", "left_shift")
WEIGHTING_MODES = ("exp", "literal")
MODEL_SOURCES = ("analytic_biased", "learned_ensemble")
REGRET_SHIFTS = ("identity", "translate")
COMMANDS = ("train-demorl", "train-sac", "train-ars", "run-demolayer", "regret-check", "ablate-elite")


@dataclass
class MpcConfig:
    """DMD-MPC planner settings"""
    horizon: int = 15
    rollouts: int = 100
    alpha: float = 1.0
    elite_fraction: float = 0.1
    temperature: float = 1.0  # lambda
    objective: str = "cem"
    shift: str = "policy_shift"
    weighting: str = "exp"
    sigma_scale: float = 0.3  # Sigma = (sigma_scale * action_range)^2
    iterations: int = 1  # DMD iterations per real time step
    gamma: Optional[float] = None  # None reuses the MDP discount
    blowup: float = 1e6

    def __post_init__(self):
        if self.horizon < 1 or self.rollouts < 1 or self.iterations < 1:
            raise ConfigError("horizon, rollouts and iterations must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ConfigError("elite_fraction must lie in (0, 1]")
        if self.elite_fraction * self.rollouts < 1.0 - 1e-9:
            raise ConfigError("elite_fraction * rollouts must be at least 1")
        if self.temperature <= 0.0 or self.sigma_scale <= 0.0 or self.blowup <= 0.0:
            raise ConfigError("temperature, sigma_scale and blowup must be positive")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective '{self.objective}'")
        if self.shift not in SHIFT_MODES:
            raise ConfigError(f"unknown shift mode '{self.shift}'")
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"unknown weighting mode '{self.weighting}'")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")


@dataclass
class ModelConfig:
    """Dynamics ensemble settings"""
    members: int = 5
    select: int = 3
    hidden_sizes: List[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 64
    train_epochs: int = 5  # passes over D_ENV per outer epoch
    holdout_fraction: float = 0.1
    min_transitions: int = 250

    def __post_init__(self):
        if self.members < 1 or not 1 <= self.select <= self.members:
            raise ConfigError("need members >= 1 and 1 <= select <= members")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.learning_rate <= 0.0 or self.min_transitions < 1:
            raise ConfigError("batch_size, learning_rate and min_transitions must be positive")
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]


@dataclass
class SacConfig:
    hidden_sizes: List[int] = field(default_factory=lambda: [64, 64])
    learning_rate: float = 3e-4
    tau: float = 0.005
    gamma: float = 0.99
    entropy_weight: float = 0.2
    auto_entropy: bool = False
    target_entropy: Optional[float] = None  # None -> -action_dim
    batch_size: int = 256
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    warmup_steps: int = 400  # uniform random actions before the actor is used

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.entropy_weight <= 0.0 or self.learning_rate <= 0.0 or self.batch_size < 1:
            raise ConfigError("entropy_weight, learning_rate and batch_size must be positive")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("log_std_min must be below log_std_max")
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]


@dataclass
class ArsConfig:
    step_size: float = 0.02
    noise: float = 0.03  # nu
    directions: int = 8  # N
    top_directions: int = 4  # b
    normalize: bool = True
    iterations: int = 300
    episode_length: Optional[int] = None  # None -> env episode length
    accelerated: bool = False
    acc_beta: float = 0.5
    acc_mix: float = 0.5  # gamma_mix

    def __post_init__(self):
        if not 1 <= self.top_directions <= self.directions:
            raise ConfigError("need 1 <= top_directions <= directions")
        if self.noise <= 0.0 or self.step_size <= 0.0:
            raise ConfigError("noise and step_size must be positive")
        if not 0.0 <= self.acc_beta < 1.0 or not 0.0 <= self.acc_mix <= 1.0:
            raise ConfigError("acc_beta must lie in [0, 1) and acc_mix in [0, 1]")


@dataclass
class ReplayConfig:
    env_capacity: int = 1_000_000
    mpc_capacity: int = 400_000
    union_ratio: float = 0.5  # probability of drawing from D_ENV

    def __post_init__(self):
        if self.env_capacity < 1 or self.mpc_capacity < 1:
            raise ConfigError("buffer capacities must be positive")
        if not 0.0 <= self.union_ratio <= 1.0:
            raise ConfigError("union_ratio must lie in [0, 1]")


@dataclass
class DemoLayerConfig:
    mixing: float = 0.5  # gamma_t, constant schedule
    model_source: str = "analytic_biased"
    length_bias: float = 1.2
    horizon: int = 120
    rollouts: int = 90
    episodes: int = 1
    policy: Optional[str] = None  # saved ARS policy; trained on the fly when absent
    fail_threshold: float = 0.5  # final mean cos(theta) separating swing-up success from failure

    def __post_init__(self):
        if not 0.0 <= self.mixing <= 1.0:
            raise ConfigError("mixing must lie in [0, 1]")
        if self.model_source not in MODEL_SOURCES:
            raise ConfigError(f"unknown model source '{self.model_source}'")
        if self.length_bias <= 0.0 or self.horizon < 1 or self.rollouts < 1 or self.episodes < 1:
            raise ConfigError("length_bias, horizon, rollouts and episodes must be positive")


@dataclass
class RegretConfig:
    """Convex tracking toy: J_t(eta) = 1/2 (S eta - c_t)' Q (S eta - c_t) on a box"""
    rounds: int = 1000
    dim: int = 1
    step_scale: float = 0.5  # alpha_t = step_scale / sqrt(t)
    drift: float = 0.0  # per-round target translation
    radius: float = 2.0
    sigma: float = 0.5  # control covariance (diagonal, shared)
    curvature: float = 1.0
    target: float = 0.6
    init: Optional[float] = None  # starting eta per coordinate; None -> seeded uniform draw from the box
    shift: str = "identity"
    grid_points: int = 200

    def __post_init__(self):
        if self.rounds < 1 or self.dim not in (1, 2) or self.grid_points < 2:
            raise ConfigError("rounds must be positive, dim 1 or 2, grid_points >= 2")
        if self.step_scale <= 0.0 or self.radius <= 0.0 or self.sigma <= 0.0 or self.curvature <= 0.0:
            raise ConfigError("step_scale, radius, sigma and curvature must be positive")
        if self.shift not in REGRET_SHIFTS:
            raise ConfigError(f"unknown regret shift '{self.shift}'")


@dataclass
class ExperimentSection:
    command: str = "train-demorl"
    env: str = "pendulum"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    epochs: int = 30
    env_steps_per_epoch: int = 400
    model_transitions_per_epoch: int = 4000
    gradient_steps_per_epoch: int = 400
    eval_episodes: int = 5
    threshold: float = -400.0  # evaluation return counted as "solved"
    elite_fractions: List[float] = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2, 0.5, 1.0])
    env_overrides: Dict[str, float] = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'")
        get_env_config(self.env)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        for name in ("env_steps_per_epoch", "model_transitions_per_epoch",
                     "gradient_steps_per_epoch", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        for p in self.elite_fractions:
            if not 0.0 < p <= 1.0:
                raise ConfigError(f"elite fraction {p} outside (0, 1]")


SECTIONS: Dict[str, type] = {
    "experiment": ExperimentSection,
    "mpc": MpcConfig,
    "sac": SacConfig,
    "ars": ArsConfig,
    "model": ModelConfig,
    "replay": ReplayConfig,
    "demo_layer": DemoLayerConfig,
    "regret": RegretConfig,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    ars: ArsConfig = field(default_factory=ArsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    demo_layer: DemoLayerConfig = field(default_factory=DemoLayerConfig)
    regret: RegretConfig = field(default_factory=RegretConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


def _build_section(name: str, values: Mapping[str, Any]):
    cls = SECTIONS[name]
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in section '{name}': {unknown}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"invalid section '{name}': {e}") from e


def config_from_dict(data: Optional[Mapping[str, Any]]) -> ExperimentConfig:
    """Build an ExperimentConfig; missing sections and keys take defaults"""
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError("configuration root must be a mapping of sections")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    sections = {}
    for name in SECTIONS:
        values = data.get(name) or {}
        if not isinstance(values, Mapping):
            raise ConfigError(f"section '{name}' must be a mapping")
        sections[name] = _build_section(name, values)
    return ExperimentConfig(**sections)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    config = config_from_dict(data)
    logger.debug(f"Loaded config from {path}")
    return config


def dump_config(config: ExperimentConfig, path: Union[str, Path],
                stamp: Optional[Mapping[str, str]] = None) -> None:
    """Write the config snapshot, optionally preceded by a version stamp"""
    data: Dict[str, Any] = {}
    if stamp:
        data["version"] = dict(stamp)
    data.update(config.to_dict())
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")


def read_snapshot(path: Union[str, Path]) -> Tuple[ExperimentConfig, Dict[str, str]]:
    """Inverse of dump_config: (config, version stamp)"""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    stamp = data.pop("version", {}) or {}
    return config_from_dict(data), stamp
