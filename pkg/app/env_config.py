"""
Environment Configuration
Physical constants, action bounds, episode settings and initial-state
distributions for the analytic desk-scale environments.
Any constant can be overridden per experiment through `with_overrides`.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional

from .errors import ConfigError

ENV_KINDS = ("pendulum", "cartpole", "reacher")
INIT_MODES = ("hanging", "upright", "origin")


@dataclass
class EnvConfig:
    """Configuration for one registered environment"""
    kind: str  # "pendulum", "cartpole" or "reacher"
    label: str = ""
    action_low: List[float] = None
    action_high: List[float] = None
    episode_length: int = 500
    discount: float = 0.99
    dt: float = 0.05
    physics: Dict[str, float] = field(default_factory=dict)
    init_mode: str = "hanging"
    init_noise: float = 0.05
    # physics key scaled by the "biased length" model-mismatch knob
    bias_key: str = "length"

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown environment kind '{self.kind}'")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"unknown initial-state mode '{self.init_mode}'")
        if self.action_low is None or self.action_high is None:
            raise ConfigError(f"{self.kind}: action bounds are required")
        self.action_low = [float(v) for v in self.action_low]
        self.action_high = [float(v) for v in self.action_high]
        if len(self.action_low) != len(self.action_high):
            raise ConfigError("action_low and action_high differ in length")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ConfigError("action_low must be below action_high elementwise")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie in (0, 1)")
        if self.dt <= 0.0 or self.init_noise < 0.0:
            raise ConfigError("dt must be positive and init_noise non-negative")
        self.physics = {k: float(v) for k, v in self.physics.items()}
        if self.bias_key not in self.physics:
            raise ConfigError(f"bias key '{self.bias_key}' is not a physics constant")


# Constants follow the classic control benchmarks; the pendulum's torque limit
# is below m*g*l so swing-up needs pumping.
ENV_CONFIG: Dict[str, EnvConfig] = {
    'pendulum': EnvConfig(
        kind='pendulum',
        label='Pendulum swing-up',
        action_low=[-2.0],
        action_high=[2.0],
        physics={'gravity': 10.0, 'mass': 1.0, 'length': 1.0, 'max_speed': 8.0},
        init_mode='hanging',
    ),
    'cartpole_swingup': EnvConfig(
        kind='cartpole',
        label='Cartpole swing-up',
        action_low=[-10.0],
        action_high=[10.0],
        physics={'gravity': 9.8, 'cart_mass': 1.0, 'pole_mass': 0.1, 'length': 0.5},
        init_mode='hanging',
    ),
    'cartpole_balance': EnvConfig(
        kind='cartpole',
        label='Cartpole balance',
        action_low=[-10.0],
        action_high=[10.0],
        physics={'gravity': 9.8, 'cart_mass': 1.0, 'pole_mass': 0.1, 'length': 0.5},
        init_mode='upright',
    ),
    'reacher': EnvConfig(
        kind='reacher',
        label='Point-mass reacher',
        action_low=[-1.0, -1.0],
        action_high=[1.0, 1.0],
        episode_length=200,
        physics={'mass': 1.0, 'damping': 0.0, 'goal_x': 1.0, 'goal_y': 1.0},
        init_mode='origin',
        bias_key='mass',
    ),
}


def get_env_config(name: str) -> EnvConfig:
    """Get configuration for a registered environment name"""
    config = ENV_CONFIG.get(name)
    if config is None:
        raise ConfigError(f"unknown environment '{name}', expected one of {list_env_names()}")
    return config


def list_env_names() -> List[str]:
    return sorted(ENV_CONFIG.keys())


def with_overrides(config: EnvConfig, overrides: Optional[Mapping[str, object]] = None) -> EnvConfig:
    """
    Copy of `config` with overrides applied. Keys naming a physics constant
    replace that constant; other keys must name an EnvConfig field.
    """
    if not overrides:
        return config
    physics = dict(config.physics)
    top_level = {}
    field_names = {f.name for f in fields(EnvConfig)}
    for key, value in overrides.items():
        if key in physics:
            physics[key] = float(value)
        elif key in field_names and key not in ("kind", "physics"):
            top_level[key] = value
        else:
            raise ConfigError(f"unknown environment override '{key}'")
    return replace(config, physics=physics, **top_level)
