"""
Deployment-time guidance of a frozen policy.

Every true-environment action is the convex combination

    u_t = (1 - gamma) u_RL + gamma g_t

of the policy's action and the first action of a DMD-MPC plan warm-started
by rolling the same policy through a (possibly mismatched) model. The
rollouts carry no terminal cost and the policy is never modified.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .ars import LinearPolicy, policy_act
from .config import DemoLayerConfig, MpcConfig
from .dmd_mpc import DmdMpcPlanner, PlanningProblem, default_sigma
from .dynamics import AnalyticDynamics, EnsembleDynamics, EnsembleModel, select_members
from .envs import Cartpole, Environment, Episode, Pendulum
from .errors import ConfigError, NonFiniteError, PlanningError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

# a batch policy maps (B, n) states to (B, m) actions
PolicyLike = Union[LinearPolicy, Callable[[np.ndarray], np.ndarray]]

UPRIGHT_WINDOW = 50


def as_batch_policy(policy: PolicyLike) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(policy, LinearPolicy):
        return lambda X: policy_act(policy, X)
    return policy


@dataclass
class GuidedStep:
    u_rl: np.ndarray
    u_mpc: np.ndarray
    u: np.ndarray
    fallback: bool = False


@dataclass
class GuidedEpisode:
    episode: Episode
    steps: List[GuidedStep] = field(default_factory=list)

    @property
    def total_return(self) -> float:
        return self.episode.total_return

    @property
    def fallbacks(self) -> int:
        return sum(int(s.fallback) for s in self.steps)


def guidance_planner_config(config: DemoLayerConfig, mpc: Optional[MpcConfig] = None) -> MpcConfig:
    """Planner settings for the layer: its own H and M, always policy-shifted"""
    mpc = mpc or MpcConfig()
    return replace(mpc, horizon=config.horizon, rollouts=config.rollouts, shift="policy_shift")


def build_guidance_problem(env: Environment, config: DemoLayerConfig, mpc: Optional[MpcConfig] = None,
                           ensemble: Optional[EnsembleModel] = None, select: int = 3) -> PlanningProblem:
    """
    Model the planner sees: the environment's equations with the bias
    constant scaled by `length_bias`, or selected members of a learned
    ensemble. Costs are the environment's known costs.
    """
    mpc = mpc or MpcConfig()
    if config.model_source == "analytic_biased":
        dynamics = AnalyticDynamics(env.biased(config.length_bias))
    elif config.model_source == "learned_ensemble":
        if ensemble is None:
            raise ConfigError("model_source 'learned_ensemble' needs a trained ensemble")
        dynamics = EnsembleDynamics(ensemble, select_members(ensemble, min(select, ensemble.size)))
    else:
        raise ConfigError(f"unknown model source '{config.model_source}'")
    return PlanningProblem.for_env(env, dynamics=dynamics, gamma=mpc.gamma, blowup=mpc.blowup)


def guided_step(policy: PolicyLike, problem: PlanningProblem, x_t: np.ndarray, config: DemoLayerConfig,
                mpc: Optional[MpcConfig] = None, sigma: Optional[Sequence[float]] = None,
                seed: SeedLike = None) -> GuidedStep:
    """One guided action with both endpoints recorded"""
    rng = as_generator(seed)
    act = as_batch_policy(policy)
    x_t = np.asarray(x_t, dtype=np.float64)
    low, high = problem.bounds
    u_rl = np.clip(np.asarray(act(x_t[None, :]), dtype=np.float64).reshape(-1), low, high)
    if sigma is None:
        sigma = ((mpc or MpcConfig()).sigma_scale * (high - low)) ** 2

    planner = DmdMpcPlanner(problem, guidance_planner_config(config, mpc), sigma, act)
    try:
        u_mpc = planner.plan(x_t, rng).action
        if not np.all(np.isfinite(u_mpc)):
            raise NonFiniteError("non-finite planned action")
    except (PlanningError, NonFiniteError) as e:
        logger.warning(f"guidance model diverged ({e}); using the policy action")
        return GuidedStep(u_rl, u_rl.copy(), u_rl.copy(), fallback=True)

    gamma = config.mixing
    u = np.clip((1.0 - gamma) * u_rl + gamma * u_mpc, low, high)
    return GuidedStep(u_rl, u_mpc, u)


def guided_action(policy: PolicyLike, problem: PlanningProblem, x_t: np.ndarray, config: DemoLayerConfig,
                  mpc: Optional[MpcConfig] = None, sigma: Optional[Sequence[float]] = None,
                  seed: SeedLike = None) -> np.ndarray:
    """u_t = clip((1 - gamma) pi(x_t) + gamma g_t[0])"""
    return guided_step(policy, problem, x_t, config, mpc, sigma, seed).u


def run_guided_episode(policy: PolicyLike, env: Environment, problem: PlanningProblem, config: DemoLayerConfig,
                       mpc: Optional[MpcConfig] = None, seed: SeedLike = None,
                       steps: Optional[int] = None) -> GuidedEpisode:
    """Full episode in the true environment with a guided action every step"""
    rng = as_generator(seed)
    sigma = default_sigma(env.spec, (mpc or MpcConfig()).sigma_scale)
    state = env.reset(rng)
    steps = env.spec.episode_length if steps is None else steps
    states, actions, rewards, log = [state.x], [], [], []
    for _ in range(steps):
        record = guided_step(policy, problem, state.x, config, mpc, sigma, rng)
        logger.debug(f"t={state.t} u_rl={np.array2string(record.u_rl, precision=3)} "
                     f"g={np.array2string(record.u_mpc, precision=3)} u={np.array2string(record.u, precision=3)}")
        state, reward, done = env.step(state, record.u)
        states.append(state.x)
        actions.append(record.u)
        rewards.append(reward)
        log.append(record)
        if done:
            break
    episode = Episode(np.array(states), np.array(actions).reshape(-1, env.spec.action_dim), np.array(rewards),
                      {"mixing": config.mixing})
    result = GuidedEpisode(episode, log)
    logger.info(f"Guided {env.name} episode: return {result.total_return:.2f}, "
                f"{result.fallbacks} fallback steps")
    return result


def final_uprightness(env: Environment, states: np.ndarray, window: int = UPRIGHT_WINDOW) -> float:
    """Mean cos of the pole angle from upright over the last `window` states"""
    if not isinstance(env, (Pendulum, Cartpole)):
        raise ConfigError(f"{env.name} has no pole angle")
    tail = np.asarray(states)[-window:]
    return float(np.mean(np.cos(env.angle_from_upright(tail))))


def swingup_succeeded(env: Environment, states: np.ndarray, threshold: float = 0.5) -> bool:
    return final_uprightness(env, states) >= threshold
