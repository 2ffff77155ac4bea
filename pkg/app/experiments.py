"""
Experiment drivers: the two-loop DeMoRL training run, its plain-SAC
baseline, ARS training, DeMo Layer evaluation, the elite-fraction ablation
and the regret check, plus a campaign runner that repeats a command over
seeds and writes the result files.

Budget accounting: `env_steps` counts true-environment transitions only;
model rollouts never touch it.
"""

import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .ars import LinearPolicy, accelerated_step, ars_iteration, evaluate_policy, load_policy, policy_act, save_policy
from .config import ExperimentConfig
from .demo_layer import build_guidance_problem, final_uprightness, run_guided_episode
from .dmd_mpc import DmdMpcPlanner, PlanningProblem, collect_model_trajectory, default_sigma, value_terminal
from .dynamics import EnsembleDynamics, EnsembleModel, select_members, train_ensemble
from .envs import EnvState, Environment, Transition, make_env, run_episode, run_episodes_batch
from .errors import DemoMpcError, PlanningError, RunAbortedError
from .outputs import RunLog, RunLogRow, emit_outputs
from .regret import regret_check
from .replay import ReplayBuffer, sample_union, sample_uniform
from .sac import SacAgent, act_deterministic, actor_sample, create_agent, sac_update, target_update, value_of
from .seeding import SeedLike, as_generator, derive_rng, derive_seed

logger = logging.getLogger(__name__)

CENSORED = "censored"
# failed plans tolerated per epoch before the MPC block gives up
MAX_PLAN_FAILURES = 50


def make_experiment_env(config: ExperimentConfig) -> Environment:
    return make_env(config.experiment.env, config.experiment.env_overrides)


def evaluate_agent(env: Environment, agent: SacAgent, episodes: int, seed: SeedLike = None) -> np.ndarray:
    """Returns of deterministic (actor-mean) episodes, run as one batch"""
    rng = as_generator(seed)
    starts = np.stack([env.reset(rng).x for _ in range(episodes)])
    returns, _ = run_episodes_batch(env, lambda X, t: act_deterministic(agent, X), starts)
    return returns


class _EnvCollector:
    """Steps the true environment with the SAC actor, resetting at episode ends"""

    def __init__(self, env: Environment, agent: SacAgent, buffer: ReplayBuffer, rng: np.random.Generator):
        self.env = env
        self.agent = agent
        self.buffer = buffer
        self.rng = rng
        self.state: EnvState = env.reset(rng)
        self.steps = 0

    def collect(self, count: int) -> None:
        spec = self.env.spec
        for _ in range(count):
            if self.steps < self.agent.config.warmup_steps:
                u = self.rng.uniform(spec.action_low, spec.action_high)
            else:
                u, _ = actor_sample(self.agent, self.state.x, self.rng)
            u = spec.clip(u)[0]
            next_state, reward, done = self.env.step(self.state, u)
            # episodes end on the time limit only, so transitions are never terminal
            self.buffer.push(Transition(self.state.x, u, reward, next_state.x, False))
            self.steps += 1
            self.state = self.env.reset(self.rng) if done else next_state


def planning_problem(env: Environment, model: EnsembleModel, agent: SacAgent,
                     config: ExperimentConfig) -> PlanningProblem:
    """Selected ensemble members as the model, -V as the terminal cost"""
    members = select_members(model, config.model.select)
    return PlanningProblem.for_env(
        env,
        dynamics=EnsembleDynamics(model, members),
        terminal_cost_fn=value_terminal(lambda X: value_of(agent, X)),
        gamma=config.mpc.gamma,
        blowup=config.mpc.blowup,
    )


def fill_mpc_buffer(env: Environment, problem: PlanningProblem, agent: SacAgent, d_env: ReplayBuffer,
                    d_mpc: ReplayBuffer, config: ExperimentConfig, rng: np.random.Generator) -> int:
    """
    Plan from D_ENV start states and roll each plan mean through the model
    into D_MPC until the per-epoch model-transition budget is met.
    """
    planner = DmdMpcPlanner(problem, config.mpc, default_sigma(env.spec, config.mpc.sigma_scale),
                            policy=lambda X: act_deterministic(agent, X))
    target = config.experiment.model_transitions_per_epoch
    added = failures = 0
    while added < target:
        start = sample_uniform(d_env, 1, rng).x[0]
        planner.reset()
        try:
            result = planner.plan(start, rng)
        except PlanningError as e:
            failures += 1
            logger.warning(f"skipping start state: {e}")
            if failures > MAX_PLAN_FAILURES:
                raise PlanningError(f"{failures} failed plans while filling D_MPC") from e
            continue
        x, u, r, x_next, done = collect_model_trajectory(problem, result.plan.mean, start, env.reward_batch, rng)
        if r.size == 0:
            failures += 1
            if failures > MAX_PLAN_FAILURES:
                raise PlanningError(f"{failures} model trajectories diverged immediately")
            continue
        keep = min(r.size, target - added)
        d_mpc.push_batch(x[:keep], u[:keep], r[:keep], x_next[:keep], done[:keep])
        added += keep
    return added


def train_demorl(config: ExperimentConfig, seed: int = 0, use_mpc: bool = True,
                 label: Optional[str] = None) -> RunLog:
    """
    Per epoch: collect true-environment steps with the SAC actor into D_ENV,
    fit the ensemble, fill D_MPC with DMD-MPC model trajectories, take SAC
    gradient steps on D_ENV and D_MPC mixed, and evaluate the actor mean.
    With use_mpc off this is the plain SAC baseline on the same budget.
    """
    exp = config.experiment
    label = label or ("demorl" if use_mpc else "sac")
    env = make_experiment_env(config)
    n, m = env.spec.state_dim, env.spec.action_dim
    agent = create_agent(n, m, env.spec.action_low, env.spec.action_high, config.sac, derive_seed(seed, "agent"))
    d_env = ReplayBuffer(config.replay.env_capacity, n, m, "D_ENV")
    d_mpc = ReplayBuffer(config.replay.mpc_capacity, n, m, "D_MPC")
    model = EnsembleModel.create(n, m, config.model, derive_seed(seed, "ensemble"))
    collector = _EnvCollector(env, agent, d_env, derive_rng(seed, "collect"))
    model_rng = derive_rng(seed, "model")
    mpc_rng = derive_rng(seed, "mpc")
    sac_rng = derive_rng(seed, "sac")
    eval_rng = derive_rng(seed, "eval")

    log = RunLog(label, seed)
    started = time.perf_counter()
    for epoch in range(1, exp.epochs + 1):
        try:
            collector.collect(exp.env_steps_per_epoch)
            if use_mpc and d_env.size >= config.model.min_transitions:
                train_ensemble(model, d_env, config.model.train_epochs, model_rng, config.model)
                problem = planning_problem(env, model, agent, config)
                fill_mpc_buffer(env, problem, agent, d_env, d_mpc, config, mpc_rng)
            for _ in range(exp.gradient_steps_per_epoch):
                batch = sample_union(d_env, d_mpc, config.sac.batch_size, config.replay.union_ratio, sac_rng)
                sac_update(agent, batch, sac_rng)
                target_update(agent)
            returns = evaluate_agent(env, agent, exp.eval_episodes, eval_rng)
        except DemoMpcError as e:
            logger.error(f"{label} seed {seed} aborted at epoch {epoch}: {e}")
            raise RunAbortedError(f"{label} seed {seed} aborted at epoch {epoch}: {e}", log) from e
        row = RunLogRow(epoch, collector.steps, float(np.mean(returns)), float(np.std(returns)),
                        d_env.size, d_mpc.size, time.perf_counter() - started)
        log.append(row)
        logger.info(f"[{label} seed {seed}] epoch {epoch}: env_steps={row.env_steps} "
                    f"return={row.mean_eval_return:.1f}+/-{row.std_eval_return:.1f} D_MPC={row.mpc_buffer}")
    return log


def train_sac(config: ExperimentConfig, seed: int = 0) -> RunLog:
    return train_demorl(config, seed, use_mpc=False, label="sac")


def epochs_to_threshold(log: RunLog, threshold: float) -> Optional[int]:
    """First epoch whose evaluation return reaches `threshold`; None if never (censored)"""
    for row in log.rows:
        if row.mean_eval_return >= threshold:
            return row.epoch
    return None


def median_epochs(logs: Sequence[RunLog], threshold: float) -> Union[float, str]:
    """
    Median epochs-to-threshold with censored runs counted as worse than any
    finished run; CENSORED when the median run never reached it.
    """
    values = [epochs_to_threshold(log, threshold) for log in logs]
    ranked = sorted(np.inf if v is None else float(v) for v in values)
    median = float(np.median(ranked)) if ranked else np.inf
    return CENSORED if not np.isfinite(median) else median


def threshold_table(groups: Dict[str, Sequence[RunLog]], threshold: float) -> pd.DataFrame:
    rows = []
    for name, logs in groups.items():
        per_seed = [epochs_to_threshold(log, threshold) for log in logs]
        rows.append({
            "run": name,
            "median_epochs": median_epochs(logs, threshold),
            "per_seed": " ".join(CENSORED if v is None else str(v) for v in per_seed),
            "final_return": float(np.mean([log.rows[-1].mean_eval_return for log in logs if log.rows]))
            if any(log.rows for log in logs) else float("nan"),
        })
    return pd.DataFrame(rows, columns=["run", "median_epochs", "per_seed", "final_return"])


def ablate_elite(config: ExperimentConfig, fractions: Optional[Sequence[float]] = None,
                 seeds: Optional[Sequence[int]] = None) -> Tuple[Dict[str, List[RunLog]], pd.DataFrame]:
    """train_demorl once per elite fraction and seed; returns the logs and the threshold table"""
    fractions = list(config.experiment.elite_fractions if fractions is None else fractions)
    seeds = list(config.experiment.seeds if seeds is None else seeds)
    results: Dict[str, List[RunLog]] = {}
    for p in fractions:
        variant = replace(config, mpc=replace(config.mpc, elite_fraction=p))
        name = f"p={p:g}"
        results[name] = [train_demorl(variant, s, label=name) for s in seeds]
    table = threshold_table(results, config.experiment.threshold)
    table.insert(0, "elite_fraction", fractions)
    return results, table


def train_ars(config: ExperimentConfig, seed: int = 0,
              policy: Optional[LinearPolicy] = None) -> Tuple[LinearPolicy, RunLog]:
    """ARS on the experiment environment; one log row per iteration"""
    env = make_experiment_env(config)
    spec = env.spec
    policy = policy or LinearPolicy.zeros(spec.state_dim, spec.action_dim, spec.action_low, spec.action_high,
                                           normalize=config.ars.normalize)
    episode_length = config.ars.episode_length or spec.episode_length
    ars_rng = derive_rng(seed, "ars")
    eval_rng = derive_rng(seed, "ars/eval")
    log = RunLog("ars", seed)
    env_steps = 0
    started = time.perf_counter()
    history = [policy.theta.copy()]
    for j in range(1, config.ars.iterations + 1):
        try:
            policy, _ = ars_iteration(policy, env, config.ars, ars_rng, iteration=j)
            if config.ars.accelerated:
                policy.theta = accelerated_step(history + [policy.theta], config.ars.acc_beta, config.ars.acc_mix)
            history.append(policy.theta.copy())
            returns = evaluate_policy(policy, env, config.experiment.eval_episodes, eval_rng, episode_length)
        except DemoMpcError as e:
            raise RunAbortedError(f"ars seed {seed} aborted at iteration {j}: {e}", log) from e
        env_steps += 2 * config.ars.directions * episode_length
        log.append(RunLogRow(j, env_steps, float(np.mean(returns)), float(np.std(returns)),
                             wall_time=time.perf_counter() - started))
        logger.debug(f"[ars seed {seed}] iteration {j}: return {np.mean(returns):.2f}")
    if log.rows:
        logger.info(f"[ars seed {seed}] final return {log.rows[-1].mean_eval_return:.2f}")
    return policy, log


def _guidance_ensemble(env: Environment, config: ExperimentConfig, seed: int) -> EnsembleModel:
    """Fit an ensemble on uniformly random true-environment transitions"""
    rng = derive_rng(seed, "demo_layer/data")
    spec = env.spec
    buffer = ReplayBuffer(config.replay.env_capacity, spec.state_dim, spec.action_dim, "D_ENV")
    count = max(config.model.min_transitions, config.experiment.env_steps_per_epoch)
    state = env.reset(rng)
    for _ in range(count):
        u = rng.uniform(spec.action_low, spec.action_high)
        next_state, reward, done = env.step(state, u)
        buffer.push(Transition(state.x, u, reward, next_state.x, False))
        state = env.reset(rng) if done else next_state
    model = EnsembleModel.create(spec.state_dim, spec.action_dim, config.model, derive_seed(seed, "ensemble"))
    return train_ensemble(model, buffer, config.model.train_epochs * 4, derive_rng(seed, "model"), config.model)


def run_demolayer(config: ExperimentConfig, seed: int = 0,
                  policy: Optional[LinearPolicy] = None) -> pd.DataFrame:
    """
    Guided versus unguided episodes of a frozen linear policy; one row per
    episode with both returns and the final uprightness of each.
    """
    layer = config.demo_layer
    env = make_experiment_env(config)
    if policy is None:
        if layer.policy:
            policy = load_policy(layer.policy)
        else:
            policy, _ = train_ars(config, seed)
    ensemble = _guidance_ensemble(env, config, seed) if layer.model_source == "learned_ensemble" else None
    problem = build_guidance_problem(env, layer, config.mpc, ensemble, config.model.select)

    rows = []
    for k in range(layer.episodes):
        episode_seed = derive_seed(seed, f"demo_layer/episode{k}")
        plain = run_episode(env, lambda x, t: policy_act(policy, x), seed=episode_seed)
        guided = run_guided_episode(policy, env, problem, layer, config.mpc, seed=episode_seed)
        row = {
            "seed": seed,
            "episode": k,
            "unguided_return": plain.total_return,
            "guided_return": guided.total_return,
            "fallback_steps": guided.fallbacks,
        }
        try:
            row["unguided_upright"] = final_uprightness(env, plain.states)
            row["guided_upright"] = final_uprightness(env, guided.episode.states)
            row["guided_success"] = row["guided_upright"] >= layer.fail_threshold
            row["unguided_success"] = row["unguided_upright"] >= layer.fail_threshold
        except DemoMpcError:
            pass
        rows.append(row)
        logger.info(f"[demo layer seed {seed}] episode {k}: unguided {row['unguided_return']:.1f}, "
                    f"guided {row['guided_return']:.1f}")
    return pd.DataFrame(rows)


def run_regret_check(config: ExperimentConfig, seed: int = 0) -> dict:
    return regret_check(config.regret, seed)


def run_campaign(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None,
                 seeds: Optional[Sequence[int]] = None, policy_path: Optional[str] = None) -> Dict[str, Path]:
    """
    Run the configured command for every seed and write the result files.
    train-demorl also runs the paired SAC baseline. A run that aborts still
    has its completed epochs written before the error propagates.
    """
    exp = config.experiment
    out = Path(out_dir or exp.output_dir)
    seeds = list(exp.seeds if seeds is None else seeds)
    command = exp.command
    logger.info(f"Running {command} on {exp.env} for seeds {seeds}")
    logs: List[RunLog] = []
    tables: Dict[str, pd.DataFrame] = {}

    try:
        if command in ("train-demorl", "train-sac"):
            groups: Dict[str, List[RunLog]] = {}
            for s in seeds:
                if command == "train-demorl":
                    logs.append(train_demorl(config, s))
                    groups.setdefault("demorl", []).append(logs[-1])
                logs.append(train_sac(config, s))
                groups.setdefault("sac", []).append(logs[-1])
            tables["summary"] = threshold_table(groups, exp.threshold)
        elif command == "ablate-elite":
            results, tables["summary"] = ablate_elite(config, seeds=seeds)
            logs = [log for group in results.values() for log in group]
        elif command == "train-ars":
            for s in seeds:
                policy, log = train_ars(config, s)
                logs.append(log)
                out.mkdir(parents=True, exist_ok=True)
                save_policy(policy, out / f"policy_seed{s}.json")
        elif command == "run-demolayer":
            if policy_path:
                config = replace(config, demo_layer=replace(config.demo_layer, policy=policy_path))
            tables["episodes"] = pd.concat([run_demolayer(config, s) for s in seeds], ignore_index=True)
        elif command == "regret-check":
            results = [run_regret_check(config, s) for s in seeds]
            tables["regret_summary"] = pd.DataFrame([
                {"seed": s, "bound_holds": r["bound_holds"], "lemma_holds": r["lemma_holds"],
                 "final_regret": r["final_regret"], "final_bound": r["final_bound"], "min_margin": r["min_margin"]}
                for s, r in zip(seeds, results)
            ])
            return emit_outputs(out, config, regret_records={s: r["records"] for s, r in zip(seeds, results)},
                                tables=tables)
    except RunAbortedError as e:
        if e.log is not None:
            logs.append(e.log)
        emit_outputs(out, config, logs, tables=tables)
        raise
    return emit_outputs(out, config, logs, tables=tables)
