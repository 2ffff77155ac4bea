"""
Unit tests for the analytic environments and their registry
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.env_config import EnvConfig, get_env_config, list_env_names, with_overrides
from app.envs import (
    Cartpole,
    EnvState,
    Pendulum,
    Reacher,
    make_env,
    run_episode,
    run_episodes_batch,
)
from app.errors import ConfigError, EpisodeFinishedError, ShapeError
from app.seeding import derive_rng, derive_seed


class TestRegistry:
    """Test cases for environment registration and overrides"""

    def test_registered_names(self):
        """Test every benchmark environment is registered"""
        assert list_env_names() == ["cartpole_balance", "cartpole_swingup", "pendulum", "reacher"]

    def test_unknown_name(self):
        """Test an unknown environment name lists the valid names"""
        with pytest.raises(ConfigError) as err:
            make_env("acrobot")
        assert "pendulum" in str(err.value)

    def test_make_env_types(self):
        """Test each name resolves to the matching dynamics class"""
        assert isinstance(make_env("pendulum"), Pendulum)
        assert isinstance(make_env("cartpole_swingup"), Cartpole)
        assert isinstance(make_env("reacher"), Reacher)

    def test_default_specs(self):
        """Test dimensions, bounds and horizons of the registered specs"""
        pendulum = make_env("pendulum").spec
        assert (pendulum.state_dim, pendulum.action_dim, pendulum.episode_length) == (3, 1, 500)
        np.testing.assert_array_equal(pendulum.action_high, [2.0])
        reacher = make_env("reacher").spec
        assert (reacher.state_dim, reacher.action_dim, reacher.episode_length) == (4, 2, 200)
        assert make_env("cartpole_balance").spec.state_dim == 5

    def test_physics_override(self):
        """Test a physics key override replaces only that constant"""
        env = make_env("pendulum", {"length": 1.5, "episode_length": 40})
        assert env.physics["length"] == 1.5
        assert env.physics["gravity"] == 10.0
        assert env.spec.episode_length == 40
        assert get_env_config("pendulum").physics["length"] == 1.0

    def test_unknown_override(self):
        """Test an override that names nothing is rejected"""
        with pytest.raises(ConfigError):
            with_overrides(get_env_config("pendulum"), {"friction": 0.1})

    def test_invalid_config(self):
        """Test inverted action bounds are rejected"""
        with pytest.raises(ConfigError):
            EnvConfig(kind="pendulum", action_low=[1.0], action_high=[-1.0], physics={"length": 1.0})

    def test_biased_scales_bias_key(self):
        """Test the biased copy scales the pole length and leaves the original alone"""
        env = make_env("pendulum")
        biased = env.biased(1.2)
        assert biased.physics["length"] == pytest.approx(1.2)
        assert env.physics["length"] == 1.0
        assert make_env("reacher").biased(2.0).physics["mass"] == 2.0


class TestPendulum:
    """Test cases for pendulum dynamics and reward"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.env = make_env("pendulum")

    def test_horizontal_falls_toward_hanging(self):
        """Test one zero-torque step from horizontal gains speed away from upright"""
        state = EnvState(Pendulum.make_state(np.pi / 2, 0.0))
        next_state, _, _ = self.env.step(state, [0.0])
        assert next_state.x[2] == pytest.approx(0.5)
        assert Pendulum.angle(next_state.x) == pytest.approx(np.pi / 2 + 0.025)

    def test_upright_is_equilibrium(self):
        """Test the upright state stays put without torque"""
        state = EnvState(Pendulum.make_state(0.0, 0.0))
        next_state, reward, _ = self.env.step(state, [0.0])
        np.testing.assert_allclose(next_state.x, [1.0, 0.0, 0.0], atol=1e-15)
        assert reward == 0.0

    def test_reward_formula(self):
        """Test the closed-form swing-up reward at hanging with torque"""
        x = Pendulum.make_state(np.pi, 1.0)
        assert self.env.reward(x, [2.0]) == pytest.approx(-(4.0 + 0.1 + 0.004))

    def test_action_clipping(self):
        """Test an out-of-box torque is clipped and flagged"""
        state = self.env.reset(0)
        a, _, _ = self.env.step(state, [5.0])
        b, _, _ = self.env.step(state, [2.0])
        np.testing.assert_array_equal(a.x, b.x)
        assert a.clipped and not b.clipped

    def test_energy_is_conserved_without_torque(self):
        """Test energy averaged over each half of a free swing agrees within 1%"""
        x = Pendulum.make_state(np.pi - 0.3, 0.0)
        episode = run_episode(self.env, lambda x, t: np.zeros(1), start=EnvState(x))
        energy = self.env.energy(episode.states)
        half = len(energy) // 2
        first, last = energy[:half].mean(), energy[half:].mean()
        assert abs(last - first) / first < 0.01

    def test_episode_limit(self):
        """Test stepping past the horizon raises"""
        env = make_env("pendulum", {"episode_length": 3})
        state = env.reset(0)
        for _ in range(3):
            state, _, done = env.step(state, [0.0])
        assert done
        with pytest.raises(EpisodeFinishedError):
            env.step(state, [0.0])

    def test_reset_starts_near_hanging(self):
        """Test the initial state distribution sits close to the hanging position"""
        for seed in range(5):
            x = self.env.reset(seed).x
            assert Pendulum.angle_from_upright(x) > np.pi - 0.06
            assert abs(x[2]) <= 0.05

    def test_shape_checks(self):
        """Test a wrong-sized action or state batch is rejected"""
        with pytest.raises(ShapeError):
            self.env.step(self.env.reset(0), [0.0, 0.0])
        with pytest.raises(ShapeError):
            self.env.step_batch(np.zeros((2, 4)), np.zeros((2, 1)))


class TestOtherEnvironments:
    """Test cases for cartpole and reacher"""

    def test_cartpole_upright_equilibrium(self):
        """Test the centred upright cartpole is an equilibrium with full reward"""
        env = make_env("cartpole_balance")
        x = Cartpole.make_state(0.0, 0.0, 0.0, 0.0)
        next_state, reward, _ = env.step(EnvState(x), [0.0])
        np.testing.assert_allclose(next_state.x, x, atol=1e-15)
        assert reward == pytest.approx(1.0)

    def test_cartpole_force_pushes_cart(self):
        """Test a positive force accelerates the cart forward"""
        env = make_env("cartpole_swingup")
        next_state, _, _ = env.step(EnvState(Cartpole.make_state(0.0, 0.0, np.pi, 0.0)), [10.0])
        assert next_state.x[1] > 0.0

    def test_reacher_point_mass(self):
        """Test one reacher step integrates force into velocity then position"""
        env = make_env("reacher")
        next_state, reward, _ = env.step(EnvState(np.zeros(4)), [1.0, -1.0])
        np.testing.assert_allclose(next_state.x, [0.0025, -0.0025, 0.05, -0.05])
        assert reward == pytest.approx(-(2.0 + 0.02))

    def test_batch_matches_single_steps(self):
        """Test step_batch agrees with stepping each row"""
        env = make_env("cartpole_swingup")
        rng = np.random.default_rng(0)
        X = np.stack([env.reset(s).x for s in range(4)])
        U = rng.uniform(-10, 10, size=(4, 1))
        batch = env.step_batch(X, U)
        for i in range(4):
            single, _, _ = env.step(EnvState(X[i]), U[i])
            np.testing.assert_allclose(batch[i], single.x, atol=1e-14)


class TestRollouts:
    """Test cases for episode helpers and seed streams"""

    def test_run_episode_is_deterministic(self):
        """Test the same seed gives the same episode"""
        env = make_env("pendulum", {"episode_length": 20})
        act = lambda x, t: np.array([np.sin(t)])  # noqa: E731
        a = run_episode(env, act, seed=3)
        b = run_episode(env, act, seed=3)
        assert a.states.shape == (21, 3) and a.actions.shape == (20, 1)
        assert np.array_equal(a.states, b.states)
        assert a.total_return == pytest.approx(b.total_return)

    def test_batch_returns_match_single_episodes(self):
        """Test lock-step batch rollouts reproduce single-episode returns"""
        env = make_env("pendulum", {"episode_length": 15})
        starts = np.stack([env.reset(s).x for s in range(3)])
        returns, states = run_episodes_batch(env, lambda X, t: -X[:, 2:3], starts)
        assert states.shape == (3, 16, 3)
        for i in range(3):
            episode = run_episode(env, lambda x, t: -x[2:3], start=EnvState(starts[i]))
            assert returns[i] == pytest.approx(episode.total_return, abs=1e-12)

    def test_derived_streams_are_independent(self):
        """Test named streams differ from each other and repeat per master seed"""
        assert derive_seed(0, "collect") == derive_seed(0, "collect")
        assert derive_seed(0, "collect") != derive_seed(0, "eval")
        assert derive_seed(0, "collect") != derive_seed(1, "collect")
        a = derive_rng(7, "mpc").random(3)
        np.testing.assert_array_equal(a, derive_rng(7, "mpc").random(3))
