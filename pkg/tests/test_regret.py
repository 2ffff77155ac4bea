"""
Unit tests for the dynamic-regret diagnostics
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.config import RegretConfig
from app.errors import ConfigError
from app.regret import (
    TrackingToy,
    check_bound,
    compute_constants,
    lemma1_per_round_check,
    loglog_slope,
    regret_check,
    run_convex_tracking,
    sqrt_schedule,
)


class TestTrackingToy:
    """Test cases for the convex tracking objective"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.toy = TrackingToy.from_config(RegretConfig())

    def test_comparator_is_minimizer(self):
        """Test the comparator zeroes the gradient when it lies inside the box"""
        eta_star = self.toy.comparator(1)
        np.testing.assert_allclose(eta_star, [1.2])
        np.testing.assert_allclose(self.toy.gradient(eta_star, 1), [0.0], atol=1e-15)
        assert self.toy.objective(eta_star, 1) == pytest.approx(0.0, abs=1e-30)

    def test_comparator_is_projected(self):
        """Test a target outside the reachable box is clipped to the radius"""
        toy = TrackingToy.from_config(RegretConfig(target=5.0))
        np.testing.assert_array_equal(toy.comparator(1), [2.0])

    def test_gradient_matches_finite_differences(self, numeric_gradient):
        """Test the analytic gradient against central differences"""
        toy = TrackingToy(np.array([0.5, 2.0]), 1.5, np.array([0.3, -0.2]), np.zeros(2), 2.0)
        eta = np.array([0.7, -1.1])
        numeric = numeric_gradient(lambda e: toy.objective(e, 1), eta.copy())
        np.testing.assert_allclose(toy.gradient(eta, 1), numeric, rtol=1e-6)

    def test_translate_shift(self):
        """Test the translate shift carries the drift into eta and projects"""
        toy = TrackingToy.from_config(RegretConfig(drift=0.1, shift="translate"))
        np.testing.assert_allclose(toy.apply_shift(np.array([1.0])), [1.2])
        np.testing.assert_array_equal(toy.apply_shift(np.array([1.95])), [2.0])
        np.testing.assert_allclose(toy.target_at(3), [0.8])

    def test_divergence_is_kl(self):
        """Test the Bregman divergence equals S (eta - eta')^2 / 2"""
        assert self.toy.divergence(np.array([2.0]), np.array([-2.0])) == pytest.approx(0.5 * 16.0 / 2.0)

    def test_unknown_shift(self):
        """Test an unknown shift name is rejected"""
        with pytest.raises(ConfigError):
            TrackingToy(np.ones(1), 1.0, np.zeros(1), np.zeros(1), 1.0, shift="rotate")


class TestConstants:
    """Test cases for the bound constants"""

    def test_divergence_diameter(self):
        """Test D_max is the divergence between opposite corners of the box"""
        one = compute_constants(TrackingToy.from_config(RegretConfig()), 10, 21)
        two = compute_constants(TrackingToy.from_config(RegretConfig(dim=2)), 10, 21)
        assert one.d_max == pytest.approx(4.0)
        assert two.d_max == pytest.approx(8.0)
        assert one.m_psi == pytest.approx(0.5)
        assert one.sigma == 0.5

    def test_gradient_bound(self):
        """Test G_J bounds every gradient norm on the grid"""
        toy = TrackingToy.from_config(RegretConfig())
        constants = compute_constants(toy, 10, 41)
        assert constants.g_j == pytest.approx(0.5 * (0.5 * 2.0 + 0.6))
        for eta in np.linspace(-2, 2, 41):
            assert np.linalg.norm(toy.gradient(np.array([eta]), 1)) <= constants.g_j + 1e-12

    def test_identity_shift_has_no_distortion(self):
        """Test the identity shift gives zero Delta every round"""
        constants = compute_constants(TrackingToy.from_config(RegretConfig()), 25, 21)
        np.testing.assert_array_equal(constants.delta_phi, np.zeros(25))

    def test_translate_distortion_is_non_negative(self):
        """Test clipped translation never gives a negative Delta"""
        toy = TrackingToy.from_config(RegretConfig(drift=0.05, shift="translate"))
        constants = compute_constants(toy, 5, 21)
        assert np.all(constants.delta_phi >= 0.0)


class TestTrackingRuns:
    """Test cases for regret runs and both inequalities"""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bound_and_per_round_inequality_hold(self, seed):
        """Test the cumulative bound and the per-round inequality on a static target"""
        result = regret_check(RegretConfig(rounds=1000), seed=seed)
        assert result["bound_holds"]
        assert result["lemma_holds"]
        assert result["min_margin"] >= -1e-9

    def test_regret_is_sublinear(self):
        """Test average regret shrinks and the log-log slope stays below one"""
        records = regret_check(RegretConfig(rounds=1000), seed=0)["records"]
        assert records[-1].regret / 1000 < records[99].regret / 100
        slope = loglog_slope(records)
        assert 0.0 <= slope < 1.0

    def test_cumulative_regret_is_monotone(self):
        """Test per-round regret against the per-round minimizer is never negative"""
        records = regret_check(RegretConfig(rounds=200), seed=1)["records"]
        gaps = np.array([r.j_tilde - r.j_star for r in records])
        assert np.all(gaps >= 0.0)
        assert np.all(np.diff([r.regret for r in records]) >= 0.0)

    def test_start_at_optimum_stays(self):
        """Test starting at the minimizer of a static target gives zero regret"""
        toy = TrackingToy.from_config(RegretConfig())
        records = run_convex_tracking(toy, 50, sqrt_schedule(0.5), init=1.2, grid_points=21)
        assert records[-1].regret == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(ConfigError):
            loglog_slope(records)

    def test_large_steps_keep_the_bound(self):
        """Test the bound still holds with steps far beyond the curvature scale"""
        result = regret_check(RegretConfig(rounds=300, step_scale=20.0), seed=2)
        assert result["bound_holds"] and result["lemma_holds"]

    def test_drifting_target(self):
        """Test a moving target with the translate shift keeps both inequalities"""
        config = RegretConfig(rounds=400, drift=0.001, shift="translate", dim=2)
        result = regret_check(config, seed=0)
        assert result["bound_holds"] and result["lemma_holds"]

    def test_static_target_has_no_comparator_drift(self):
        """Test the identity shift on a static target records zero drift"""
        records = regret_check(RegretConfig(rounds=30, grid_points=21), seed=0)["records"]
        assert all(r.drift == 0.0 for r in records)

    def test_seeded_start(self):
        """Test the seeded start is reproducible"""
        a = regret_check(RegretConfig(rounds=20, grid_points=21), seed=7)["final_regret"]
        b = regret_check(RegretConfig(rounds=20, grid_points=21), seed=7)["final_regret"]
        assert a == b

    def test_check_bound_reports_violation(self):
        """Test a record whose regret exceeds its bound is reported"""
        toy = TrackingToy.from_config(RegretConfig())
        records = run_convex_tracking(toy, 5, sqrt_schedule(0.5), init=-2.0, grid_points=21)
        records[2].regret = records[2].bound + 1.0
        report = check_bound(records)
        assert not report.all_hold
        assert list(report.holds) == [True, True, False, True, True]

    def test_per_round_check_shape(self):
        """Test the per-round check returns one flag per round"""
        toy = TrackingToy.from_config(RegretConfig())
        constants = compute_constants(toy, 40, 21)
        records = run_convex_tracking(toy, 40, sqrt_schedule(0.5), constants, seed=0)
        holds = lemma1_per_round_check(records, constants)
        assert holds.shape == (40,) and holds.all()

    def test_invalid_schedule(self):
        """Test a non-positive step scale is rejected"""
        with pytest.raises(ConfigError):
            sqrt_schedule(0.0)
