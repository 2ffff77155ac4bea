"""
Regret diagnostics for dynamic mirror descent on convex tracking toys.

The toy objective lives on natural parameters eta of a fixed-covariance
Gaussian (mean mu = S eta, S diagonal):

    J_t(eta) = 1/2 (S eta - c_t)' Q (S eta - c_t),   eta in [-R, R]^d

The log-partition psi(eta) = 1/2 eta' S eta makes the Bregman divergence the
equal-covariance Gaussian KL, so every step reuses `dmd_step` and
`kl_gaussian` from the planner. Rounds play the shifted iterate eta_tilde_t
against the per-round minimizer eta*_t; the cumulative regret is checked
against the dynamic-regret bound

    D_max / alpha_{T+1} + (4 M / alpha_T) W + (G_J^2 / 2 sigma) sum alpha_t
    + sum Delta_t / alpha_t

at every prefix, and the per-round inequality it is summed from is checked
round by round.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .config import RegretConfig
from .dmd_mpc import dmd_step, kl_gaussian
from .errors import ConfigError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-9

StepSchedule = Callable[[int], float]


@dataclass
class TrackingToy:
    sigma: np.ndarray  # diagonal control covariance S
    curvature: float  # Q = curvature * I
    target: np.ndarray  # c_1
    drift: np.ndarray  # c_{t+1} - c_t
    radius: float
    shift: str = "identity"

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.drift = np.asarray(self.drift, dtype=np.float64)
        if self.shift not in ("identity", "translate"):
            raise ConfigError(f"unknown regret shift '{self.shift}'")

    @classmethod
    def from_config(cls, config: RegretConfig) -> "TrackingToy":
        d = config.dim
        return cls(np.full(d, config.sigma), config.curvature, np.full(d, config.target),
                   np.full(d, config.drift), config.radius, config.shift)

    @property
    def dim(self) -> int:
        return self.sigma.size

    def target_at(self, t: int) -> np.ndarray:
        return self.target + (t - 1) * self.drift

    def objective(self, eta: np.ndarray, t: int) -> float:
        err = self.sigma * eta - self.target_at(t)
        return 0.5 * self.curvature * float(err @ err)

    def gradient(self, eta: np.ndarray, t: int) -> np.ndarray:
        """grad_eta J_t = S Q (S eta - c_t)"""
        return self.sigma * self.curvature * (self.sigma * eta - self.target_at(t))

    def project(self, eta: np.ndarray) -> np.ndarray:
        # Euclidean clipping is the Bregman projection for a diagonal S
        return np.clip(eta, -self.radius, self.radius)

    def apply_shift(self, eta: np.ndarray) -> np.ndarray:
        """Phi_t: identity, or the target drift carried over to eta and projected"""
        if self.shift == "identity":
            return np.array(eta, dtype=np.float64)
        return self.project(eta + self.drift / self.sigma)

    def comparator(self, t: int) -> np.ndarray:
        return self.project(self.target_at(t) / self.sigma)

    def divergence(self, eta: np.ndarray, eta_ref: np.ndarray) -> float:
        """D_psi(eta || eta_ref), the KL between the two Gaussians"""
        return kl_gaussian(self.sigma * eta, self.sigma * eta_ref, self.sigma)


@dataclass
class RegretRecord:
    t: int
    j_tilde: float
    j_star: float
    drift: float  # ||eta*_{t+1} - Phi_t(eta*_t)||
    alpha: float
    regret: float  # cumulative
    bound: float  # cumulative
    # per-round terms for the per-round inequality
    d_before: float = 0.0  # D(eta*_t || eta_tilde_t)
    d_after: float = 0.0  # D(eta*_{t+1} || eta_tilde_{t+1})


@dataclass
class BoundConstants:
    g_j: float
    m_psi: float
    d_max: float
    delta_phi: np.ndarray  # per round
    sigma: float  # strong-convexity modulus of psi
    radius: float


@dataclass
class BoundReport:
    holds: np.ndarray
    margins: np.ndarray  # bound - regret, per prefix

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.holds))

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))


def sqrt_schedule(scale: float) -> StepSchedule:
    """alpha_t = scale / sqrt(t)"""
    if scale <= 0.0:
        raise ConfigError("step scale must be positive")
    return lambda t: scale / np.sqrt(t)


def _grid(toy: TrackingToy, points: int) -> np.ndarray:
    return np.linspace(-toy.radius, toy.radius, points)


def compute_constants(toy: TrackingToy, rounds: int, grid_points: int = 200) -> BoundConstants:
    """
    Bound constants by dense grid evaluation over the box. D and the shift
    act coordinate-wise, so their pairwise maxima are taken per coordinate
    and summed.
    """
    axis = _grid(toy, grid_points)
    mesh = np.stack(np.meshgrid(*([axis] * toy.dim), indexing="ij"), axis=-1).reshape(-1, toy.dim)

    g_j = 0.0
    for t in range(1, rounds + 2):
        grads = toy.sigma * toy.curvature * (mesh * toy.sigma - toy.target_at(t))
        g_j = max(g_j, float(np.max(np.linalg.norm(grads, axis=1))))
        if not np.any(toy.drift):
            break

    m_psi = 0.5 * float(np.max(np.linalg.norm(mesh * toy.sigma, axis=1)))
    d_max = toy.divergence(np.full(toy.dim, axis[-1]), np.full(toy.dim, axis[0]))

    delta = 0.0
    for i in range(toy.dim):
        shifted = axis if toy.shift == "identity" else np.clip(
            axis + toy.drift[i] / toy.sigma[i], -toy.radius, toy.radius)
        before = toy.sigma[i] * (axis[:, None] - axis[None, :]) ** 2 / 2.0
        after = toy.sigma[i] * (shifted[:, None] - shifted[None, :]) ** 2 / 2.0
        delta += float(np.max(after - before))
    return BoundConstants(g_j, m_psi, d_max, np.full(rounds, max(delta, 0.0)),
                          float(np.min(toy.sigma)), toy.radius)


def run_convex_tracking(toy: TrackingToy, rounds: int, schedule: StepSchedule,
                        constants: Optional[BoundConstants] = None, init: Optional[np.ndarray] = None,
                        seed: SeedLike = None, grid_points: int = 200) -> List[RegretRecord]:
    """
    Play eta_tilde_t, take the mirror step against grad J_t, project, shift.
    The starting point is `init`, or a seeded uniform draw from the box.
    """
    if rounds < 1:
        raise ConfigError("rounds must be positive")
    constants = constants or compute_constants(toy, rounds, grid_points)
    if init is None:
        eta_tilde = as_generator(seed).uniform(-toy.radius, toy.radius, size=toy.dim)
    else:
        eta_tilde = toy.project(np.broadcast_to(np.asarray(init, dtype=np.float64), (toy.dim,)).copy())

    scale = constants.g_j ** 2 / (2.0 * constants.sigma)
    records: List[RegretRecord] = []
    regret = drift_total = alpha_sum = delta_sum = 0.0
    for t in range(1, rounds + 1):
        alpha = schedule(t)
        comparator = toy.comparator(t)
        next_comparator = toy.comparator(t + 1)
        j_tilde = toy.objective(eta_tilde, t)
        j_star = toy.objective(comparator, t)

        mean = dmd_step(toy.sigma * eta_tilde, toy.gradient(eta_tilde, t), alpha)
        eta_next = toy.apply_shift(toy.project(mean / toy.sigma))

        drift = float(np.linalg.norm(next_comparator - toy.apply_shift(comparator)))
        regret += j_tilde - j_star
        drift_total += drift
        alpha_sum += alpha
        delta_sum += constants.delta_phi[t - 1] / alpha
        bound = (constants.d_max / schedule(t + 1) + 4.0 * constants.m_psi / alpha * drift_total
                 + scale * alpha_sum + delta_sum)
        records.append(RegretRecord(
            t, j_tilde, j_star, drift, alpha, regret, bound,
            toy.divergence(comparator, eta_tilde), toy.divergence(next_comparator, eta_next),
        ))
        eta_tilde = eta_next
    logger.info(f"Tracking run: {rounds} rounds, final regret {regret:.5f}, bound {records[-1].bound:.3f}")
    return records


def check_bound(records: List[RegretRecord], constants: Optional[BoundConstants] = None,
                slack: float = BOUND_SLACK) -> BoundReport:
    """Cumulative regret against the cumulative bound at every prefix"""
    regret = np.array([r.regret for r in records])
    bound = np.array([r.bound for r in records])
    margins = bound - regret
    report = BoundReport(margins >= -slack, margins)
    if not report.all_hold:
        first = int(np.argmin(report.holds)) + 1
        logger.warning(f"regret bound violated first at t={first}, margin {margins[first - 1]:.3e}")
    return report


def lemma1_per_round_check(records: List[RegretRecord], constants: BoundConstants,
                           slack: float = BOUND_SLACK) -> np.ndarray:
    """
    J(eta_tilde_t) - J(eta*_t) <= [D_t - D_{t+1}] / alpha_t + Delta_t / alpha_t
        + (4 M / alpha_t) drift_t + alpha_t G_J^2 / (2 sigma)
    """
    holds = np.empty(len(records), dtype=bool)
    for i, r in enumerate(records):
        rhs = ((r.d_before - r.d_after) / r.alpha + constants.delta_phi[i] / r.alpha
               + 4.0 * constants.m_psi / r.alpha * r.drift
               + r.alpha * constants.g_j ** 2 / (2.0 * constants.sigma))
        holds[i] = r.j_tilde - r.j_star <= rhs + slack * max(1.0, abs(rhs))
    return holds


def loglog_slope(records: List[RegretRecord], burn_in: int = 1) -> float:
    """Least-squares slope of log regret against log t from `burn_in` on"""
    t = np.array([r.t for r in records[burn_in - 1:]], dtype=np.float64)
    regret = np.array([r.regret for r in records[burn_in - 1:]])
    keep = regret > 0.0
    if np.sum(keep) < 2:
        raise ConfigError("need at least two positive regret values for a slope")
    return float(np.polyfit(np.log(t[keep]), np.log(regret[keep]), 1)[0])


def regret_check(config: RegretConfig, seed: SeedLike = None) -> dict:
    """Run the configured toy and summarize both checks"""
    toy = TrackingToy.from_config(config)
    constants = compute_constants(toy, config.rounds, config.grid_points)
    records = run_convex_tracking(toy, config.rounds, sqrt_schedule(config.step_scale), constants,
                                  config.init, seed, config.grid_points)
    report = check_bound(records, constants)
    lemma = lemma1_per_round_check(records, constants)
    return {
        "records": records,
        "constants": constants,
        "bound_holds": report.all_hold,
        "min_margin": report.min_margin,
        "lemma_holds": bool(np.all(lemma)),
        "final_regret": records[-1].regret,
        "final_bound": records[-1].bound,
    }
