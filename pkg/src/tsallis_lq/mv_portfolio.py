"""Infinite-horizon mean-variance portfolio selection as a scalar LQ problem.

Wealth follows ``x+ = r x + P u`` with ``P = e - r`` the excess-return row.
The Lagrangian relaxation of the target constraint ``E[x_t] = d`` turns the
variance objective into tracking of the level ``d - lambda``; measuring
wealth relative to a reference path that starts there and compounds at the
risk-free rate (``rho_t = (d - lambda) r^t``) leaves the dynamics
``y+ = r y + P u`` unchanged, which is exactly the LQ model with ``Q = 1``,
``A = r``, ``B = E[P]`` and one unit-row noise channel per asset.
"""
from dataclasses import dataclass

import numpy as np

from ._io import atomic_open, cell
from ._validation import as_matrix, as_vector, check_pd, check_psd, check_random_state, psd_sqrt
from .lq_model import LqModel, NoiseChannel

#: Action penalty used for the reproduction runs.  Entries in [0, 0.1],
#: symmetric and diagonally dominant (hence positive definite).
BENCHMARK_R = np.array([[0.08, 0.02, 0.01],
                    [0.02, 0.06, 0.03],
                    [0.01, 0.03, 0.09]])


@dataclass(frozen=True)
class MarketSpec:
    """Risk-free gross return ``r``, mean excess returns and their covariance.

    A scalar ``excess_cov`` means independent assets with that common
    variance (``W I``).
    """

    riskfree: float
    mean_excess: np.ndarray
    excess_cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean_excess, "mean_excess")
        k = mean.shape[0]
        cov = np.asarray(self.excess_cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(k)
        cov = check_psd(as_matrix(cov, "excess_cov", (k, k)), "excess_cov")
        object.__setattr__(self, "riskfree", float(self.riskfree))
        object.__setattr__(self, "mean_excess", mean)
        object.__setattr__(self, "excess_cov", cov)

    @property
    def k(self):
        return self.mean_excess.shape[0]


NOISE_MODES = ("per_asset", "aggregate")


@dataclass(frozen=True)
class MvProblem:
    """Market, action penalty, target ``d`` and multiplier ``lam``.

    ``noise_mode="per_asset"`` gives one unit-row channel per asset with the
    market covariance.  ``"aggregate"`` uses a single aggregate channel
    ``D = (1, ..., 1)`` whose variance is the mean of the covariance diagonal,
    so a scalar ``W`` is carried through unchanged.
    """

    market: MarketSpec
    R: np.ndarray
    target: float
    lam: float = 0.0
    gamma: float = 0.9
    tau: float = 0.0
    q: float = 1.0
    noise_mode: str = "per_asset"

    def __post_init__(self):
        k = self.market.k
        object.__setattr__(self, "R", check_pd(as_matrix(self.R, "R", (k, k)), "R"))
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")

    @property
    def level(self):
        """Tracking level ``d - lambda`` at time zero."""
        return self.target - self.lam


def benchmark_problem(target=1.0, lam=0.0, gamma=0.9, tau=0.7, q=0.8, noise_mode="per_asset"):
    """Three-asset setup: r = 1.057, E[P] = (0.21, 0.28, 0.22), W = 0.99."""
    market = MarketSpec(1.057, [0.21, 0.28, 0.22], 0.99)
    return MvProblem(market, BENCHMARK_R, target, lam, gamma, tau, q, noise_mode)


def channel_rows(problem):
    """``(D, cov)``: one row of ``D`` per noise channel and the channel covariance."""
    mk = problem.market
    if problem.noise_mode == "aggregate":
        return np.ones((1, mk.k)), np.array([[np.mean(np.diag(mk.excess_cov))]])
    return np.eye(mk.k), mk.excess_cov


def to_lq(problem):
    mk = problem.market
    D, cov = channel_rows(problem)
    channels = tuple(NoiseChannel(np.zeros((1, 1)), D[j:j + 1]) for j in range(D.shape[0]))
    return LqModel(A=[[mk.riskfree]], B=mk.mean_excess[None, :], Q=[[1.0]], R=problem.R,
                   gamma=problem.gamma, channels=channels, channel_cov=cov,
                   tau=problem.tau, q=problem.q)


def reference_level(problem, t=0):
    return problem.level * problem.market.riskfree ** t


def shift_state(x, problem, t=0):
    """Wealth -> tracking error ``y = x - (d - lambda) r^t``."""
    return np.asarray(x, dtype=float) - reference_level(problem, t)


def unshift_state(y, problem, t=0):
    return np.asarray(y, dtype=float) + reference_level(problem, t)


def wealth_step(problem, x, u, noise):
    """Wealth recursion ``x+ = r x + (E[P] + shock) u``, one row per path.

    ``noise`` holds one shock per channel (per asset, or a single common
    shock in aggregate mode).  Returns a 1-d array of next wealths.
    """
    mk = problem.market
    D, _ = channel_rows(problem)
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    out = x * mk.riskfree + u @ mk.mean_excess[:, None]
    for j in range(D.shape[0]):
        out = out + u @ D[j:j + 1].T * noise[:, j:j + 1]
    return out[:, 0]


def draw_excess_noise(problem, rng, size):
    """Zero-mean Gaussian channel shocks, shape ``(size, channels)``."""
    _, cov = channel_rows(problem)
    return rng.standard_normal((size, cov.shape[0])) @ psd_sqrt(cov)


@dataclass
class WealthStats:
    mean: np.ndarray
    var: np.ndarray
    stderr: np.ndarray
    objective: float
    objective_stderr: float
    mv_objective: float
    mv_objective_stderr: float

    def to_csv(self, path):
        with atomic_open(path) as fh:
            fh.write("t,mean,var,stderr\n")
            for t, row in enumerate(zip(self.mean, self.var, self.stderr)):
                fh.write(",".join([str(t)] + [cell(v) for v in row]) + "\n")


def simulate_wealth(problem, policy, x0, horizon, paths, generator=None, return_paths=False):
    """Monte-Carlo wealth paths under a tracking-error feedback policy.

    Each period the wealth is shifted to the tracking error, the policy picks
    the allocation, and wealth moves by the market recursion.  The discounted
    objective includes the sampled entropy cost ``tau/(2-q)(log_q pi - 1)``;
    ``mv_objective`` is the unregularised tracking-plus-penalty part.
    """
    if horizon < 1 or paths < 1:
        raise ValueError("horizon and paths must be at least 1")
    rng = check_random_state(generator)
    g, tau, q = problem.gamma, problem.tau, problem.q
    x = np.full(paths, float(x0))
    wealth = [x.copy()]
    total = np.zeros(paths)
    mv_total = np.zeros(paths)
    for t in range(horizon):
        y = shift_state(x, problem, t)
        u = policy.sample(y[:, None], rng)
        stage = y ** 2 + np.einsum("ni,ij,nj->n", u, problem.R, u)
        mv_total += g ** t * stage
        if tau:
            stage = stage + tau / (2.0 - q) * (policy.log_q_density(y[:, None], u) - 1.0)
        total += g ** t * stage
        x = wealth_step(problem, x, u, draw_excess_noise(problem, rng, paths))
        wealth.append(x.copy())
    W = np.array(wealth)
    stats = WealthStats(W.mean(axis=1), W.var(axis=1), W.std(axis=1) / np.sqrt(paths),
                        float(total.mean()), float(total.std() / np.sqrt(paths)),
                        float(mv_total.mean()), float(mv_total.std() / np.sqrt(paths)))
    return (stats, W) if return_paths else stats


def horizon_for(gamma, tail=1e-8):
    """Smallest ``T`` with ``gamma**T < tail``."""
    return int(np.ceil(np.log(tail) / np.log(gamma))) + 1
