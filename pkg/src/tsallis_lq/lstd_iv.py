"""Data-driven policy iteration with instrumental-variable LSTD.

Each transition ``(x, u) -> x+`` with a follow-up action ``u+`` gives one
error-in-variables regression row

    b = Tr(H Z) + offset,   a = [vec_s(Z - gamma Z+); 1 - gamma],   g = [vec_s(Z); 1]

where ``Z = (x,u)(x,u)^T`` and ``Z+ = (x+,u+)(x+,u+)^T``.  The final
coordinate is an intercept that absorbs every additive constant, so the
learned gain depends only on the quadratic block.  ``g`` is the instrument.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_open, cell
from ._validation import check_random_state
from .dp_core import (
    PolicyEvaluationError,
    ThetaMatrix,
    expected_objective,
    normalized_gain_error,
    policy_evaluate,
)
from .lq_model import QGaussianPolicy, step
from .qcalc import alpha, policy_entropy_offset

logger = logging.getLogger(__name__)

EXPLORATION_LAWS = ("q_gaussian_clipped", "uniform_ball")
DIVERGENCE_NORM = 1e6


class PersistentExcitationError(np.linalg.LinAlgError):
    pass


def _triu(d):
    iu = np.triu_indices(d)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, w


def vec_s(S, check=True):
    """Symmetric vectorisation: upper triangle row by row, off-diagonals times sqrt(2).

    Accepts a single matrix or a stack ``(N, d, d)``.
    """
    S = np.asarray(S, dtype=float)
    if check:
        asym = np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0)
        if asym > 1e-10 * max(1.0, np.max(np.abs(S), initial=0.0)):
            raise ValueError("vec_s requires a symmetric matrix")
    iu, w = _triu(S.shape[-1])
    return S[..., iu[0], iu[1]] * w


def unvec_s(v):
    v = np.asarray(v, dtype=float)
    d = int(round((np.sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    if d * (d + 1) // 2 != v.shape[-1]:
        raise ValueError(f"length {v.shape[-1]} is not triangular")
    iu, w = _triu(d)
    S = np.zeros(v.shape[:-1] + (d, d))
    S[..., iu[0], iu[1]] = v / w
    S[..., iu[1], iu[0]] = v / w
    return S


@dataclass(frozen=True)
class PeConfig:
    """Persistent-excitation data settings: ``M`` trajectories of length ``T``."""

    M: int = 1200
    T: int = 1
    r_nu: float = 0.8
    r_x: float = 1.0
    exploration_law: str = "q_gaussian_clipped"

    def __post_init__(self):
        if self.M < 1 or self.T < 1:
            raise ValueError("M and T must be positive")
        if not (self.r_nu > 0 and self.r_x > 0):
            raise ValueError("r_nu and r_x must be positive")
        if self.exploration_law not in EXPLORATION_LAWS:
            raise ValueError(f"exploration_law must be one of {EXPLORATION_LAWS}")

    @property
    def N(self):
        return self.M * self.T


@dataclass
class SampleBatch:
    """Stacked moment samples ``Z_i``, ``X_{i+}`` and ``Z_{i+}``."""

    Z: np.ndarray
    X_plus: np.ndarray
    Z_plus: np.ndarray

    @classmethod
    def from_transitions(cls, x, u, x_next, u_next):
        z = np.hstack([x, u])
        zn = np.hstack([x_next, u_next])
        return cls(np.einsum("ni,nj->nij", z, z),
                   np.einsum("ni,nj->nij", x_next, x_next),
                   np.einsum("ni,nj->nij", zn, zn))

    def __len__(self):
        return self.Z.shape[0]

    def concat(self, other):
        return SampleBatch(np.concatenate([self.Z, other.Z]),
                           np.concatenate([self.X_plus, other.X_plus]),
                           np.concatenate([self.Z_plus, other.Z_plus]))


@dataclass
class RegressionRows:
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray

    def __len__(self):
        return self.b.shape[0]

    def __getitem__(self, idx):
        return RegressionRows(self.a[idx], self.b[idx], self.g[idx])


def uniform_ball(rng, size, dim, radius):
    direction = rng.standard_normal((size, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.uniform(size=(size, 1)) ** (1.0 / dim))


def exploration_noise(policy, pe, rng, size):
    """Exploration draws ``nu`` confined to the ``r_nu`` ball.

    The q-Gaussian law is resampled until every draw lies in the ball; a
    policy without exploration covariance falls back to the uniform law.
    """
    n = policy.K.shape[0]
    if pe.exploration_law == "uniform_ball" or policy.deterministic:
        return uniform_ball(rng, size, n, pe.r_nu)
    law = policy.noise_law()
    out = law.rvs(size=size, random_state=rng)
    bad = np.linalg.norm(out, axis=1) > pe.r_nu
    for _ in range(200):
        if not bad.any():
            return out
        out[bad] = law.rvs(size=int(bad.sum()), random_state=rng)
        bad = np.linalg.norm(out, axis=1) > pe.r_nu
    logger.warning("exploration covariance too wide for r_nu=%g; %d draws taken uniformly",
                   pe.r_nu, int(bad.sum()))
    out[bad] = uniform_ball(rng, int(bad.sum()), n, pe.r_nu)
    return out


def generate_rollouts(model, policy, pe, generator=None, x0=None):
    """Run ``M`` trajectories for ``T`` steps under ``u = -K x + nu``.

    Returns the sample batch (trajectory-major, time-minor) and the final
    states, which online mode feeds back in as ``x0``.
    """
    rng = check_random_state(generator)
    if x0 is None:
        x0 = uniform_ball(rng, pe.M, model.m, pe.r_x)
    x = np.array(x0, dtype=float).reshape(pe.M, model.m)
    u = -x @ policy.K.T + exploration_noise(policy, pe, rng, pe.M)
    xs, us, xns, uns = [], [], [], []
    for _ in range(pe.T):
        xn = step(model, x, u, rng)
        un = -xn @ policy.K.T + exploration_noise(policy, pe, rng, pe.M)
        xs.append(x)
        us.append(u)
        xns.append(xn)
        uns.append(un)
        x, u = xn, un
    order = lambda seq: np.stack(seq, axis=1).reshape(pe.N, -1)  # noqa: E731
    batch = SampleBatch.from_transitions(order(xs), order(us), order(xns), order(uns))
    return batch, x


def make_rows(batch, model, policy):
    """IV regression rows for a batch; the intercept column absorbs all constants.

    A deterministic policy has no finite entropy, so its offset is taken
    as zero (it would only move the intercept).
    """
    H = model.H
    offset = 0.0
    if model.tau and not policy.deterministic:
        offset = policy_entropy_offset(policy.Sigma, policy.q, model.tau)
    N = len(batch)
    gamma = model.gamma
    a = np.hstack([vec_s(batch.Z - gamma * batch.Z_plus, check=False),
                   np.full((N, 1), 1.0 - gamma)])
    g = np.hstack([vec_s(batch.Z, check=False), np.ones((N, 1))])
    b = np.einsum("ij,nij->n", H, batch.Z) + offset
    return RegressionRows(a, b, g)


def theta_from_coef(coef, m):
    return ThetaMatrix(unvec_s(coef[:-1]), m, float(coef[-1]))


def iv_batch_coef(rows):
    G = rows.g.T @ rows.a
    rank = np.linalg.matrix_rank(G)
    if rank < G.shape[0]:
        raise PersistentExcitationError(
            f"instrument matrix has rank {rank} < {G.shape[0]}: data not persistently exciting")
    return np.linalg.solve(G, rows.g.T @ rows.b)


def iv_batch(rows, m):
    """Batch instrumental-variable estimate of the Q-function parameters."""
    return theta_from_coef(iv_batch_coef(rows), m)


@dataclass
class IvEstimatorState:
    theta_hat: np.ndarray
    S: np.ndarray

    @classmethod
    def initial(cls, dim, beta0, fill=0.0):
        return cls(np.full(dim, float(fill)), float(beta0) * np.eye(dim))

    def copy(self):
        return IvEstimatorState(self.theta_hat.copy(), self.S.copy())


def iv_recursive_update(state, a, b, g, eps=1e-14):
    """One recursive IV step; returns a new state.

    Raises ``ZeroDivisionError`` when ``1 + a^T S g`` is numerically zero.
    """
    Sg = state.S @ g
    denom = 1.0 + a @ Sg
    if abs(denom) < eps:
        raise ZeroDivisionError(f"recursive IV update rejected: 1 + a'Sg = {denom:.3e}")
    L = Sg / denom
    theta = state.theta_hat + L * (b - a @ state.theta_hat)
    S = state.S - np.outer(L, a @ state.S)
    return IvEstimatorState(theta, S)


def iv_recursive_fit(state, rows):
    """Apply :func:`iv_recursive_update` over ``rows`` in order (in place)."""
    theta, S = state.theta_hat.copy(), state.S.copy()
    rejected = 0
    for a, b, g in zip(rows.a, rows.b, rows.g):
        Sg = S @ g
        denom = 1.0 + a @ Sg
        if abs(denom) < 1e-14:
            rejected += 1
            continue
        L = Sg / denom
        theta += L * (b - a @ theta)
        S -= np.outer(L, a @ S)
    if rejected:
        logger.warning("%d recursive IV updates rejected (vanishing denominator)", rejected)
    state.theta_hat, state.S = theta, S
    return state


def policy_from_coef(coef, m, tau, q, floor=1e-8):
    """Greedy q-Gaussian policy of an estimated Q-function.

    The covariance ``tau alpha Theta_uu^-1`` is projected onto the PD cone by
    flooring eigenvalues at ``floor``.
    """
    Theta = unvec_s(coef[:-1])
    Tuu, Tux = Theta[m:, m:], Theta[m:, :m]
    K = np.linalg.solve(Tuu, Tux)
    n = Tuu.shape[0]
    if tau == 0:
        Sigma = np.zeros((n, n))
    else:
        Tinv = np.linalg.inv(Tuu)
        w, V = np.linalg.eigh(tau * alpha(q, n) * 0.5 * (Tinv + Tinv.T))
        Sigma = (V * np.maximum(w, floor)) @ V.T
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(Sigma))):
        raise np.linalg.LinAlgError("non-finite policy from estimate")
    return QGaussianPolicy(K, Sigma, q)


@dataclass
class ApproxPIHistory:
    errors: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    theta_hat: np.ndarray = None

    def rows(self, seed=None, mode="offline", q=None, gamma=None, tau=None, label=""):
        for i, (e, j) in enumerate(zip(self.errors, self.objectives)):
            yield [i, e, j, seed, mode, q, gamma, tau, label]


HISTORY_COLUMNS = ["iteration", "normalized_gain_error", "objective_estimate", "seed", "mode",
                   "q", "gamma", "tau", "label"]


def write_history_csv(path, entries):
    """``entries`` is an iterable of row lists in :data:`HISTORY_COLUMNS` order."""
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in entries:
            w.writerow([cell(v) for v in row])


def approximate_pi(model, pe, iterations, mode="offline", beta0=20.0, theta0_fill=0.8,
                   generator=None, K_ref=None, carry_covariance=True, sampler=None,
                   initial_state=None):
    """Approximate policy iteration driven by sampled transitions.

    Per outer iteration the current estimate induces ``K_t`` and ``Sigma_t``,
    ``pe.N`` fresh transitions are generated under that policy and fed
    through the recursive IV estimator.  ``(theta_hat, S)`` carry over
    between iterations unless ``carry_covariance`` is false, in which case
    ``S`` restarts at ``beta0 I`` and ``theta_hat`` acts as the prior.

    ``model`` supplies the simulator and the known stage costs; it is used
    for nothing else except scoring the gain against ``K_ref`` and the
    objective column.  ``sampler(policy, rng, carry) -> (batch, carry)``
    replaces the simulator when given.
    """
    if mode not in ("offline", "online"):
        raise ValueError("mode must be 'offline' or 'online'")
    rng = check_random_state(generator)
    m, n = model.m, model.n
    dim = (m + n) * (m + n + 1) // 2 + 1
    state = initial_state.copy() if initial_state is not None else \
        IvEstimatorState.initial(dim, beta0, theta0_fill)
    hist = ApproxPIHistory()
    carry = None
    policy = None
    for t in range(iterations + 1):
        flagged = False
        try:
            candidate = policy_from_coef(state.theta_hat, m, model.tau, model.q)
        except (np.linalg.LinAlgError, ValueError):
            candidate = None
        if candidate is None:
            if policy is None:
                raise ValueError("initial estimate does not induce a valid policy")
            flagged = True
        else:
            policy = candidate
        _record(hist, model, policy, K_ref, pe.r_x, flagged)
        if t == iterations:
            break
        if not carry_covariance:
            state.S = beta0 * np.eye(dim)
        x0 = carry if mode == "online" else None
        if sampler is not None:
            batch, new_carry = sampler(policy, rng, x0)
        else:
            batch, new_carry = generate_rollouts(model, policy, pe, rng, x0)
            if _diverged(batch):
                hist.flagged[-1] = True
                if len(hist.gains) > 1:
                    policy = QGaussianPolicy(hist.gains[-2], policy.Sigma, policy.q)
                    batch, new_carry = generate_rollouts(model, policy, pe, rng, None)
                if _diverged(batch):
                    # nothing usable this round; keep the estimate and restart states
                    logger.warning("iteration %d: rollouts diverged, estimator update skipped", t)
                    carry = None
                    continue
        carry = new_carry
        iv_recursive_fit(state, make_rows(batch, model, policy))
    hist.theta_hat = state.theta_hat.copy()
    return hist


def _diverged(batch):
    return not np.all(np.isfinite(batch.X_plus)) or \
        np.max(np.abs(batch.X_plus)) > DIVERGENCE_NORM ** 2


def _record(hist, model, policy, K_ref, r_x, flagged):
    hist.gains.append(policy.K)
    hist.flagged.append(flagged)
    hist.errors.append(np.nan if K_ref is None else normalized_gain_error(policy.K, K_ref))
    try:
        value, _ = policy_evaluate(model, policy)
        hist.objectives.append(expected_objective(value, r_x))
    except PolicyEvaluationError:
        hist.objectives.append(np.nan)
