"""Quadratic Q-functions, exact policy evaluation and policy improvement."""
import csv
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_open, cell
from .exact_solver import QuadraticValue, q_blocks
from .lq_model import QGaussianPolicy, moment_lift, moment_push, ms_spectral_radius, value_transfer
from .qcalc import alpha, policy_entropy_offset


class PolicyEvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThetaMatrix:
    """Q-function ``Q(x, u) = (x,u)^T theta (x,u) + constant``."""

    theta: np.ndarray
    m: int
    constant: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if np.max(np.abs(theta - theta.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(theta))):
            raise ValueError("theta must be symmetric")
        object.__setattr__(self, "theta", 0.5 * (theta + theta.T))

    @property
    def xx(self):
        return self.theta[:self.m, :self.m]

    @property
    def xu(self):
        return self.theta[:self.m, self.m:]

    @property
    def ux(self):
        return self.theta[self.m:, :self.m]

    @property
    def uu(self):
        return self.theta[self.m:, self.m:]

    def trace_value(self, Z):
        """``Tr(theta Z) + constant`` for a joint second moment ``Z``."""
        return float(np.sum(self.theta * Z) + self.constant)


def theta_from_value(model, P, c=0.0, offset=0.0):
    """Q-function parameters induced by the value ``x^T P x + c``.

    ``offset`` is the per-stage entropy constant of the policy being evaluated.
    """
    theta = model.H + model.gamma * value_transfer(model, P)
    return ThetaMatrix(theta, model.m, offset + model.gamma * c)


def q_value(theta, x, u):
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)
    return float(z @ theta.theta @ z + theta.constant)


def _sym_index(d):
    iu = np.triu_indices(d)
    return iu


def _lyapunov_operator(model, K):
    """Matrix (in the upper-triangle basis) of ``P -> L^T G(P) L`` with ``L = [I; -K]``."""
    m = model.m
    L = np.vstack([np.eye(m), -K])
    iu = _sym_index(m)
    cols = []
    for i, j in zip(*iu):
        E = np.zeros((m, m))
        E[i, j] = E[j, i] = 1.0
        cols.append((L.T @ value_transfer(model, E) @ L)[iu])
    return np.array(cols).T


def evaluate_gain(model, K):
    """Solve ``P = Q + K^T R K + gamma L^T G(P) L`` directly."""
    m = model.m
    K = np.atleast_2d(np.asarray(K, dtype=float))
    rho = ms_spectral_radius(model, K)
    if not rho < 1.0 / model.gamma:
        raise PolicyEvaluationError(f"gain is not evaluable: spectral radius {rho:.4g} "
                                    f">= 1/gamma = {1 / model.gamma:.4g}")
    iu = _sym_index(m)
    rhs = (model.Q + K.T @ model.R @ K)[iu]
    p = np.linalg.solve(np.eye(len(rhs)) - model.gamma * _lyapunov_operator(model, K), rhs)
    P = np.zeros((m, m))
    P[iu] = p
    return P + P.T - np.diag(np.diag(P))


def policy_evaluate(model, policy):
    """Exact value and Q-function of a fixed q-Gaussian policy."""
    P = evaluate_gain(model, policy.K)
    _, _, _, Tuu = q_blocks(model, P)
    offset = policy_entropy_offset(policy.Sigma, policy.q, model.tau)
    c = (float(np.sum(policy.Sigma * Tuu)) + offset) / (1.0 - model.gamma)
    return QuadraticValue(P, c), theta_from_value(model, P, c, offset)


def improve_from_blocks(Tuu, Tux, tau, q):
    """Gain ``Tuu^-1 Tux`` and covariance ``tau alpha Tuu^-1``."""
    try:
        L = np.linalg.cholesky(Tuu)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Theta_uu is not positive definite") from exc
    K = np.linalg.solve(L.T, np.linalg.solve(L, Tux))
    if tau == 0:
        return K, np.zeros_like(Tuu)
    Tinv = np.linalg.inv(Tuu)
    return K, tau * alpha(q, Tuu.shape[0]) * 0.5 * (Tinv + Tinv.T)


def policy_improve(theta, model):
    K, Sigma = improve_from_blocks(theta.uu, theta.ux, model.tau, model.q)
    return QGaussianPolicy(K, Sigma, model.q)


def bellman_q(model, policy, theta, Z):
    """Q-function Bellman operator applied to ``theta`` at the joint moment ``Z``."""
    offset = policy_entropy_offset(policy.Sigma, policy.q, model.tau)
    Znext = moment_lift(moment_push(model, Z), policy)
    return float(np.sum(model.H * Z)) + offset + model.gamma * theta.trace_value(Znext)


def expected_objective(value, r_x=1.0):
    """``E[J(x0)]`` for ``x0 ~ N(0, r_x^2 I)``."""
    return float(r_x ** 2 * np.trace(value.P) + value.c)


def normalized_gain_error(K, K_ref):
    return float(np.linalg.norm(K - K_ref) / np.linalg.norm(K_ref))


@dataclass
class PolicyIterationHistory:
    gains: list = field(default_factory=list)
    covariances: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    aborted: str = None

    def to_csv(self, path):
        with atomic_open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "normalized_gain_error", "objective"])
            for i, (e, j) in enumerate(zip(self.errors, self.objectives)):
                w.writerow([i, cell(e), cell(j)])


def model_based_pi(model, K0, iters=50, K_ref=None, r_x=1.0, tol=0.0):
    """Alternate exact evaluation and improvement starting from gain ``K0``.

    Entry ``t`` of the history holds the policy before the ``t``-th
    improvement; the initial covariance is the one induced by ``K0``'s own
    Q-function.  Iteration stops early once the gain moves less than ``tol``.
    """
    hist = PolicyIterationHistory()
    K = np.atleast_2d(np.asarray(K0, dtype=float))
    try:
        P0 = evaluate_gain(model, K)
    except PolicyEvaluationError as exc:
        hist.aborted = str(exc)
        return hist
    _, _, _, Tuu = q_blocks(model, P0)
    _, Sigma = improve_from_blocks(Tuu, Tuu @ K, model.tau, model.q)
    policy = QGaussianPolicy(K, Sigma, model.q)
    for t in range(iters + 1):
        try:
            value, theta = policy_evaluate(model, policy)
        except PolicyEvaluationError as exc:
            hist.aborted = str(exc)
            break
        hist.gains.append(policy.K)
        hist.covariances.append(policy.Sigma)
        hist.objectives.append(expected_objective(value, r_x))
        hist.errors.append(np.nan if K_ref is None else normalized_gain_error(policy.K, K_ref))
        if t == iters:
            break
        new = policy_improve(theta, model)
        moved = np.linalg.norm(new.K - policy.K)
        policy = new
        if moved <= tol:
            break
    return hist
