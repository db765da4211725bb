"""Exact solution of the entropy-regularised LQ problem.

The value matrix ``P`` is the fixed point of the regularised Riccati map,
found by (optionally damped) value iteration from ``P0 = Q``.  The optimal
policy is the q-Gaussian ``N_q(-K x, Sigma)`` with

    K     = inner^-1 gamma (B^T P A + channel cross terms)
    Sigma = tau * alpha(q, n) * inner^-1
    inner = R + gamma (B^T P B + channel action terms)

and the value constant ``c`` follows in closed form once ``P`` is known.
"""
import logging
from dataclasses import dataclass

import numpy as np

from ._validation import as_vector
from .lq_model import QGaussianPolicy, is_ms_stabilizing, ms_spectral_radius, value_transfer
from .qcalc import QGaussian, alpha, is_shannon, policy_entropy_offset

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the fixed-point iteration fails; carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IllPosedError(SolverError):
    pass


@dataclass(frozen=True)
class QuadraticValue:
    P: np.ndarray
    c: float = 0.0

    def __call__(self, x):
        return value_at(self, x)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_iter: int = 10_000
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SolveResult:
    value: QuadraticValue
    policy: QGaussianPolicy
    iterations: int
    residual: float


def q_blocks(model, P):
    """The joint quadratic ``H + gamma G(P)`` split into (xx, xu, ux, uu)."""
    m = model.m
    Theta = model.H + model.gamma * value_transfer(model, P)
    return Theta[:m, :m], Theta[:m, m:], Theta[m:, :m], Theta[m:, m:]


def _cholesky_inner(inner):
    try:
        return np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise IllPosedError("action-weight matrix R + gamma(...) is not positive definite") from exc


def optimal_gain(model, P):
    _, _, Tux, Tuu = q_blocks(model, P)
    L = _cholesky_inner(Tuu)
    return np.linalg.solve(L.T, np.linalg.solve(L, Tux))


def optimal_covariance(model, P):
    """``tau alpha inner^-1``; an all-zero matrix when ``tau = 0``."""
    _, _, _, Tuu = q_blocks(model, P)
    _cholesky_inner(Tuu)
    if model.tau == 0:
        return np.zeros_like(Tuu)
    S = model.tau * alpha(model.q, model.n) * np.linalg.inv(Tuu)
    return 0.5 * (S + S.T)


def riccati_rhs(model, P, K=None):
    """Right-hand side of the Riccati equation with the gain ``K`` substituted."""
    m = model.m
    if K is None:
        K = optimal_gain(model, P)
    L = np.vstack([np.eye(m), -K])
    out = model.Q + K.T @ model.R @ K + model.gamma * (L.T @ value_transfer(model, P) @ L)
    return 0.5 * (out + out.T)


def riccati_residual(model, P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return riccati_rhs(model, P) - P


def value_constant(model, P, Sigma):
    """Closed-form constant ``c`` for the optimal policy at value matrix ``P``.

    Written out with the normaliser directly; :func:`value_constant_from_entropy`
    computes the same number through the q-Gaussian entropy object.
    """
    _, _, _, Tuu = q_blocks(model, P)
    trace_term = float(np.sum(Sigma * Tuu))
    if model.tau == 0:
        return trace_term / (1.0 - model.gamma)
    n, q = model.n, model.q
    log_z = QGaussian.centered(Sigma, q).log_normalizer()
    if is_shannon(q):
        entropy = log_z + 0.5 * n + 1.0
    else:
        a = alpha(q, n)
        entropy = (1.0 - 2.0 * a * np.exp((q - 1.0) * log_z)) / (1.0 - q)
    return (trace_term - model.tau * entropy) / (1.0 - model.gamma)


def value_constant_from_entropy(model, P, Sigma):
    _, _, _, Tuu = q_blocks(model, P)
    offset = policy_entropy_offset(Sigma, model.q, model.tau)
    return (float(np.sum(Sigma * Tuu)) + offset) / (1.0 - model.gamma)


def solve(model, cfg=None):
    """Value iteration on the Riccati map; returns a :class:`SolveResult`."""
    cfg = cfg or SolverConfig()
    P = model.Q.copy()
    converged = False
    for it in range(1, cfg.max_iter + 1):
        rhs = riccati_rhs(model, P)
        P_new = (1.0 - cfg.damping) * P + cfg.damping * rhs
        step_norm = np.linalg.norm(P_new - P)
        P = P_new
        if not np.all(np.isfinite(P)):
            raise SolverError("Riccati iteration diverged", residual=np.inf, iterations=it)
        if step_norm <= cfg.tol * (1.0 + np.linalg.norm(P)):
            converged = True
            break
    residual = float(np.linalg.norm(riccati_residual(model, P)))
    if not converged:
        raise SolverError(f"no convergence after {cfg.max_iter} iterations (residual {residual:.3e})",
                          residual=residual, iterations=it)
    K = optimal_gain(model, P)
    Sigma = optimal_covariance(model, P)
    policy = QGaussianPolicy(K, Sigma, model.q)
    if not is_ms_stabilizing(model, policy):
        raise SolverError(f"converged gain is not mean-square stabilizing (spectral radius "
                          f"{ms_spectral_radius(model, K):.4g}, bound {1 / model.gamma:.4g})",
                          residual=residual, iterations=it)
    c = value_constant(model, P, Sigma)
    logger.debug("solve: %d iterations, residual %.3e", it, residual)
    return SolveResult(QuadraticValue(0.5 * (P + P.T), c), policy, it, residual)


def value_at(v, x):
    x = as_vector(x, "x", dim=v.P.shape[0])
    return float(x @ v.P @ x + v.c)
