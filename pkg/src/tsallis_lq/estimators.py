"""Estimator-style wrappers (``fit`` / ``predict`` / ``get_params``).

These follow scikit-learn conventions: hyperparameters go to ``__init__``
and are stored untouched, fitted state lives in attributes with a trailing
underscore, and ``fit`` returns ``self``.  The ``fit`` argument of the
controllers is an :class:`~tsallis_lq.lq_model.LqModel` rather than a data
matrix, since what they learn is a policy for that model.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dp_core import model_based_pi, policy_evaluate
from .exact_solver import SolverConfig, solve
from .lq_model import LqModel, QGaussianPolicy
from .lstd_iv import IvEstimatorState, PeConfig, RegressionRows, approximate_pi, iv_batch_coef, \
    iv_recursive_fit, policy_from_coef, theta_from_coef


def _check_model(model):
    if not isinstance(model, LqModel):
        raise TypeError(f"expected an LqModel, got {type(model).__name__}")
    return model


def _states(X, m):
    X = check_array(X, ensure_2d=False, dtype=float)
    X = np.atleast_2d(X)
    if X.shape[1] != m:
        raise ValueError(f"X has {X.shape[1]} features, expected {m}")
    return X


class _PolicyMixin:
    """``predict`` / ``sample`` / ``value`` for estimators exposing ``policy_``."""

    def predict(self, X):
        """Mean actions ``-K x`` for the rows of ``X``."""
        check_is_fitted(self, "policy_")
        return self.policy_.mean_action(_states(X, self.K_.shape[1]))

    def sample(self, X, random_state=None):
        check_is_fitted(self, "policy_")
        return self.policy_.sample(_states(X, self.K_.shape[1]), np.random.default_rng(random_state))


class TsallisLQRegulator(_PolicyMixin, BaseEstimator):
    """Exact regularised LQ solution via value iteration on the Riccati map."""

    def __init__(self, tol=1e-12, max_iter=10_000, damping=1.0):
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping

    def fit(self, model, y=None):
        res = solve(_check_model(model), SolverConfig(self.tol, self.max_iter, self.damping))
        self.value_ = res.value
        self.P_, self.c_ = res.value.P, res.value.c
        self.policy_ = res.policy
        self.K_, self.Sigma_ = res.policy.K, res.policy.Sigma
        self.n_iter_, self.residual_ = res.iterations, res.residual
        return self

    def value(self, X):
        """Optimal cost ``x^T P x + c`` per row of ``X``."""
        check_is_fitted(self, "P_")
        X = _states(X, self.P_.shape[0])
        return np.einsum("ij,jk,ik->i", X, self.P_, X) + self.c_


class ModelBasedPolicyIteration(_PolicyMixin, BaseEstimator):
    """Exact evaluation / improvement from an initial gain ``K0``."""

    def __init__(self, n_iter=50, tol=0.0, r_x=1.0):
        self.n_iter = n_iter
        self.tol = tol
        self.r_x = r_x

    def fit(self, model, K0, K_ref=None):
        model = _check_model(model)
        hist = model_based_pi(model, K0, iters=self.n_iter, K_ref=K_ref, r_x=self.r_x, tol=self.tol)
        if not hist.gains:
            raise ValueError(f"policy iteration could not start: {hist.aborted}")
        self.history_ = hist
        self.policy_ = QGaussianPolicy(hist.gains[-1], hist.covariances[-1], model.q)
        self.K_, self.Sigma_ = self.policy_.K, self.policy_.Sigma
        self.value_, self.theta_ = policy_evaluate(model, self.policy_)
        self.n_iter_ = len(hist.gains) - 1
        return self


class IVQFunctionRegressor(RegressorMixin, BaseEstimator):
    """Instrumental-variable regression ``b ~ a^T theta`` with instruments ``g``.

    ``X`` holds the regressor rows ``a``, ``y`` the targets ``b``.  With
    ``method="batch"`` the closed-form IV estimate is used; ``"recursive"``
    runs the recursive update from ``theta = theta0_fill``, ``S = beta0 I``
    and supports :meth:`partial_fit`.  ``n_state`` (the state dimension)
    lets :meth:`greedy_policy` split the Q-function into blocks.
    """

    def __init__(self, method="recursive", beta0=20.0, theta0_fill=0.8, n_state=None):
        self.method = method
        self.beta0 = beta0
        self.theta0_fill = theta0_fill
        self.n_state = n_state

    def _rows(self, X, y, instruments):
        a = check_array(X, dtype=float)
        g = check_array(a if instruments is None else instruments, dtype=float)
        b = check_array(y, ensure_2d=False, dtype=float).ravel()
        if not (a.shape == g.shape and a.shape[0] == b.shape[0]):
            raise ValueError(f"shape mismatch: X {a.shape}, instruments {g.shape}, y {b.shape}")
        return RegressionRows(a, b, g)

    def fit(self, X, y, instruments=None):
        if self.method not in ("batch", "recursive"):
            raise ValueError(f"method must be 'batch' or 'recursive', got {self.method!r}")
        rows = self._rows(X, y, instruments)
        if self.method == "batch":
            self.coef_ = iv_batch_coef(rows)
            self.state_ = None
        else:
            self.state_ = IvEstimatorState.initial(rows.a.shape[1], self.beta0, self.theta0_fill)
            self.coef_ = iv_recursive_fit(self.state_, rows).theta_hat
        self.n_features_in_ = rows.a.shape[1]
        return self

    def partial_fit(self, X, y, instruments=None):
        rows = self._rows(X, y, instruments)
        if getattr(self, "state_", None) is None:
            if hasattr(self, "coef_"):
                raise ValueError("partial_fit needs the recursive method")
            self.state_ = IvEstimatorState.initial(rows.a.shape[1], self.beta0, self.theta0_fill)
            self.n_features_in_ = rows.a.shape[1]
        self.coef_ = iv_recursive_fit(self.state_, rows).theta_hat
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=float) @ self.coef_

    @property
    def theta_(self):
        check_is_fitted(self, "coef_")
        if self.n_state is None:
            raise AttributeError("set n_state to view the coefficients as a Q-function")
        return theta_from_coef(self.coef_, self.n_state)

    def greedy_policy(self, tau, q):
        check_is_fitted(self, "coef_")
        if self.n_state is None:
            raise ValueError("set n_state to derive a policy")
        return policy_from_coef(self.coef_, self.n_state, tau, q)


class DataDrivenPolicyIteration(_PolicyMixin, BaseEstimator):
    """Policy iteration from sampled transitions only (IV-LSTD evaluation)."""

    def __init__(self, n_iter=30, mode="offline", M=1200, T=1, r_nu=0.8, r_x=1.0,
                 exploration_law="q_gaussian_clipped", beta0=20.0, theta0_fill=0.8,
                 random_state=None):
        self.n_iter = n_iter
        self.mode = mode
        self.M = M
        self.T = T
        self.r_nu = r_nu
        self.r_x = r_x
        self.exploration_law = exploration_law
        self.beta0 = beta0
        self.theta0_fill = theta0_fill
        self.random_state = random_state

    def fit(self, model, K_ref=None):
        model = _check_model(model)
        pe = PeConfig(self.M, self.T, self.r_nu, self.r_x, self.exploration_law)
        hist = approximate_pi(model, pe, self.n_iter, mode=self.mode, beta0=self.beta0,
                              theta0_fill=self.theta0_fill,
                              generator=np.random.default_rng(self.random_state), K_ref=K_ref)
        self.history_ = hist
        self.coef_ = hist.theta_hat
        self.policy_ = policy_from_coef(hist.theta_hat, model.m, model.tau, model.q)
        self.K_, self.Sigma_ = self.policy_.K, self.policy_.Sigma
        return self
