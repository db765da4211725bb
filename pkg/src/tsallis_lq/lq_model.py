"""Discounted LQ systems with multiplicative noise.

The dynamics are

    x+ = A x + B u + sum_j (C_j x + D_j u) xi_j,    xi ~ (0, channel_cov)

so additive-in-parameter perturbations (``Delta A = sum_j C_j xi_j``) and
process noise both live in the same list of channels.  Second moments
propagate exactly through :func:`moment_lift` (state -> state/action) and
:func:`moment_push` (state/action -> next state).
"""
import json
from dataclasses import dataclass

import numpy as np

from ._io import atomic_open
from ._schemas import validate
from ._validation import (
    as_matrix,
    check_deformation,
    check_pd,
    check_psd,
    check_random_state,
    psd_sqrt,
)
from .qcalc import QGaussian, q_log


@dataclass(frozen=True)
class NoiseChannel:
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", as_matrix(self.C, "C"))
        object.__setattr__(self, "D", as_matrix(self.D, "D"))
        if self.C.shape[0] != self.D.shape[0]:
            raise ValueError("C and D must have the same number of rows")

    @property
    def F(self):
        """The stacked map ``[C D]`` acting on ``(x, u)``."""
        return np.hstack([self.C, self.D])


@dataclass(frozen=True)
class LqModel:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    channels: tuple = ()
    channel_cov: np.ndarray = None
    tau: float = 0.0
    q: float = 1.0

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B")
        if B.shape[0] != m:
            raise ValueError(f"B must have {m} rows, got {B.shape}")
        n = B.shape[1]
        channels = tuple(c if isinstance(c, NoiseChannel) else NoiseChannel(*c)
                         for c in self.channels)
        for j, ch in enumerate(channels):
            if ch.C.shape != (m, m) or ch.D.shape != (m, n):
                raise ValueError(f"channel {j} has shapes {ch.C.shape}, {ch.D.shape};"
                                 f" expected {(m, m)}, {(m, n)}")
        p = len(channels)
        cov = np.zeros((p, p)) if self.channel_cov is None else self.channel_cov
        cov = check_psd(as_matrix(cov, "channel_cov").reshape(p, p), "channel_cov")
        Q = check_pd(as_matrix(self.Q, "Q", (m, m)), "Q")
        R = check_pd(as_matrix(self.R, "R", (n, n)), "R")
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        tau = float(self.tau)
        if tau < 0:
            raise ValueError(f"tau must be non-negative, got {tau}")
        for name, value in dict(A=A, B=B, channels=channels, channel_cov=cov, Q=Q, R=R,
                                gamma=gamma, tau=tau, q=check_deformation(self.q)).items():
            object.__setattr__(self, name, value)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.B.shape[1]

    @property
    def p(self):
        return len(self.channels)

    @property
    def H(self):
        """Stage-cost weight ``diag(Q, R)`` on the joint vector ``(x, u)``."""
        m, n = self.m, self.n
        H = np.zeros((m + n, m + n))
        H[:m, :m] = self.Q
        H[m:, m:] = self.R
        return H

    def replace(self, **changes):
        d = dict(A=self.A, B=self.B, Q=self.Q, R=self.R, gamma=self.gamma,
                 channels=self.channels, channel_cov=self.channel_cov,
                 tau=self.tau, q=self.q)
        d.update(changes)
        return LqModel(**d)

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "channels": [{"C": ch.C.tolist(), "D": ch.D.tolist()} for ch in self.channels],
            "channel_cov": self.channel_cov.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "gamma": self.gamma,
            "tau": self.tau,
            "q": self.q,
        }

    @classmethod
    def from_dict(cls, d):
        channels = tuple(NoiseChannel(ch["C"], ch["D"]) for ch in d.get("channels", []))
        return cls(A=d["A"], B=d["B"], Q=d["Q"], R=d["R"], gamma=d["gamma"],
                   channels=channels, channel_cov=d.get("channel_cov"),
                   tau=d.get("tau", 0.0), q=d.get("q", 1.0))


def save_model(model, path):
    with atomic_open(path) as fh:
        json.dump(model.to_dict(), fh, indent=2)


def load_model(path):
    """Read a model file; the layout is checked against ``model.schema.json``."""
    with open(path) as fh:
        data = json.load(fh)
    validate(data, "model")
    return LqModel.from_dict(data)


@dataclass(frozen=True)
class QGaussianPolicy:
    """Linear-mean q-Gaussian policy ``u | x ~ N_q(-K x, Sigma)``.

    ``Sigma = 0`` is allowed and means deterministic control ``u = -K x``.
    """

    K: np.ndarray
    Sigma: np.ndarray = None
    q: float = 1.0

    def __post_init__(self):
        K = as_matrix(self.K, "K")
        n = K.shape[0]
        Sigma = np.zeros((n, n)) if self.Sigma is None else self.Sigma
        Sigma = check_psd(as_matrix(Sigma, "Sigma", (n, n)), "Sigma")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "q", check_deformation(self.q))

    @property
    def deterministic(self):
        return not np.any(self.Sigma)

    def noise_law(self):
        if self.deterministic:
            raise ValueError("deterministic policy has no exploration law")
        return QGaussian.centered(self.Sigma, self.q)

    def mean_action(self, x):
        x = np.asarray(x, dtype=float)
        return -(x @ self.K.T) if x.ndim > 1 else -(self.K @ x)

    def sample(self, x, generator=None):
        """Draw actions for a single state ``(m,)`` or a batch ``(N, m)``."""
        x = np.asarray(x, dtype=float)
        mean = -(np.atleast_2d(x) @ self.K.T)
        if not self.deterministic:
            mean = mean + self.noise_law().rvs(size=mean.shape[0], random_state=generator)
        return mean if x.ndim > 1 else mean[0]

    def log_q_density(self, x, u):
        """``log_q`` of the policy density at ``(x, u)``; rows for batches."""
        law = self.noise_law()
        x = np.atleast_2d(x)
        nu = np.atleast_2d(u) + x @ self.K.T
        return q_log(law.pdf(nu), self.q)


def _noise_matrix(model, rng, size):
    """Channel draws ``xi`` with covariance ``channel_cov`` (Gaussian)."""
    if model.p == 0:
        return np.zeros((size, 0))
    return rng.standard_normal((size, model.p)) @ psd_sqrt(model.channel_cov)


def step(model, x, u, generator=None, noise=None):
    """One transition; ``x`` and ``u`` may be single vectors or row batches.

    ``noise`` overrides the channel draws (rows of length ``p``), which lets
    callers share draws across two simulators.
    """
    single = np.asarray(x).ndim == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    U = np.atleast_2d(np.asarray(u, dtype=float))
    if X.shape[1] != model.m or U.shape[1] != model.n or X.shape[0] != U.shape[0]:
        raise ValueError(f"dimension mismatch: x {X.shape}, u {U.shape} for model (m={model.m},"
                         f" n={model.n})")
    if noise is None:
        xi = _noise_matrix(model, check_random_state(generator), X.shape[0])
    else:
        xi = np.atleast_2d(np.asarray(noise, dtype=float)).reshape(X.shape[0], model.p)
    out = X @ model.A.T + U @ model.B.T
    for j, ch in enumerate(model.channels):
        out = out + (X @ ch.C.T + U @ ch.D.T) * xi[:, j:j + 1]
    return out[0] if single else out


def moment_lift(X, policy):
    """Joint second moment of ``(x, u)`` given the state second moment ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    G = np.vstack([np.eye(m), -policy.K])
    Z = G @ X @ G.T
    Z[m:, m:] += policy.Sigma
    return Z


def moment_push(model, Z):
    """Next-state second moment ``E[x+ x+^T]`` given the joint moment ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    F0 = np.hstack([model.A, model.B])
    X = F0 @ Z @ F0.T
    Fs = [ch.F for ch in model.channels]
    for j in range(model.p):
        for l in range(model.p):
            w = model.channel_cov[j, l]
            if w != 0.0:
                X = X + w * (Fs[j] @ Z @ Fs[l].T)
    return 0.5 * (X + X.T)


def value_transfer(model, P):
    """``G(P)`` such that ``E[x+^T P x+ | x, u] = (x,u)^T G(P) (x,u)``.

    This is the adjoint of :func:`moment_push`:
    ``Tr(P moment_push(Z)) = Tr(G(P) Z)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    F0 = np.hstack([model.A, model.B])
    G = F0.T @ P @ F0
    Fs = [ch.F for ch in model.channels]
    for j in range(model.p):
        for l in range(model.p):
            w = model.channel_cov[j, l]
            if w != 0.0:
                G = G + w * (Fs[j].T @ P @ Fs[l])
    return 0.5 * (G + G.T)


def _sym_basis(d):
    basis = []
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0 if i == j else 1.0 / np.sqrt(2.0)
            basis.append(E)
    return basis


def closed_loop_operator(model, K):
    """Matrix of ``X -> moment_push(moment_lift(X, (K, 0)))`` in an
    orthonormal basis of symmetric matrices."""
    m = model.m
    basis = _sym_basis(m)
    policy = QGaussianPolicy(K, np.zeros((model.n, model.n)))
    cols = [moment_push(model, moment_lift(E, policy)) for E in basis]
    return np.array([[np.sum(Ei * Y) for Y in cols] for Ei in basis])


def ms_spectral_radius(model, K):
    return float(np.max(np.abs(np.linalg.eigvals(closed_loop_operator(model, K)))))


def is_ms_stabilizing(model, policy):
    """Discounted mean-square stability: spectral radius below ``1/gamma``."""
    K = policy.K if isinstance(policy, QGaussianPolicy) else policy
    return ms_spectral_radius(model, K) < 1.0 / model.gamma
