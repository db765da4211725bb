"""Tsallis statistics primitives.

Deformed exponential and logarithm, the multivariate q-Gaussian (density,
normaliser, exact sampler) and the closed-form deformed q-entropy of a
q-Gaussian.  ``q = 1`` (within ``SHANNON_TOL``) selects the Gaussian /
Shannon closed forms, which removes the 0/0 singularities of the deformed
formulas.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._validation import as_vector, check_deformation, check_pd, check_random_state

SHANNON_TOL = 1e-9


def is_shannon(q):
    return abs(1.0 - q) < SHANNON_TOL


def q_exp(x, q):
    """Deformed exponential ``[1 + (1-q) x]_+ ** (1/(1-q))``."""
    q = check_deformation(q)
    x = np.asarray(x, dtype=float)
    if is_shannon(q):
        return np.exp(x)
    base = np.maximum(1.0 + (1.0 - q) * x, 0.0)
    return base ** (1.0 / (1.0 - q))


def q_log(x, q):
    """Deformed logarithm ``(x**(1-q) - 1) / (1-q)``, defined for ``x > 0``."""
    q = check_deformation(q)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("q_log is only defined for positive arguments")
    if is_shannon(q):
        return np.log(x)
    # expm1 keeps precision when (1-q) log x is small
    return np.expm1((1.0 - q) * np.log(x)) / (1.0 - q)


def q_log_product(a, b, q):
    """``log_q(a b)`` assembled from the factors' logarithms (product rule)."""
    la, lb = q_log(a, q), q_log(b, q)
    return la + lb + (1.0 - q) * la * lb


def kappa(q, n):
    """The scale ``(n+4) - (n+2) q`` that makes ``cov`` the true covariance."""
    return (n + 4) - (n + 2) * q


def alpha(q, n):
    k = kappa(q, n)
    if k <= 0:
        raise ValueError(f"alpha(q={q}, n={n}) is not positive")
    return 1.0 / k


@dataclass(frozen=True)
class QGaussian:
    """Multivariate q-Gaussian ``N_q(mean, cov)`` for ``0 < q <= 1``.

    ``cov`` is the actual covariance of the law: the density is
    ``exp_q(-d2 / kappa) / Z_q`` with ``d2`` the Mahalanobis distance, and
    for ``q < 1`` it vanishes outside ``d2 <= kappa / (1-q)``.
    """

    mean: np.ndarray
    cov: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        q = check_deformation(self.q)
        cov = check_pd(self.cov, "cov")
        mean = as_vector(self.mean, "mean", dim=cov.shape[0])
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", mean)
        alpha(q, cov.shape[0])

    @classmethod
    def centered(cls, cov, q):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(np.zeros(cov.shape[0]), cov, q)

    @property
    def n(self):
        return self.cov.shape[0]

    @property
    def kappa(self):
        return kappa(self.q, self.n)

    @property
    def support_radius2(self):
        """Squared Mahalanobis radius of the support (``inf`` at q=1)."""
        if is_shannon(self.q):
            return np.inf
        return self.kappa / (1.0 - self.q)

    def log_normalizer(self):
        n, q = self.n, self.q
        _, logdet = np.linalg.slogdet(self.cov)
        if is_shannon(q):
            return 0.5 * n * np.log(2 * np.pi) + 0.5 * logdet
        s = (2.0 - q) / (1.0 - q)
        return (0.5 * logdet + 0.5 * n * np.log(np.pi * self.kappa / (1.0 - q))
                + gammaln(s) - gammaln(s + 0.5 * n))

    def normalizer(self):
        return float(np.exp(self.log_normalizer()))

    def mahalanobis2(self, x):
        x = np.asarray(x, dtype=float)
        d = np.atleast_2d(x) - self.mean
        sol = np.linalg.solve(self.cov, d.T).T
        out = np.einsum("ij,ij->i", d, sol)
        return out if x.ndim > 1 else out[0]

    def pdf(self, x):
        d2 = self.mahalanobis2(x)
        if is_shannon(self.q):
            return np.exp(-0.5 * d2 - self.log_normalizer())
        # zero on the support boundary as well as outside it
        base = np.maximum(1.0 - (1.0 - self.q) * d2 / self.kappa, 0.0)
        return base ** (1.0 / (1.0 - self.q)) / self.normalizer()

    def rvs(self, size=None, random_state=None):
        """Exact draws: uniform direction times a Beta-distributed radius."""
        rng = check_random_state(random_state)
        n, q = self.n, self.q
        count = 1 if size is None else int(size)
        L = np.linalg.cholesky(self.cov)
        if is_shannon(q):
            std = rng.standard_normal((count, n))
        else:
            direction = rng.standard_normal((count, n))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            beta = rng.beta(0.5 * n, (2.0 - q) / (1.0 - q), size=count)
            radius = np.sqrt(self.kappa * beta / (1.0 - q))
            std = radius[:, None] * direction
        out = self.mean + std @ L.T
        return out[0] if size is None else out

    def entropy(self):
        """Deformed q-entropy ``-(E[log_q phi] - 1) / (2 - q)``.

        Uses ``phi**(1-q) = Z**(q-1) (1 - (1-q) d2 / kappa)`` and
        ``E[d2] = n``, which collapses to ``(1 - 2 alpha Z**(q-1)) / (1-q)``.
        At q=1 this is the Shannon entropy plus one.
        """
        n, q = self.n, self.q
        log_z = self.log_normalizer()
        if is_shannon(q):
            return log_z + 0.5 * n + 1.0
        a = alpha(q, n)
        # 1 - 2a = (n+2)(1-q) a, so the 1/(1-q) cancels analytically
        return (n + 2) * a - 2.0 * a * np.expm1((q - 1.0) * log_z) / (1.0 - q)


def z_q(spec):
    """Normalising constant of a q-Gaussian."""
    return spec.normalizer()


def q_gaussian_density(x, spec):
    return spec.pdf(x)


def sample_q_gaussian(spec, generator=None, size=None):
    return spec.rvs(size=size, random_state=generator)


def q_entropy_closed_form(spec):
    return float(spec.entropy())


def entropy_offset_constant(spec, tau):
    """Per-stage cost offset ``-tau * H_q`` contributed by the entropy term."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0:
        return 0.0
    return -tau * q_entropy_closed_form(spec)


def policy_entropy_offset(Sigma, q, tau):
    """``-tau * H_q`` for a centred q-Gaussian with covariance ``Sigma``.

    A deterministic policy (``Sigma = 0``) is only admissible with ``tau = 0``.
    """
    if tau == 0:
        return 0.0
    return entropy_offset_constant(QGaussian.centered(Sigma, q), tau)
