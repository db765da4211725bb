"""Input validation helpers shared by the estimators and the functional API."""
import numpy as np


def as_matrix(a, name="matrix", shape=None):
    """Return ``a`` as a 2-D float array, promoting scalars to 1x1."""
    arr = np.asarray(a, dtype=float)
    arr = arr.reshape(0, 0) if arr.size == 0 else np.atleast_2d(arr)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name="vector", dim=None):
    arr = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(S, name="matrix", rtol=1e-12, atol=0.0):
    S = as_matrix(S, name)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got {S.shape}")
    scale = max(np.max(np.abs(S), initial=0.0), 1.0)
    if np.max(np.abs(S - S.T), initial=0.0) > rtol * scale + atol:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (S + S.T)


def check_pd(S, name="matrix", rtol=1e-12):
    S = check_symmetric(S, name, rtol=rtol)
    if S.size and np.linalg.eigvalsh(S)[0] <= 0.0:
        raise ValueError(f"{name} is not positive definite")
    return S


def check_psd(S, name="matrix", rtol=1e-12, eig_tol=1e-12):
    S = check_symmetric(S, name, rtol=rtol)
    if S.size:
        lo = np.linalg.eigvalsh(S)[0]
        if lo < -eig_tol * max(np.max(np.abs(S)), 1.0):
            raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3g})")
    return S


def check_deformation(q):
    """Validate a deformation parameter, accepting the Shannon limit ``q = 1``."""
    q = float(q)
    if not (0.0 < q <= 1.0):
        raise ValueError(f"q must lie in (0, 1], got {q}")
    return q


def check_random_state(seed):
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def psd_sqrt(S):
    """Symmetric square root of a PSD matrix (eigenvalues clipped at zero)."""
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
