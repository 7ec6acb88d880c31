"""Input validation helpers.

All public entry points funnel array arguments through these checks so that
malformed inputs fail early with a clear message instead of propagating NaNs
through the numerics.
"""

from __future__ import annotations

import numpy as np

ROW_SUM_TOL = 1e-12
SIMPLEX_TOL = 1e-12


def as_generator(seed) -> np.random.Generator:
    """Return a counter-based generator for an int seed, or pass one through."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (int, np.integer)):
        return np.random.Generator(np.random.Philox(key=np.array([np.uint64(seed), np.uint64(0)], dtype=np.uint64)))
    raise ValueError(f"expected an int seed or numpy Generator, got {type(seed).__name__}")


def check_transition_matrix(p, name: str = "p") -> np.ndarray:
    """Validate a row-stochastic matrix and return it as float64."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {p.shape}")
    n = p.shape[0]
    if n < 2:
        raise ValueError(f"{name} must have at least 2 states, got {n}")
    if not np.isfinite(p).all():
        raise ValueError(f"{name} contains non-finite entries")
    if (p < 0.0).any():
        raise ValueError(f"{name} contains negative entries")
    row_err = np.abs(p.sum(axis=1) - 1.0).max()
    if row_err > ROW_SUM_TOL:
        raise ValueError(f"{name} rows must sum to 1 within {ROW_SUM_TOL:g} (max deviation {row_err:.3e})")
    return p


def check_reward_vector(r, r_max: float, name: str = "r") -> np.ndarray:
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {r.shape}")
    if not np.isfinite(r).all():
        raise ValueError(f"{name} contains non-finite entries")
    if not (np.isfinite(r_max) and r_max > 0):
        raise ValueError(f"r_max must be a positive real, got {r_max}")
    if np.abs(r).max(initial=0.0) > r_max:
        raise ValueError(f"|{name}| exceeds the bound r_max={r_max}")
    return r


def check_probability_vector(w, tol: float = SIMPLEX_TOL, name: str = "weights") -> np.ndarray:
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {w.shape}")
    if (w < 0.0).any():
        raise ValueError(f"{name} must be nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 within {tol:g} (got {w.sum()!r})")
    return w


def check_features(phi, name: str = "phi") -> np.ndarray:
    """Validate a feature matrix: full column rank, squared row norms <= 1."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if phi.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {phi.shape}")
    n, d = phi.shape
    if not 1 <= d <= n:
        raise ValueError(f"{name} needs 1 <= d <= n, got n={n}, d={d}")
    if np.linalg.matrix_rank(phi) != d:
        raise ValueError(f"{name} must have full column rank d={d}")
    sq_norms = np.einsum("ij,ij->i", phi, phi)
    if sq_norms.max() > 1.0 + 1e-9:
        raise ValueError(f"{name} rows must satisfy ||phi(s)||^2 <= 1 (max {sq_norms.max():.6f})")
    return phi


def check_state_index(s, n: int, name: str = "state") -> int:
    s = int(s)
    if not 0 <= s < n:
        raise ValueError(f"{name} must lie in [0, {n}), got {s}")
    return s
