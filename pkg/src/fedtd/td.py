"""Steady-state TD(0) algebra over Markov reward processes.

For an MRP with stationary distribution pi (diagonal weighting D) and a
feature matrix Phi, the TD(0) iterates converge to the unique solution of

    a_bar theta = b_bar,   a_bar = Phi^T D (Phi - gamma P Phi),
                           b_bar = Phi^T D R,

which is also the fixed point of the D-weighted projected Bellman equation.
This module constructs those systems exactly, builds the averaged (virtual)
process of a family, and evaluates the associated quadratic value errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError
from .markov import Mrp, stationary_distribution
from .validation import as_generator, check_features

FIXED_POINT_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-12


def build_features(n: int, d: int, rng) -> np.ndarray:
    """Random full-rank feature matrix with max squared row norm exactly 1.

    Columns of a Gaussian draw are orthonormalized, then every row is scaled
    by one common factor so the largest row norm is 1.  Retries internally on
    (improbable) rank deficiency.
    """
    if not 1 <= d <= n:
        raise ValueError(f"need 1 <= d <= n, got n={n}, d={d}")
    rng = as_generator(rng)
    for _ in range(10):
        q, _ = np.linalg.qr(rng.standard_normal((n, d)))
        if np.linalg.matrix_rank(q) != d:
            continue
        row_norms = np.linalg.norm(q, axis=1)
        phi = q / row_norms.max()
        return check_features(phi)
    raise NumericError(f"could not draw a rank-{d} feature matrix in 10 attempts")


@dataclass(frozen=True)
class TdSystem:
    """Steady-state TD algebra of one MRP under a fixed feature map.

    Carries the linear system (a_bar, b_bar), its solution theta_star, the
    stationary distribution pi, and spectral diagnostics of the feature Gram
    matrix Phi^T D Phi used by step-size theory and bound reports.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    theta_star: np.ndarray
    pi: np.ndarray
    gamma: float
    feature_gram: np.ndarray = field(repr=False)
    lambda_min: float
    lambda_max: float
    kappa: float

    @property
    def d_diag(self) -> np.ndarray:
        return np.diag(self.pi)

    @property
    def dim(self) -> int:
        return self.b_bar.shape[0]

    def to_json(self) -> dict:
        return {
            "a_bar": self.a_bar.tolist(),
            "b_bar": self.b_bar.tolist(),
            "theta_star": self.theta_star.tolist(),
            "pi": self.pi.tolist(),
            "gamma": self.gamma,
            "kappa": self.kappa,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "spectral_norm_a_bar": float(np.linalg.norm(self.a_bar, 2)),
            "norm_b_bar": float(np.linalg.norm(self.b_bar)),
        }


def td_system(m: Mrp, phi, tol: float = FIXED_POINT_TOL) -> TdSystem:
    """Solve the steady-state TD(0) fixed point for one MRP.

    Raises
    ------
    NumericError
        If the symmetric part of a_bar fails positive definiteness (cannot
        happen for a valid ergodic MRP with full-rank features) or the solved
        fixed point misses its residual tolerance.
    """
    phi = check_features(phi)
    if phi.shape[0] != m.n:
        raise ValueError(f"feature rows ({phi.shape[0]}) must match the state count ({m.n})")
    pi = stationary_distribution(m.p)
    weighted = pi[:, None] * phi          # D Phi
    a_bar = phi.T @ (weighted - m.gamma * (pi[:, None] * (m.p @ phi)))
    b_bar = phi.T @ (pi * m.r)
    sym_eigs = np.linalg.eigvalsh(0.5 * (a_bar + a_bar.T))
    if sym_eigs.min() <= 0.0:
        raise NumericError(
            f"symmetric part of a_bar is not positive definite (lambda_min={sym_eigs.min():.3e}); inputs are broken"
        )
    theta_star = np.linalg.solve(a_bar, b_bar)
    residual = np.abs(a_bar @ theta_star - b_bar).max()
    if residual > tol:
        raise NumericError(f"fixed-point residual {residual:.3e} exceeds {tol:g}")
    gram = phi.T @ weighted
    gram_eigs = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    return TdSystem(
        a_bar=a_bar,
        b_bar=b_bar,
        theta_star=theta_star,
        pi=pi,
        gamma=m.gamma,
        feature_gram=gram,
        lambda_min=float(gram_eigs.min()),
        lambda_max=float(gram_eigs.max()),
        kappa=float(np.linalg.cond(a_bar, 2)),
    )


def virtual_mrp(agents: list[Mrp]) -> Mrp:
    """The averaged environment: entrywise mean kernel and mean reward.

    A mixture of ergodic chains is itself ergodic, so the result always
    admits a stationary distribution.
    """
    if not agents:
        raise ValueError("empty family")
    first = agents[0]
    for m in agents[1:]:
        if m.n != first.n:
            raise ValueError("agents must share the state count")
        if m.gamma != first.gamma:
            raise ValueError("agents must share the discount factor")
    p = np.mean([m.p for m in agents], axis=0)
    r = np.mean([m.r for m in agents], axis=0)
    r_max = max(m.r_max for m in agents)
    return Mrp(p=p, r=r, gamma=first.gamma, r_max=r_max)


def pseudo_gradient(sys: TdSystem, theta) -> np.ndarray:
    """Steady-state expected TD(0) update direction b_bar - a_bar theta."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != sys.b_bar.shape:
        raise ValueError(f"theta has dimension {theta.shape}, system expects {sys.b_bar.shape}")
    return sys.b_bar - sys.a_bar @ theta


def weighted_value_error(sys_virtual: TdSystem, phi, theta, theta_ref) -> float:
    """Squared pi-weighted value gap (Phi theta - Phi theta_ref)^T D (same)."""
    phi = np.asarray(phi, dtype=np.float64)
    dv = phi @ (np.asarray(theta, dtype=np.float64) - np.asarray(theta_ref, dtype=np.float64))
    return float(dv @ (sys_virtual.pi * dv))
