"""Markov reward processes: construction, stationary analysis, heterogeneity.

A Markov reward process (MRP) here is a finite row-stochastic transition
matrix, a per-state reward vector bounded by ``r_max``, and a discount factor
in (0, 1).  Families of related MRPs are produced by perturbing a base
process under explicit kernel/reward divergence budgets, and the realized
divergence is measured (never assumed) so that downstream bound checks are
honest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import GenerationError, NotErgodicError, NumericError
from .validation import (
    as_generator,
    check_probability_vector,
    check_reward_vector,
    check_transition_matrix,
)

VALUE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Mrp:
    """One agent's environment under the fixed policy.

    Attributes
    ----------
    p : (n, n) ndarray
        Row-stochastic transition matrix.
    r : (n,) ndarray
        Per-state expected reward, bounded by ``r_max`` in absolute value.
    gamma : float
        Discount factor, strictly inside (0, 1).
    r_max : float
        Uniform reward bound.
    """

    p: np.ndarray
    r: np.ndarray
    gamma: float
    r_max: float = 1.0

    def __post_init__(self):
        p = check_transition_matrix(self.p)
        r = check_reward_vector(self.r, self.r_max)
        if p.shape[0] != r.shape[0]:
            raise ValueError(f"p and r disagree on the state count: {p.shape[0]} vs {r.shape[0]}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class HeterogeneitySpec:
    """Target divergence levels: relative kernel level and reward norm level."""

    epsilon: float
    epsilon1: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.epsilon1 < 0.0:
            raise ValueError(f"epsilon1 must be nonnegative, got {self.epsilon1}")


def apply_policy(kernels, rewards, policy, gamma: float, r_max: float | None = None) -> Mrp:
    """Splice per-action kernels/rewards into the MRP induced by a policy.

    ``kernels[a]`` and ``rewards[a]`` describe action ``a``; ``policy`` maps
    each state index to an action index.  Row ``s`` of the result is row ``s``
    of ``kernels[policy[s]]`` and likewise for the reward.
    """
    if len(kernels) == 0 or len(kernels) != len(rewards):
        raise ValueError("need matching, nonempty kernel and reward lists")
    kernels = [check_transition_matrix(k, name=f"kernels[{i}]") for i, k in enumerate(kernels)]
    n = kernels[0].shape[0]
    rewards = [np.ascontiguousarray(r, dtype=np.float64) for r in rewards]
    for i, (k, r) in enumerate(zip(kernels, rewards)):
        if k.shape[0] != n or r.shape != (n,):
            raise ValueError(f"action {i} has mismatched dimensions")
    policy = np.asarray(policy, dtype=np.int64)
    if policy.shape != (n,):
        raise ValueError(f"policy must assign an action to each of the {n} states")
    if (policy < 0).any() or (policy >= len(kernels)).any():
        raise ValueError("policy refers to an undefined action index")
    p = np.empty((n, n))
    r = np.empty(n)
    for s in range(n):
        p[s] = kernels[policy[s]][s]
        r[s] = rewards[policy[s]][s]
    if r_max is None:
        r_max = max(float(np.abs(r).max()), np.finfo(float).tiny)
    return Mrp(p=p, r=r, gamma=gamma, r_max=r_max)


def is_ergodic(p) -> bool:
    """Exact primitivity test (aperiodic + irreducible).

    Works on the boolean positivity pattern: squares the reachability
    pattern until the exponent passes the Wielandt bound n^2 - 2n + 2.
    The matrix is primitive iff some power is entrywise positive, and
    positivity persists once attained, so checking powers 1, 2, 4, ...
    up to the bound is exact.
    """
    p = check_transition_matrix(p)
    n = p.shape[0]
    bound = n * n - 2 * n + 2
    reach = (p > 0.0).astype(np.float64)
    k = 1
    while True:
        if reach.min() > 0.0:
            return True
        if k >= bound:
            return False
        reach = np.minimum(reach @ reach, 1.0)
        k *= 2


def stationary_distribution(p, tol: float = 1e-12) -> np.ndarray:
    """Unique stationary distribution of an ergodic transition matrix.

    Solves the overdetermined system (P^T - I) pi = 0 with the
    normalization row appended, then falls back to power iteration if the
    direct solve misses the tolerance.

    Raises
    ------
    NotErgodicError
        If ``p`` is not aperiodic and irreducible.
    NumericError
        If neither solver reaches the requested tolerance.
    """
    p = check_transition_matrix(p)
    if not is_ergodic(p):
        raise NotErgodicError("transition matrix is not aperiodic and irreducible")
    n = p.shape[0]
    a = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    if _stationary_ok(pi, p, tol):
        return pi
    # Power iteration fallback; ergodicity guarantees convergence.
    pi = np.full(n, 1.0 / n)
    for _ in range(1_000_000):
        nxt = pi @ p
        if np.abs(nxt - pi).max() <= 0.25 * tol:
            pi = nxt
            break
        pi = nxt
    pi = pi / pi.sum()
    if _stationary_ok(pi, p, tol):
        return pi
    raise NumericError(f"stationary distribution did not reach tolerance {tol:g}")


def _stationary_ok(pi: np.ndarray, p: np.ndarray, tol: float) -> bool:
    if pi.min() <= 0.0:
        return False
    if abs(pi.sum() - 1.0) > tol:
        return False
    return np.abs(pi @ p - pi).max() <= tol


def exact_value_function(m: Mrp) -> np.ndarray:
    """Solve (I - gamma P) V = R for the exact value function."""
    n = m.n
    v = np.linalg.solve(np.eye(n) - m.gamma * m.p, m.r)
    residual = np.abs((np.eye(n) - m.gamma * m.p) @ v - m.r).max()
    if residual > VALUE_RESIDUAL_TOL:
        raise NumericError(f"value-function residual {residual:.3e} exceeds {VALUE_RESIDUAL_TOL:g}")
    return v


def kernel_heterogeneity(pi, pj) -> float:
    """Largest relative entrywise divergence of ``pj`` from ``pi``.

    max over entries with pi(s,s') > 0 of |pi - pj| / pi; +inf if ``pj`` puts
    mass where ``pi`` has none (the relative bound cannot hold there).
    Asymmetric in its arguments.
    """
    pi = check_transition_matrix(pi, name="pi")
    pj = check_transition_matrix(pj, name="pj")
    if pi.shape != pj.shape:
        raise ValueError("matrices must share dimensions")
    support = pi > 0.0
    if (pj[~support] > 0.0).any():
        return float("inf")
    return float((np.abs(pi[support] - pj[support]) / pi[support]).max())


def reward_heterogeneity(ri, rj) -> float:
    """Euclidean distance between two reward vectors."""
    ri = np.asarray(ri, dtype=np.float64)
    rj = np.asarray(rj, dtype=np.float64)
    if ri.shape != rj.shape:
        raise ValueError("reward vectors must share dimensions")
    return float(np.linalg.norm(ri - rj))


def realized_heterogeneity(agents: list[Mrp]) -> tuple[float, float]:
    """Measured family-level divergence: max over ordered pairs of agents."""
    eps_hat = 0.0
    eps1_hat = 0.0
    for i, mi in enumerate(agents):
        for j, mj in enumerate(agents):
            if i == j:
                continue
            eps_hat = max(eps_hat, kernel_heterogeneity(mi.p, mj.p))
            eps1_hat = max(eps1_hat, reward_heterogeneity(mi.r, mj.r))
    return eps_hat, eps1_hat


def perturb_family(base: Mrp, spec: HeterogeneitySpec, count: int, rng) -> list[Mrp]:
    """Build a family of ``count`` MRPs around ``base`` within divergence budgets.

    Agent 1 is ``base`` itself.  Each remaining agent multiplies every
    positive kernel entry by an independent factor uniform in
    [1 - eps/3, 1 + eps/3] and renormalizes rows (zero entries stay zero, so
    the support and hence ergodicity are preserved), and adds to the reward a
    random vector of Euclidean norm at most eps1/2, clipped to [-r_max, r_max].
    Renormalization breaks naive entrywise control, so the realized pairwise
    divergence is measured, and the whole draw is rejected and resampled
    (at most 100 attempts) until every ordered pair is within budget.

    Raises
    ------
    GenerationError
        After 100 rejected draws; reports the tightest realized levels.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = as_generator(rng)
    if not is_ergodic(base.p):
        raise NotErgodicError("base kernel must be ergodic")
    if count == 1:
        return [base]

    eps, eps1 = spec.epsilon, spec.epsilon1
    support = base.p > 0.0
    tightest = (float("inf"), float("inf"))
    for _ in range(100):
        agents = [base]
        for _ in range(count - 1):
            agents.append(_perturb_one(base, support, eps, eps1, rng))
        eps_hat, eps1_hat = realized_heterogeneity(agents)
        if eps_hat <= eps and eps1_hat <= eps1:
            return agents
        tightest = (min(tightest[0], eps_hat), min(tightest[1], eps1_hat))
    raise GenerationError(
        f"100 draws rejected; tightest realized levels were kernel={tightest[0]:.4g} "
        f"(target {eps:g}), reward={tightest[1]:.4g} (target {eps1:g})",
        tightest_kernel=tightest[0],
        tightest_reward=tightest[1],
    )


def _perturb_one(base: Mrp, support: np.ndarray, eps: float, eps1: float, rng: np.random.Generator) -> Mrp:
    if eps > 0.0:
        factors = rng.uniform(1.0 - eps / 3.0, 1.0 + eps / 3.0, size=base.p.shape)
        p = np.where(support, base.p * factors, 0.0)
        p /= p.sum(axis=1, keepdims=True)
    else:
        p = base.p.copy()
    if eps1 > 0.0:
        direction = rng.standard_normal(base.n)
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            direction[0] = 1.0
            nrm = 1.0
        delta = direction / nrm * (0.5 * eps1 * rng.uniform())
        r = np.clip(base.r + delta, -base.r_max, base.r_max)
    else:
        r = base.r.copy()
    return Mrp(p=p, r=r, gamma=base.gamma, r_max=base.r_max)


def convex_combination(ps, weights) -> np.ndarray:
    """Weighted mixture of transition matrices under simplex weights.

    If every input chain is ergodic the mixture is ergodic as well
    (asserted in tests, not enforced here).
    """
    if len(ps) == 0:
        raise ValueError("need at least one matrix")
    ps = [check_transition_matrix(p, name=f"ps[{i}]") for i, p in enumerate(ps)]
    n = ps[0].shape[0]
    if any(p.shape[0] != n for p in ps):
        raise ValueError("matrices must share dimensions")
    w = check_probability_vector(weights)
    if w.shape[0] != len(ps):
        raise ValueError(f"got {len(ps)} matrices but {w.shape[0]} weights")
    out = np.zeros((n, n))
    for wi, p in zip(w, ps):
        out += wi * p
    return out


# --- family serialization -------------------------------------------------

def family_to_json(agents: list[Mrp]) -> dict:
    """Family document: {"n", "gamma", "r_max", "agents": [{"P", "R"}, ...]}."""
    if not agents:
        raise ValueError("empty family")
    first = agents[0]
    for m in agents:
        if m.n != first.n or m.gamma != first.gamma or m.r_max != first.r_max:
            raise ValueError("family members must share n, gamma and r_max")
    return {
        "n": first.n,
        "gamma": first.gamma,
        "r_max": first.r_max,
        "agents": [{"P": m.p.tolist(), "R": m.r.tolist()} for m in agents],
    }


def family_from_json(doc: dict) -> list[Mrp]:
    try:
        n = int(doc["n"])
        gamma = float(doc["gamma"])
        r_max = float(doc["r_max"])
        raw_agents = doc["agents"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed family document: {exc}") from exc
    agents = []
    for entry in raw_agents:
        m = Mrp(p=np.asarray(entry["P"], dtype=np.float64), r=np.asarray(entry["R"], dtype=np.float64),
                gamma=gamma, r_max=r_max)
        if m.n != n:
            raise ValueError(f"agent dimension {m.n} disagrees with declared n={n}")
        agents.append(m)
    if not agents:
        raise ValueError("family document lists no agents")
    return agents


def save_family(agents: list[Mrp], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(family_to_json(agents), fh)
        fh.write("\n")


def load_family(path) -> list[Mrp]:
    with open(path, "r", encoding="utf-8") as fh:
        return family_from_json(json.load(fh))
