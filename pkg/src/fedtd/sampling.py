"""Observation generation and chain diagnostics.

Each agent owns a counter-based random stream (Philox keyed by the master
seed and the agent index), so trajectories are reproducible bit for bit
regardless of scheduling, and distinct agents are statistically independent.
A single uniform drives each Markov transition through the inverse CDF of
the current row; i.i.d. draws consume two uniforms (state, then successor).
Batch and one-at-a-time draws from the same stream yield identical numbers,
which the simulation engine exploits for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .markov import Mrp, stationary_distribution
from .validation import as_generator, check_probability_vector, check_state_index


def agent_generator(seed: int, agent_index: int) -> np.random.Generator:
    """Counter-based stream for one agent: Philox keyed by (seed, agent)."""
    key = np.array([np.uint64(seed), np.uint64(agent_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# High stream indices namespace non-agent draws away from agent streams.
_FEATURE_STREAM = 2**63
_FAMILY_STREAM = 2**63 + 1
_BASE_MRP_STREAM = 2**63 + 2


def feature_stream(seed: int) -> np.random.Generator:
    return agent_generator(seed, _FEATURE_STREAM)


def family_stream(seed: int) -> np.random.Generator:
    return agent_generator(seed, _FAMILY_STREAM)


def base_mrp_stream(seed: int) -> np.random.Generator:
    return agent_generator(seed, _BASE_MRP_STREAM)


def row_cdfs(p: np.ndarray) -> np.ndarray:
    """Cumulative rows with the last column pinned to 1 so inverse-CDF lookups never overflow."""
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = 1.0
    return cdf


def inverse_cdf(cdf_row: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cdf_row, u, side="right"))


class Observation(NamedTuple):
    """One TD data tuple: current state, its reward, next state."""

    s: int
    reward: float
    s_next: int


@dataclass
class AgentChain:
    """Single-owner Markovian trajectory for one agent.

    The state persists for the lifetime of the chain; the federated engine
    never resets it between rounds (only local parameters reset).
    """

    mrp: Mrp
    current_state: int
    rng: np.random.Generator
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.current_state = check_state_index(self.current_state, self.mrp.n)
        self._cdf = row_cdfs(self.mrp.p)

    @classmethod
    def create(cls, mrp: Mrp, start_state: int, seed: int, agent_index: int) -> "AgentChain":
        return cls(mrp=mrp, current_state=start_state, rng=agent_generator(seed, agent_index))

    def step(self) -> Observation:
        """Emit (s, R(s), s') and advance to s'."""
        s = self.current_state
        u = self.rng.random()
        s_next = inverse_cdf(self._cdf[s], u)
        self.current_state = s_next
        return Observation(s=s, reward=float(self.mrp.r[s]), s_next=s_next)


def markov_step(chain: AgentChain) -> Observation:
    """Advance a persistent chain by one transition."""
    return chain.step()


def iid_draw(m: Mrp, pi: np.ndarray, rng) -> Observation:
    """Draw s from the stationary law, then s' from P(s, .); reward is R(s)."""
    pi = check_probability_vector(pi, tol=1e-9, name="pi")
    if pi.shape[0] != m.n:
        raise ValueError("pi must match the state count")
    rng = as_generator(rng)
    pi_cdf = np.cumsum(pi)
    pi_cdf[-1] = 1.0
    s = inverse_cdf(pi_cdf, rng.random())
    row_cdf = np.cumsum(m.p[s])
    row_cdf[-1] = 1.0
    s_next = inverse_cdf(row_cdf, rng.random())
    return Observation(s=s, reward=float(m.r[s]), s_next=s_next)


def tv_distance(p1, p2) -> float:
    """Total-variation distance (1/2) sum |p1 - p2| between two distributions."""
    p1 = check_probability_vector(p1, tol=1e-9, name="p1")
    p2 = check_probability_vector(p2, tol=1e-9, name="p2")
    if p1.shape != p2.shape:
        raise ValueError("distributions must share dimensions")
    return float(0.5 * np.abs(p1 - p2).sum())


class MixingReport(NamedTuple):
    """Exact mixing time plus geometric-decay diagnostics.

    tau is the smallest t >= 1 with max_s tv(P^t(s,.), pi) <= eps_bar, or the
    cap (with ``saturated`` set) if the threshold was never reached.  rho is
    the second-largest eigenvalue modulus and m_fit the smallest prefactor
    with d(t) <= m_fit rho^t over the computed prefix; both are diagnostics
    only and play no part in tau itself.
    """

    tau: int
    saturated: bool
    rho: float
    m_fit: float


def mixing_time(p, eps_bar: float, cap: int = 100_000) -> MixingReport:
    """Exact worst-start mixing time of an ergodic chain via matrix powers."""
    if not 0.0 < eps_bar < 1.0:
        raise ValueError(f"eps_bar must lie in (0, 1), got {eps_bar}")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    pi = stationary_distribution(p)
    p = np.asarray(p, dtype=np.float64)
    eigs = np.sort(np.abs(np.linalg.eigvals(p)))
    rho = float(eigs[-2])

    power = p.copy()
    m_fit = 0.0
    for t in range(1, cap + 1):
        d_t = float(0.5 * np.abs(power - pi[None, :]).sum(axis=1).max())
        decay = rho**t
        if decay > 1e-300:
            m_fit = max(m_fit, d_t / decay)
        if d_t <= eps_bar:
            return MixingReport(tau=t, saturated=False, rho=rho, m_fit=m_fit)
        power = power @ p
    return MixingReport(tau=cap, saturated=True, rho=rho, m_fit=m_fit)


def slowest_mixing_time(kernels, eps_bar: float, cap: int = 100_000) -> tuple[int, list[MixingReport]]:
    """Per-agent mixing times and the family maximum (the slowest chain)."""
    reports = [mixing_time(p, eps_bar, cap) for p in kernels]
    return max(r.tau for r in reports), reports
