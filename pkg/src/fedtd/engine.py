"""Federated TD(0): periodically averaged local TD updates across agents.

Every round, each agent starts from the shared global parameter, performs K
local TD(0) steps driven by its own environment (i.i.d. stationary draws, a
persistent Markovian trajectory, or the deterministic steady-state update in
mean-path mode), and reports the resulting parameter difference.  The server
averages the differences, takes a global step, and optionally projects onto
an origin-centered ball.

Determinism contract: agent streams are counter-based and keyed by
(seed, agent index), agents are reduced in index order, and no state is
shared across agents, so results are bit-identical regardless of how callers
parallelize around this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergedError, NotSchurStableError
from .markov import Mrp
from .sampling import Observation, agent_generator, row_cdfs
from .td import TdSystem, weighted_value_error
from .validation import check_features

DIVERGENCE_NORM = 1e12
SAMPLING_MODES = ("iid", "markov", "meanpath")
SCHEDULES = ("constant", "theory")


@dataclass(frozen=True)
class FedConfig:
    """Run configuration for the federated TD loop.

    ``projection_radius`` accepts a positive float, ``"auto"`` (1.1 times the
    largest fixed-point norm; resolves to disabled in mean-path mode, where
    the deterministic recursion needs no safeguard), or ``None`` (disabled).
    ``schedule="theory"`` replaces both step sizes with the decreasing
    schedule derived from the virtual process; ``averaging_offset`` is the
    offset ``a`` in the tail-averaging weights a + t.
    """

    n_agents: int
    local_steps: int
    rounds: int
    local_step_size: float = 0.1
    schedule: str = "constant"
    global_step_size: float = 1.0
    projection_radius: float | str | None = "auto"
    sampling_mode: str = "iid"
    seed: int = 0
    averaging_offset: float = 3.0
    start_state: int = 0
    theta0: np.ndarray | None = None
    debug_checks: bool = False

    def __post_init__(self):
        if self.n_agents < 1 or self.local_steps < 1 or self.rounds < 1:
            raise ValueError("n_agents, local_steps and rounds must be positive")
        if self.local_step_size <= 0:
            raise ValueError("local_step_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.schedule == "constant" and self.global_step_size <= 0:
            raise ValueError("global_step_size must be positive")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES}, got {self.sampling_mode!r}")
        if self.averaging_offset <= 0:
            raise ValueError("averaging_offset must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        if self.start_state < 0:
            raise ValueError("start_state must be a valid state index")
        pr = self.projection_radius
        if pr is not None and pr != "auto" and not (isinstance(pr, (int, float)) and pr > 0):
            raise ValueError('projection_radius must be a positive number, "auto", or None')


@dataclass(frozen=True)
class RunTrace:
    """Everything a run produces, indexed by round t = 0..T.

    ``per_round_errors[t, i]`` is the squared distance of the global
    parameter to agent i's fixed point; ``virtual_error`` the same against
    the averaged process; ``dbar_value_errors[i]`` the stationary-weighted
    squared value gap of the tail-averaged parameter against agent i.
    """

    global_iterates: np.ndarray
    per_round_errors: np.ndarray
    virtual_error: np.ndarray
    averaged_iterate: np.ndarray
    dbar_value_errors: np.ndarray

    @property
    def rounds(self) -> int:
        return self.global_iterates.shape[0] - 1


def project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the origin-centered ball; exactly idempotent."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    nrm = float(np.linalg.norm(theta))
    if nrm <= radius:
        return theta
    out = theta * (radius / nrm)
    # Rounding can leave the rescaled vector an ulp outside; nudge until inside
    # so that projecting twice is a no-op bit for bit.
    for _ in range(5):
        nrm = float(np.linalg.norm(out))
        if nrm <= radius:
            return out
        out = out * (radius / nrm)
    return out * (1.0 - 1e-15)


def local_td_step(theta: np.ndarray, obs: Observation, phi: np.ndarray, gamma: float,
                  alpha_l: float) -> np.ndarray:
    """One TD(0) update along the sampled temporal-difference direction."""
    phi_s = phi[obs.s]
    td = obs.reward + gamma * (phi[obs.s_next] @ theta) - (phi_s @ theta)
    return theta + alpha_l * td * phi_s


def schur_stable(a_hat: np.ndarray, alpha: float) -> bool:
    """True when the spectral radius of I - alpha a_hat is below 1 - 1e-12."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.ndim != 2 or a_hat.shape[0] != a_hat.shape[1]:
        raise ValueError("a_hat must be square")
    radius = _iteration_spectral_radius(a_hat, alpha)
    return radius < 1.0 - 1e-12


def _iteration_spectral_radius(a_hat: np.ndarray, alpha: float) -> float:
    eye = np.eye(a_hat.shape[0])
    return float(np.abs(np.linalg.eigvals(eye - alpha * a_hat)).max())


def meanpath_bias_limits(sys1: TdSystem, sys2: TdSystem, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form limits of the two agents' errors under deterministic averaging.

    With a_hat = (a_bar_1 + a_bar_2)/2 and a Schur-stable iteration, the
    two-agent mean-path recursion converges to a_hat^{ -1} (b_bar_1+b_bar_2)/2,
    which sits at

        e1 = (1/2) a_hat^{-1} a_bar_2 (theta_2* - theta_1*)
        e2 = (1/2) a_hat^{-1} a_bar_1 (theta_1* - theta_2*)

    away from the respective fixed points.  The limits do not depend on the
    step size; ``alpha`` only gates stability.
    """
    a_hat = 0.5 * (sys1.a_bar + sys2.a_bar)
    radius = _iteration_spectral_radius(a_hat, alpha)
    if radius >= 1.0 - 1e-12:
        raise NotSchurStableError(
            f"I - alpha a_hat has spectral radius {radius:.6f} (need < 1)", spectral_radius=radius
        )
    gap = sys2.theta_star - sys1.theta_star
    e1 = 0.5 * np.linalg.solve(a_hat, sys2.a_bar @ gap)
    e2 = 0.5 * np.linalg.solve(a_hat, sys1.a_bar @ (-gap))
    return e1, e2


def theory_step_sizes(virtual_sys: TdSystem, cfg: FedConfig, mode: str | None = None) -> tuple[float, np.ndarray]:
    """Decreasing effective step sizes tied to the virtual-process spectrum.

    With nu = (1 - gamma) * lambda_min(Phi^T D Phi), the local step is
    nu / (96 K) and the global step at round t makes the effective step
    K alpha_g alpha_l equal 8 / (nu (a + t + 1)).  Markovian sampling caps
    the local step at 1 / (2 sqrt(2) (1 + gamma) (K - 1)); the cap is vacuous
    at K = 1.
    """
    mode = mode or cfg.sampling_mode
    gamma = virtual_sys.gamma
    omega = virtual_sys.lambda_min
    k = cfg.local_steps
    nu = (1.0 - gamma) * omega
    alpha_l = 0.5 * (1.0 - gamma) * omega / (48.0 * k)
    if mode == "markov" and k > 1:
        alpha_l = min(alpha_l, 1.0 / (2.0 * np.sqrt(2.0) * (1.0 + gamma) * (k - 1)))
    t = np.arange(cfg.rounds, dtype=np.float64)
    alpha_t = 8.0 / (nu * (cfg.averaging_offset + t + 1.0))
    return alpha_l, alpha_t / (k * alpha_l)


def _resolve_radius(cfg: FedConfig, systems: list[TdSystem], virtual_sys: TdSystem) -> float | None:
    pr = cfg.projection_radius
    if pr is None:
        return None
    if pr == "auto":
        if cfg.sampling_mode == "meanpath":
            return None
        norms = [float(np.linalg.norm(s.theta_star)) for s in systems]
        norms.append(float(np.linalg.norm(virtual_sys.theta_star)))
        return 1.1 * max(norms)
    return float(pr)


def run_fedtd(agents: list[Mrp], phi, systems: list[TdSystem], virtual_sys: TdSystem,
              cfg: FedConfig) -> RunTrace:
    """Run the federated TD loop and record its full trace.

    Markovian trajectories start at the common ``cfg.start_state`` and are
    never reset: local parameters restart from the global model each round,
    the chain state does not.

    Raises
    ------
    DivergedError
        On a non-finite iterate, or an unprojected iterate with norm beyond
        1e12 (possible under user-forced large steps).
    """
    phi = check_features(phi)
    n_agents, k_steps, rounds = cfg.n_agents, cfg.local_steps, cfg.rounds
    if len(agents) != n_agents or len(systems) != n_agents:
        raise ValueError(f"expected {n_agents} agents and systems, got {len(agents)}/{len(systems)}")
    n, d = phi.shape
    for m in agents:
        if m.n != n:
            raise ValueError("agent state count does not match the feature matrix")
    if cfg.sampling_mode != "meanpath" and not 0 <= cfg.start_state < n:
        raise ValueError(f"start_state {cfg.start_state} outside [0, {n})")
    gamma = agents[0].gamma

    if cfg.schedule == "theory":
        alpha_l, alphas_g = theory_step_sizes(virtual_sys, cfg)
    else:
        alpha_l = cfg.local_step_size
        alphas_g = np.full(rounds, float(cfg.global_step_size))
    radius = _resolve_radius(cfg, systems, virtual_sys)

    if cfg.theta0 is not None:
        theta_bar = np.asarray(cfg.theta0, dtype=np.float64).copy()
        if theta_bar.shape != (d,):
            raise ValueError(f"theta0 must have shape ({d},)")
    else:
        theta_bar = np.zeros(d)

    mode = cfg.sampling_mode
    if mode == "meanpath":
        uniforms = [None] * n_agents
        cdfs = pi_cdfs = rewards = None
    else:
        draws_per_step = 2 if mode == "iid" else 1
        uniforms = [
            agent_generator(cfg.seed, i).random(rounds * k_steps * draws_per_step)
            for i in range(n_agents)
        ]
        cdfs = [row_cdfs(m.p) for m in agents]
        rewards = [m.r for m in agents]
        if mode == "iid":
            pi_cdfs = []
            for s in systems:
                c = np.cumsum(s.pi)
                c[-1] = 1.0
                pi_cdfs.append(c)
        else:
            pi_cdfs = None
    states = [cfg.start_state] * n_agents

    iterates = np.empty((rounds + 1, d))
    iterates[0] = theta_bar
    for t in range(rounds):
        acc = np.zeros(d)
        for i in range(n_agents):
            theta = theta_bar
            if mode == "meanpath":
                a_i, b_i = systems[i].a_bar, systems[i].b_bar
                for _ in range(k_steps):
                    theta = theta + alpha_l * (b_i - a_i @ theta)
            else:
                u = uniforms[i]
                cdf = cdfs[i]
                r_vec = rewards[i]
                base = t * k_steps * (2 if mode == "iid" else 1)
                s = states[i]
                for k in range(k_steps):
                    if mode == "iid":
                        s = int(np.searchsorted(pi_cdfs[i], u[base + 2 * k], side="right"))
                        s_next = int(np.searchsorted(cdf[s], u[base + 2 * k + 1], side="right"))
                    else:
                        s_next = int(np.searchsorted(cdf[s], u[base + k], side="right"))
                    obs = Observation(s=s, reward=float(r_vec[s]), s_next=s_next)
                    new_theta = local_td_step(theta, obs, phi, gamma, alpha_l)
                    if cfg.debug_checks:
                        step_norm = float(np.linalg.norm(new_theta - theta))
                        limit = alpha_l * (agents[i].r_max + (1.0 + gamma) * float(np.linalg.norm(theta)))
                        assert step_norm <= limit + 1e-9, f"per-step update {step_norm} exceeds {limit}"
                    theta = new_theta
                    s = s_next
                states[i] = s
            acc = acc + (theta - theta_bar)
        theta_bar = theta_bar + (alphas_g[t] / n_agents) * acc
        if radius is not None:
            theta_bar = project_ball(theta_bar, radius)
        if not np.isfinite(theta_bar).all() or (
            radius is None and float(np.linalg.norm(theta_bar)) > DIVERGENCE_NORM
        ):
            raise DivergedError(f"iterate diverged at round {t}", round_index=t)
        iterates[t + 1] = theta_bar

    weights = cfg.averaging_offset + np.arange(1, rounds + 1, dtype=np.float64)
    averaged = (weights[:, None] * iterates[1:]).sum(axis=0) / weights.sum()

    theta_stars = np.stack([s.theta_star for s in systems])
    per_round = ((iterates[:, None, :] - theta_stars[None, :, :]) ** 2).sum(axis=2)
    virtual_err = ((iterates - virtual_sys.theta_star) ** 2).sum(axis=1)
    dbar_errors = np.array([
        weighted_value_error(virtual_sys, phi, averaged, s.theta_star) for s in systems
    ])
    return RunTrace(
        global_iterates=iterates,
        per_round_errors=per_round,
        virtual_error=virtual_err,
        averaged_iterate=averaged,
        dbar_value_errors=dbar_errors,
    )
