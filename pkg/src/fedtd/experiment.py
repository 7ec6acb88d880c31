"""Experiment orchestration: spec files, seed replication, sweeps, reports.

A spec is a single JSON document with three blocks::

    {
      "family":  {"n": 100, "d": 5, "gamma": 0.9, "r_max": 1.0,
                  "epsilon": 0.05, "epsilon1": 0.1, "n_agents": 10, "seed": 42},
      "run":     {"rounds": 300, "local_steps": 10, "local_step_size": 0.1,
                  "schedule": "constant", "global_step_size": 1.0,
                  "projection_radius": "auto", "sampling_mode": "markov",
                  "averaging_offset": 3.0, "start_state": 0,
                  "seeds": [1, 2, 3], "agent_counts": [1, 10, 20]},
      "outputs": {"directory": "out", "emit_svg": true}
    }

The feature matrix is not stored in family files; it is regenerated
deterministically from the family block's (n, d, seed), so a spec plus a
family file fully determine every output byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import bound_inputs_from_systems, verify_family_bounds
from .engine import FedConfig, RunTrace, meanpath_bias_limits, run_fedtd, theory_step_sizes
from .exceptions import DivergedError
from .markov import (
    Mrp,
    HeterogeneitySpec,
    kernel_heterogeneity,
    perturb_family,
    realized_heterogeneity,
    reward_heterogeneity,
)
from .sampling import base_mrp_stream, family_stream, feature_stream, slowest_mixing_time
from .td import TdSystem, build_features, td_system, virtual_mrp
from . import svgchart

TRACE_HEADER = "round,err_sq_agent1,err_sq_agent_min,err_sq_agent_max,err_sq_virtual,dbar_value_err_agent1"


class SpecError(ValueError):
    """Malformed experiment spec (CLI exit code 1)."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Parsed and validated three-block experiment description."""

    n: int
    d: int
    gamma: float
    r_max: float
    epsilon: float
    epsilon1: float
    n_agents: int
    base_seed: int
    run: dict = field(repr=False)
    seeds: tuple[int, ...] = ()
    agent_counts: tuple[int, ...] | None = None
    out_dir: str = "out"
    emit_svg: bool = False


def _require(block: dict, key: str, block_name: str):
    if key not in block:
        raise SpecError(f"spec {block_name} block is missing {key!r}")
    return block[key]


def parse_spec(doc: dict) -> ExperimentSpec:
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    fam = _require(doc, "family", "top-level")
    run = doc.get("run", {})
    outputs = doc.get("outputs", {})

    try:
        n = int(_require(fam, "n", "family"))
        d = int(_require(fam, "d", "family"))
        gamma = float(_require(fam, "gamma", "family"))
        r_max = float(fam.get("r_max", 1.0))
        epsilon = float(fam.get("epsilon", 0.0))
        epsilon1 = float(fam.get("epsilon1", 0.0))
        n_agents = int(_require(fam, "n_agents", "family"))
        base_seed = int(_require(fam, "seed", "family"))
    except (TypeError, ValueError) as exc:
        raise SpecError(f"family block has a malformed field: {exc}") from exc
    if not 0.0 < gamma < 1.0:
        raise SpecError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    if not 1 <= d <= n:
        raise SpecError(f"need 1 <= d <= n, got d={d}, n={n}")
    if n_agents < 1:
        raise SpecError("n_agents must be positive")
    if not 0.0 <= epsilon < 1.0:
        raise SpecError(f"epsilon must lie in [0, 1), got {epsilon}")
    if epsilon1 < 0.0:
        raise SpecError("epsilon1 must be nonnegative")

    seeds = tuple(int(s) for s in run.get("seeds", ()))
    counts = run.get("agent_counts")
    if counts is not None:
        counts = tuple(int(c) for c in counts)
        if any(c < 1 or c > n_agents for c in counts):
            raise SpecError("agent_counts must lie within [1, family n_agents]")
    run_agents = int(run.get("n_agents", n_agents))
    if not 1 <= run_agents <= n_agents:
        raise SpecError("run n_agents must not exceed the family size")

    return ExperimentSpec(
        n=n, d=d, gamma=gamma, r_max=r_max, epsilon=epsilon, epsilon1=epsilon1,
        n_agents=n_agents, base_seed=base_seed, run=dict(run), seeds=seeds,
        agent_counts=counts,
        out_dir=str(outputs.get("directory", "out")),
        emit_svg=bool(outputs.get("emit_svg", False)),
    )


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    return parse_spec(doc)


def fed_config(spec: ExperimentSpec, seed: int, n_agents: int | None = None,
               overrides: dict | None = None) -> FedConfig:
    run = dict(spec.run)
    if overrides:
        run.update(overrides)
    if "rounds" not in run or "local_steps" not in run:
        raise SpecError("run block must define rounds and local_steps")
    try:
        return FedConfig(
            n_agents=n_agents if n_agents is not None else int(run.get("n_agents", spec.n_agents)),
            local_steps=int(run["local_steps"]),
            rounds=int(run["rounds"]),
            local_step_size=float(run.get("local_step_size", 0.1)),
            schedule=str(run.get("schedule", "constant")),
            global_step_size=float(run.get("global_step_size", 1.0)),
            projection_radius=_parse_radius(run.get("projection_radius", "auto")),
            sampling_mode=str(run.get("sampling_mode", "iid")),
            seed=seed,
            averaging_offset=float(run.get("averaging_offset", 3.0)),
            start_state=int(run.get("start_state", 0)),
        )
    except ValueError as exc:
        raise SpecError(f"run block is invalid: {exc}") from exc


def _parse_radius(value):
    if value is None or value == "auto":
        return value
    if isinstance(value, str):
        if value.lower() in ("none", "off", "disabled"):
            return None
        raise SpecError(f"projection_radius {value!r} not understood")
    return float(value)


# --- family and system construction ----------------------------------------

def generate_base_mrp(spec: ExperimentSpec) -> Mrp:
    """Random dense MRP: uniform positive rows (hence ergodic), uniform rewards."""
    rng = base_mrp_stream(spec.base_seed)
    p = rng.uniform(0.1, 1.0, size=(spec.n, spec.n))
    p /= p.sum(axis=1, keepdims=True)
    r = rng.uniform(-spec.r_max, spec.r_max, size=spec.n)
    return Mrp(p=p, r=r, gamma=spec.gamma, r_max=spec.r_max)


def generate_family(spec: ExperimentSpec) -> list[Mrp]:
    base = generate_base_mrp(spec)
    het = HeterogeneitySpec(epsilon=spec.epsilon, epsilon1=spec.epsilon1)
    return perturb_family(base, het, spec.n_agents, family_stream(spec.base_seed))


def features_for(spec: ExperimentSpec) -> np.ndarray:
    return build_features(spec.n, spec.d, feature_stream(spec.base_seed))


def build_systems(agents: list[Mrp], phi) -> tuple[list[TdSystem], TdSystem]:
    systems = [td_system(m, phi) for m in agents]
    return systems, td_system(virtual_mrp(agents), phi)


# --- running and reporting ---------------------------------------------------

def plateau(values) -> float:
    """Mean over the last quartile of a per-round series."""
    values = np.asarray(values, dtype=np.float64)
    q = max(1, values.shape[0] // 4)
    return float(values[-q:].mean())


def max_workers() -> int:
    env = os.environ.get("FEDTD_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def write_trace_csv(path, trace: RunTrace, virtual_sys: TdSystem, theta1_star: np.ndarray) -> None:
    delta = trace.global_iterates - theta1_star[None, :]
    dbar_col = np.einsum("td,de,te->t", delta, virtual_sys.feature_gram, delta)
    lines = [TRACE_HEADER]
    for t in range(trace.global_iterates.shape[0]):
        lines.append(",".join([
            str(t),
            str(float(trace.per_round_errors[t, 0])),
            str(float(trace.per_round_errors[t].min())),
            str(float(trace.per_round_errors[t].max())),
            str(float(trace.virtual_error[t])),
            str(float(dbar_col[t])),
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _one_run(agents, phi, systems, virtual_sys, cfg, csv_path):
    try:
        trace = run_fedtd(agents, phi, systems, virtual_sys, cfg)
    except DivergedError as exc:
        return {"seed": cfg.seed, "diverged": True, "diverged_round": exc.round_index}
    if csv_path is not None:
        write_trace_csv(csv_path, trace, virtual_sys, systems[0].theta_star)
    return {
        "seed": cfg.seed,
        "diverged": False,
        "plateau_err_agent1": plateau(trace.per_round_errors[:, 0]),
        "plateau_err_virtual": plateau(trace.virtual_error),
        "theta_tilde": trace.averaged_iterate.tolist(),
        "dbar_value_errors": trace.dbar_value_errors.tolist(),
        "trace": trace,
    }


def run_replicated(spec: ExperimentSpec, agents: list[Mrp], out_dir) -> dict:
    """Run every seed (in parallel up to FEDTD_THREADS), write CSVs and a summary."""
    if not spec.seeds:
        raise SpecError("run block must list at least one seed")
    phi = features_for(spec)
    n_run = int(spec.run.get("n_agents", spec.n_agents))
    sub_agents = agents[:n_run]
    systems, virtual_sys = build_systems(sub_agents, phi)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def task(seed):
        cfg = fed_config(spec, seed, n_agents=n_run)
        return _one_run(sub_agents, phi, systems, virtual_sys, cfg, out_dir / f"trace_seed{seed}.csv")

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        results = list(pool.map(task, spec.seeds))

    ok = [r for r in results if not r["diverged"]]
    summary = {
        "config": {"family": _family_echo(spec), "run": spec.run, "seeds": list(spec.seeds)},
        "per_seed": [
            {k: v for k, v in r.items() if k != "trace"} for r in results
        ],
        "n_diverged": sum(r["diverged"] for r in results),
        "all_diverged": bool(results) and all(r["diverged"] for r in results),
    }
    if ok:
        summary["plateau_err_agent1_mean"] = float(np.mean([r["plateau_err_agent1"] for r in ok]))
        summary["plateau_err_agent1_std"] = float(np.std([r["plateau_err_agent1"] for r in ok]))
    _dump_json(out_dir / "summary.json", summary)

    if spec.emit_svg and ok:
        curves = np.stack([r["trace"].per_round_errors[:, 0] for r in ok])
        mean = curves.mean(axis=0)
        std = curves.std(axis=0)
        svg = svgchart.line_chart(
            [{"label": "mean", "y": mean, "band_lo": np.maximum(mean - std, 1e-300), "band_hi": mean + std}],
            title="global error against agent 1",
            xlabel="round", ylabel="squared error",
        )
        (out_dir / "trace.svg").write_text(svg, encoding="utf-8")
    return summary


def run_sweep(spec: ExperimentSpec, agents: list[Mrp], out_dir) -> dict:
    """Plateau errors across agent counts, with speedup ratios against N=1."""
    counts = spec.agent_counts
    if counts is None or len(counts) < 2 or 1 not in counts:
        raise SpecError("sweep needs agent_counts with at least two entries including 1")
    if not spec.seeds:
        raise SpecError("run block must list at least one seed")
    phi = features_for(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    prepared = {}
    for n_run in sorted(set(counts)):
        sub = agents[:n_run]
        prepared[n_run] = (sub, *build_systems(sub, phi))

    def task(item):
        n_run, seed = item
        sub, systems, virtual_sys = prepared[n_run]
        cfg = fed_config(spec, seed, n_agents=n_run)
        return n_run, _one_run(sub, phi, systems, virtual_sys, cfg, None)

    jobs = [(n_run, seed) for n_run in sorted(set(counts)) for seed in spec.seeds]
    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        results = list(pool.map(task, jobs))

    per_count: dict[int, list] = {}
    curves: dict[int, list] = {}
    for n_run, r in results:
        per_count.setdefault(n_run, []).append(r)
        if not r["diverged"]:
            curves.setdefault(n_run, []).append(r["trace"].per_round_errors[:, 0])

    table = {}
    for n_run, rs in sorted(per_count.items()):
        vals = [r["plateau_err_agent1"] for r in rs if not r["diverged"]]
        table[n_run] = {
            "plateau_mean": float(np.mean(vals)) if vals else None,
            "plateau_std": float(np.std(vals)) if vals else None,
            "n_diverged": sum(r["diverged"] for r in rs),
        }
    base = table.get(1, {}).get("plateau_mean")
    for n_run, entry in table.items():
        entry["speedup_vs_1"] = (
            base / entry["plateau_mean"] if base and entry["plateau_mean"] else None
        )
    means = [table[c]["plateau_mean"] for c in sorted(table)]
    monotone = all(
        a is not None and b is not None and b < a for a, b in zip(means, means[1:])
    )
    result = {
        "config": {"family": _family_echo(spec), "run": spec.run, "agent_counts": sorted(set(counts))},
        "per_agent_count": {str(k): v for k, v in sorted(table.items())},
        "plateau_strictly_decreasing": monotone,
    }
    _dump_json(out_dir / "sweep.json", result)

    if spec.emit_svg and curves:
        series = []
        for n_run in sorted(curves):
            stack = np.stack(curves[n_run])
            series.append({"label": f"N={n_run}", "y": stack.mean(axis=0)})
        svg = svgchart.line_chart(series, title="plateau ordering across agent counts",
                                  xlabel="round", ylabel="squared error")
        (out_dir / "sweep.svg").write_text(svg, encoding="utf-8")
    return result


def bounds_report(spec: ExperimentSpec, agents: list[Mrp], out_dir) -> dict:
    """Empirical gaps of the family against the first-order bounds."""
    phi = features_for(spec)
    systems, virtual_sys = build_systems(agents, phi)
    eps_hat, eps1_hat = realized_heterogeneity(agents)
    inp = bound_inputs_from_systems(systems, eps_hat, eps1_hat, spec.n, spec.gamma, spec.r_max)
    report = verify_family_bounds(systems, virtual_sys, inp, rng=feature_stream(spec.base_seed))
    report["declared_levels"] = {"epsilon": spec.epsilon, "epsilon1": spec.epsilon1}
    report["realized_levels"] = {"epsilon": eps_hat, "epsilon1": eps1_hat}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(out_dir / "bounds.json", report)
    return report


def run_meanpath_to_limit(agents, phi, systems, virtual_sys, alpha_l, alpha_g,
                          chunk: int = 4000, max_rounds: int = 400_000,
                          inc_tol: float = 1e-14) -> tuple[np.ndarray, int, float]:
    """Iterate deterministic averaging in chunks until updates stall.

    Returns (final iterate, rounds used, final per-round increment).  The
    increment decays geometrically under a Schur-stable step, so stalling at
    ``inc_tol`` puts the iterate well inside 1e-8 of the limit for any
    reasonable contraction factor.
    """
    theta = np.zeros(phi.shape[1])
    total = 0
    inc = np.inf
    while total < max_rounds:
        cfg = FedConfig(
            n_agents=len(agents), local_steps=1, rounds=chunk, local_step_size=alpha_l,
            global_step_size=alpha_g, projection_radius=None, sampling_mode="meanpath",
            seed=0, theta0=theta,
        )
        trace = run_fedtd(agents, phi, systems, virtual_sys, cfg)
        inc = float(np.abs(trace.global_iterates[-1] - trace.global_iterates[-2]).max())
        theta = trace.global_iterates[-1]
        total += chunk
        if inc <= inc_tol:
            break
    return theta, total, inc


def bias_report(spec: ExperimentSpec, agents: list[Mrp], alpha: float, out_dir) -> dict:
    """Simulated two-agent mean-path limit against the closed form."""
    if len(agents) != 2:
        raise SpecError("bias check needs a family with exactly 2 agents")
    phi = features_for(spec)
    systems, virtual_sys = build_systems(agents, phi)
    e1_cf, e2_cf = meanpath_bias_limits(systems[0], systems[1], alpha)  # may raise NotSchurStableError
    theta, rounds_used, inc = run_meanpath_to_limit(
        agents, phi, systems, virtual_sys, alpha_l=alpha, alpha_g=1.0
    )
    e1_sim = theta - systems[0].theta_star
    e2_sim = theta - systems[1].theta_star
    report = {
        "alpha": alpha,
        "rounds_used": rounds_used,
        "final_increment": inc,
        "closed_form_e1": e1_cf.tolist(),
        "closed_form_e2": e2_cf.tolist(),
        "simulated_e1": e1_sim.tolist(),
        "simulated_e2": e2_sim.tolist(),
        "max_abs_deviation": float(max(np.abs(e1_sim - e1_cf).max(), np.abs(e2_sim - e2_cf).max())),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(out_dir / "bias_check.json", report)
    return report


def mixing_report(spec: ExperimentSpec, agents: list[Mrp], eps_bar: float, cap: int) -> dict:
    """Per-agent mixing times, the family max, and the theory-prescribed block count."""
    tau_max, reports = slowest_mixing_time([m.p for m in agents], eps_bar, cap)
    out = {
        "eps_bar": eps_bar,
        "per_agent": [
            {"tau": r.tau, "saturated": r.saturated, "rho": r.rho, "m_fit": r.m_fit} for r in reports
        ],
        "family_max": tau_max,
        "any_saturated": any(r.saturated for r in reports),
    }
    if "rounds" in spec.run and "local_steps" in spec.run:
        k = int(spec.run["local_steps"])
        rounds = int(spec.run["rounds"])
        phi = features_for(spec)
        _, virtual_sys = build_systems(agents, phi)
        if spec.run.get("schedule", "constant") == "theory":
            offset = float(spec.run.get("averaging_offset", 3.0))
            nu = (1.0 - virtual_sys.gamma) * virtual_sys.lambda_min
            alpha_final = 8.0 / (nu * (offset + rounds + 1.0))
        else:
            alpha_final = k * float(spec.run.get("local_step_size", 0.1)) * float(
                spec.run.get("global_step_size", 1.0))
        target = min(max(alpha_final**2, 1e-300), 0.999999)
        tau_theory, _ = slowest_mixing_time([m.p for m in agents], target, cap)
        out["theory"] = {
            "alpha_final": alpha_final,
            "tau_mix_alpha_sq": tau_theory,
            "tau_blocks": int(np.ceil(tau_theory / k)),
        }
    return out


def _family_echo(spec: ExperimentSpec) -> dict:
    return {
        "n": spec.n, "d": spec.d, "gamma": spec.gamma, "r_max": spec.r_max,
        "epsilon": spec.epsilon, "epsilon1": spec.epsilon1,
        "n_agents": spec.n_agents, "seed": spec.base_seed,
    }


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def pairwise_heterogeneity_lines(agents: list[Mrp]) -> list[str]:
    """Human-readable realized divergence per unordered pair (both orderings folded in)."""
    lines = []
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            eps = max(kernel_heterogeneity(agents[i].p, agents[j].p),
                      kernel_heterogeneity(agents[j].p, agents[i].p))
            eps1 = reward_heterogeneity(agents[i].r, agents[j].r)
            lines.append(f"pair ({i + 1},{j + 1}): kernel={eps:.6g} reward={eps1:.6g}")
    return lines
