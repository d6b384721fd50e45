"""Empirical measurements of the theory: propagation of chaos, Rademacher
complexity of the per-particle cost class, and value convergence in N.

Everything here is read-only with respect to trained parameters and fully
seeded; a report embeds the inputs needed to reproduce it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DivergenceError, TrainingError
from .features import FeatureBasis, w1_distance_1d
from .model import InitialLaw, ProblemSpec, generate_noise, sample_initial
from .network import AdamParams, AdamState, NetSpec, adam_step, make_network
from .rollout import mean_field_rollout, rollout_cost, simulate
from .training import TrainConfig, train


# ---------------------------------------------------------------------------
# propagation of chaos
# ---------------------------------------------------------------------------

@dataclass
class PocStudyReport:
    n_values: List[int]
    mean_sup_w1: List[float]          # per N: mean over replications of sup_j W1
    mean_w1_curves: List[np.ndarray]  # per N: mean over replications of W1 at each step
    slope: float
    intercept: float
    cost_gaps: List[float]            # per N: mean |J^N - J_ref|
    ref_cost: float
    n_ref: int
    n_replications: int
    seeds: dict

    def to_dict(self):
        return {
            "n_values": self.n_values,
            "mean_sup_w1": self.mean_sup_w1,
            "slope": self.slope,
            "intercept": self.intercept,
            "cost_gaps": self.cost_gaps,
            "ref_cost": self.ref_cost,
            "n_ref": self.n_ref,
            "n_replications": self.n_replications,
            "seeds": self.seeds,
        }


def poc_study(problem: ProblemSpec, policy, basis: FeatureBasis, initial_law: InitialLaw,
              n_values, n_ref=None, n_replications=8, seed=0) -> PocStudyReport:
    """W1 decay of the coupled empirical measure against the mean-field law.

    The law of X_j is proxied by probe particles riding a large reference
    ensemble (independent noise), so the comparison follows the decoupled
    Z-process construction rather than another coupled system. For each N the
    study reports the mean over replications of sup_j W1(mu_j^N, law proxy),
    and fits a log-log slope over the N grid.
    """
    n_values = sorted(int(n) for n in n_values)
    if n_ref is None:
        n_ref = 10 * max(n_values)
    if n_ref <= max(n_values):
        raise ConfigurationError("n_ref must exceed every studied N")
    if problem.space.dim != 1:
        raise ConfigurationError("poc_study uses the exact 1-d W1; state dim must be 1")

    ref_ens = sample_initial(initial_law, n_ref, seed + 1, problem.space)
    ref_bank = generate_noise(n_ref, problem.horizon_steps, problem.noise_dim,
                              problem.noise_law, seed + 2)
    probe_states = sample_initial(initial_law, n_ref, seed + 3, problem.space).states
    probe_bank = generate_noise(n_ref, problem.horizon_steps, problem.noise_dim,
                                problem.noise_law, seed + 4)
    run = mean_field_rollout(problem, policy, basis, ref_ens, ref_bank,
                             probe_states, probe_bank, record=True)
    law_samples = [np.sort(s.ravel()) for s in run.probe_traj.states]
    ref_cost = float(np.mean(run.probe_costs))

    mean_sup, curves, gaps = [], [], []
    for n_idx, n in enumerate(n_values):
        sups, costs = [], []
        curve = np.zeros(problem.horizon_steps + 1)
        for rep in range(n_replications):
            s = seed + 1000 * (n_idx + 1) + 10 * rep
            ens0 = sample_initial(initial_law, n, s + 5, problem.space)
            bank = generate_noise(n, problem.horizon_steps, problem.noise_dim,
                                  problem.noise_law, s + 6)
            total, traj = rollout_cost(problem, policy, basis, ens0, bank, record=True)
            w1s = np.array([
                w1_distance_1d(st.ravel(), law_samples[j], b_sorted=True)
                for j, st in enumerate(traj.states)
            ])
            sups.append(w1s.max())
            curve += w1s
            costs.append(float(ad.value_of(total)))
        mean_sup.append(float(np.mean(sups)))
        curves.append(curve / n_replications)
        gaps.append(float(np.mean(np.abs(np.asarray(costs) - ref_cost))))
    slope, intercept = np.polyfit(np.log(n_values), np.log(mean_sup), 1)
    return PocStudyReport(
        n_values=n_values, mean_sup_w1=mean_sup, mean_w1_curves=curves,
        slope=float(slope), intercept=float(intercept), cost_gaps=gaps,
        ref_cost=ref_cost, n_ref=n_ref, n_replications=n_replications,
        seeds={"base": seed})


# ---------------------------------------------------------------------------
# Rademacher complexity
# ---------------------------------------------------------------------------

@dataclass
class RademacherResult:
    n: int
    estimate: float
    draw_values: List[float]
    discarded_draws: int


@dataclass
class RademacherReport:
    n_values: List[int]
    estimates: List[float]
    n_sigma_draws: int
    inner_iters: int
    n_starts: int
    n_ref: int
    seeds: dict
    results: List[RademacherResult] = field(default_factory=list)

    def to_dict(self):
        return {
            "n_values": self.n_values, "estimates": self.estimates,
            "n_sigma_draws": self.n_sigma_draws, "inner_iters": self.inner_iters,
            "n_starts": self.n_starts, "n_ref": self.n_ref, "seeds": self.seeds,
            "note": "inner sup approximated by multi-start gradient ascent; "
                    "estimates are lower bounds of the empirical supremum",
        }


def rademacher_estimate(problem: ProblemSpec, basis: FeatureBasis, spec: NetSpec,
                        initial_law: InitialLaw, n, n_sigma_draws=20, inner_iters=200,
                        n_starts=5, lr=3e-3, n_ref=None, seed=0,
                        trainable=True) -> RademacherResult:
    """E_sigma sup_theta (1/N) sum_i sigma_i J(X_0^(i), alpha_theta, xi^(i)).

    Per-particle costs are pathwise costs of independent single-particle
    rollouts driven by the reference-law statistics of a large coupled
    ensemble evolving under the same candidate policy (the decoupled
    construction). The inner supremum is approximated from below by
    multi-start gradient ascent; a diverging inner run discards that draw.
    """
    if n_ref is None:
        n_ref = max(2 * n, 500)
    ref_ens = sample_initial(initial_law, n_ref, seed + 1, problem.space)
    ref_bank = generate_noise(n_ref, problem.horizon_steps, problem.noise_dim,
                              problem.noise_law, seed + 2)
    probes = sample_initial(initial_law, n, seed + 3, problem.space).states
    probe_bank = generate_noise(n, problem.horizon_steps, problem.noise_dim,
                                problem.noise_law, seed + 4)
    sigma_rng = np.random.default_rng(seed + 9)
    draw_values = []
    discarded = 0
    for _ in range(n_sigma_draws):
        signs = sigma_rng.integers(0, 2, size=n) * 2.0 - 1.0
        sign_col = signs[:, None]
        try:
            best = -math.inf
            for start in range(n_starts):
                net = make_network(
                    _seeded(spec, seed + 17 + 1000 * start), problem.space,
                    basis.n_features(problem.space.dim), problem.control_dim,
                    problem.horizon_steps)
                val = _ascend(problem, basis, net, ref_ens, ref_bank, probes,
                              probe_bank, sign_col, inner_iters if trainable else 0, lr)
                best = max(best, val)
            draw_values.append(best)
        except (DivergenceError, TrainingError):
            discarded += 1
    if not draw_values:
        raise TrainingError("every rademacher draw diverged")
    return RademacherResult(n=n, estimate=float(np.mean(draw_values)),
                            draw_values=[float(v) for v in draw_values],
                            discarded_draws=discarded)


def _seeded(spec: NetSpec, weight_seed):
    from dataclasses import replace
    return replace(spec, weight_seed=weight_seed)


def _ascend(problem, basis, net, ref_ens, ref_bank, probes, probe_bank,
            sign_col, inner_iters, lr):
    def objective(with_grad):
        if not with_grad:
            run = mean_field_rollout(problem, net, basis, ref_ens, ref_bank,
                                     probes, probe_bank)
            return float(np.mean(sign_col.ravel() * run.probe_costs)), None
        tape = ad.Tape()
        bound = net.bind(tape)
        run = mean_field_rollout(problem, net, basis, ref_ens, ref_bank,
                                 probes, probe_bank, bound=bound)
        obj = ad.mean_all(ad.mul(run.probe_cost_node, sign_col))
        tape.backward(obj)
        return float(obj.value), net.grad_from(bound)

    if inner_iters == 0:
        val, _ = objective(False)
        return val
    state = AdamState.zeros(net.n_params)
    hyper = AdamParams(lr=lr)
    best = -math.inf
    for _ in range(inner_iters):
        val, grad = objective(True)
        best = max(best, val)  # every visited theta is a class member
        adam_step(net.theta, -grad, state, hyper)  # ascent
    final, _ = objective(False)
    return max(best, final)


def rademacher_study(problem, basis, spec, initial_law, n_values, n_sigma_draws=20,
                     inner_iters=200, n_starts=5, lr=3e-3, n_ref=None,
                     seed=0) -> RademacherReport:
    results = [
        rademacher_estimate(problem, basis, spec, initial_law, n,
                            n_sigma_draws=n_sigma_draws, inner_iters=inner_iters,
                            n_starts=n_starts, lr=lr, n_ref=n_ref, seed=seed)
        for n in n_values
    ]
    return RademacherReport(
        n_values=[r.n for r in results], estimates=[r.estimate for r in results],
        n_sigma_draws=n_sigma_draws, inner_iters=inner_iters, n_starts=n_starts,
        n_ref=n_ref if n_ref is not None else -1, seeds={"base": seed}, results=results)


# ---------------------------------------------------------------------------
# value convergence in N
# ---------------------------------------------------------------------------

@dataclass
class ValueConvergenceReport:
    n_values: List[int]
    trained_values: List[float]
    oracle_value: float
    gaps: List[float]
    trend_ok: bool
    slack: float

    def to_dict(self):
        return {"n_values": self.n_values, "trained_values": self.trained_values,
                "oracle_value": self.oracle_value, "gaps": self.gaps,
                "trend_ok": self.trend_ok, "slack": self.slack}


def value_convergence_study(problem: ProblemSpec, basis: FeatureBasis, spec: NetSpec,
                            n_values, base_config: TrainConfig, oracle_value,
                            slack=0.0) -> ValueConvergenceReport:
    """Train per N with shared hyperparameters and report |V^N - v| gaps.

    trend_ok records whether the gap at the largest N stays within `slack`
    of the gap at the smallest N.
    """
    from dataclasses import replace
    n_values = sorted(int(n) for n in n_values)
    trained = []
    for n in n_values:
        cfg = replace(base_config, n_particles=n)
        report, _ = train(problem, basis, spec, cfg)
        trained.append(report.final_loss)
    gaps = [abs(v - oracle_value) for v in trained]
    trend_ok = gaps[-1] <= gaps[0] + slack
    return ValueConvergenceReport(
        n_values=n_values, trained_values=[float(v) for v in trained],
        oracle_value=float(oracle_value), gaps=[float(g) for g in gaps],
        trend_ok=bool(trend_ok), slack=float(slack))
