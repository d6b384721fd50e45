"""Coupled N-particle rollouts and the pathwise cost they accumulate.

One step of the recursion:

    X_{j+1}^(i) = X_j^(i) + b(j, X_j^(i), mu_j^N, a_j^(i))
                          + sigma(j, X_j^(i), mu_j^N, a_j^(i)) . xi_j^(i)

with the empirical statistics mu_j^N computed once per step and shared by all
particles, and a_j^(i) the policy output. The pathwise cost is

    sum_j exp(-beta j dt) dt (1/N) sum_i l(j, X_j^(i), mu_j^N, a_j^(i))
        + w_T (1/N) sum_i G(X_T^(i), mu_T^N).

When a tape is supplied everything, including the empirical statistics, is
recorded, so the gradient sees every coupling path between particles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError
from .features import FeatureBasis, MeasureStats, compute_features
from .model import Ensemble, NoiseBank, ProblemSpec, canonicalize
from .network import PolicyNetwork

DIVERGENCE_BOUND = 1e6

Policy = Union[PolicyNetwork, Callable, None]


@dataclass
class Trajectory:
    """Everything one rollout produced, snapshotted as plain arrays."""

    states: List[np.ndarray]          # T+1 entries of (N, d)
    controls: List[np.ndarray]        # T entries of (N, control_dim)
    stats: List[MeasureStats]         # T+1 entries (value form)
    running_terms: List[float]        # weighted per-step mean running cost
    terminal_term: float
    cost: float

    @property
    def horizon(self):
        return len(self.controls)

    @property
    def n(self):
        return self.states[0].shape[0]


def _controls_of(policy: Policy, j, states, stats, bound, control_dim=1):
    if policy is None:
        n = ad.value_of(states).shape[0]
        return np.zeros((n, control_dim))
    if isinstance(policy, PolicyNetwork):
        return policy.forward(j, states, stats, bound=bound)
    return policy(j, states, stats)


def _stats_values(stats: MeasureStats) -> MeasureStats:
    conv = ad.value_of
    return MeasureStats(
        features=np.asarray(conv(stats.features)).copy(),
        mean=np.asarray(conv(stats.mean)).copy(),
        second_moment=float(conv(stats.second_moment)),
        c1=None if stats.c1 is None else float(conv(stats.c1)),
        s1=None if stats.s1 is None else float(conv(stats.s1)),
        n=stats.n,
    )


def _check_states(problem, values, j):
    if not np.isfinite(values).all():
        bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise DivergenceError(
            f"non-finite state at step {j}, particle {bad}", step=j, particle=bad)
    if not problem.space.is_torus:
        peak = np.abs(values).max()
        if peak > DIVERGENCE_BOUND:
            bad = int(np.abs(values).max(axis=1).argmax())
            raise DivergenceError(
                f"state magnitude {peak:.3e} exceeds {DIVERGENCE_BOUND:.0e} "
                f"at step {j}, particle {bad}", step=j, particle=bad)


def advance(problem: ProblemSpec, policy: Policy, basis: FeatureBasis,
            j, states, noise_col, bound=None, detach_policy_features=False):
    """One recursion step on raw (possibly taped) states.

    Returns (new_states, controls, stats). Statistics are computed once from
    the incoming states and shared by every particle.
    """
    stats = compute_features(basis, states, problem.space)
    stats_net = stats
    if detach_policy_features:
        stats_net = replace(stats, features=ad.detach(stats.features))
    controls = _controls_of(policy, j, states, stats_net, bound, problem.control_dim)
    b = problem.drift(j, states, stats, controls)
    sig = problem.diffusion(j, states, stats, controls)
    new = ad.add(ad.add(states, b), ad.matvec_particles(sig, noise_col))
    if problem.space.is_torus:
        new = ad.wrap_angle(new)
    _check_states(problem, ad.value_of(new), j + 1)
    return new, controls, stats


def step(problem: ProblemSpec, policy: Policy, basis: FeatureBasis,
         ens: Ensemble, noise_col, tape: Optional[ad.Tape] = None):
    """Ensemble-level step: ens_j -> (ens_{j+1}, controls, stats)."""
    bound = None
    states = ens.states
    if tape is not None and isinstance(policy, PolicyNetwork):
        bound = policy.bind(tape)
        states = ad.leaf(states, tape)
    new, controls, stats = advance(problem, policy, basis, ens.step, states, noise_col, bound)
    out = Ensemble(step=ens.step + 1, states=ad.value_of(new).copy(), space=problem.space)
    return out, controls, stats


def _terminal_term(problem, states, stats):
    if problem.terminal_cost is None:
        return 0.0
    g = problem.terminal_cost(states, stats)
    return ad.mul(ad.mean_all(g), problem.terminal_weight())


def rollout_cost(problem: ProblemSpec, policy: Policy, basis: FeatureBasis,
                 ens0: Ensemble, bank: NoiseBank, bound=None, record=False,
                 detach_policy_features=False):
    """Run the full horizon; returns (cost_node_or_float, Trajectory or None).

    The cost node is a taped scalar when `bound` ties a network to a tape,
    otherwise a plain float.
    """
    t_steps = problem.horizon_steps
    if bank.tensor.shape[1] != t_steps:
        raise DivergenceError(
            f"noise bank has {bank.tensor.shape[1]} steps, problem wants {t_steps}")
    states = ens0.states
    total = 0.0
    traj_states = [ens0.states]
    traj_controls = []
    traj_stats = []
    running_terms = []
    for j in range(t_steps):
        stats = compute_features(basis, states, problem.space)
        stats_net = stats
        if detach_policy_features:
            stats_net = replace(stats, features=ad.detach(stats.features))
        controls = _controls_of(policy, j, states, stats_net, bound, problem.control_dim)
        lj = ad.mean_all(problem.running_cost(j, states, stats, controls))
        total = ad.add(total, ad.mul(lj, problem.running_weight(j)))
        b = problem.drift(j, states, stats, controls)
        sig = problem.diffusion(j, states, stats, controls)
        new = ad.add(ad.add(states, b), ad.matvec_particles(sig, bank.column(j)))
        if problem.space.is_torus:
            new = ad.wrap_angle(new)
        _check_states(problem, ad.value_of(new), j + 1)
        if record:
            traj_states.append(ad.value_of(new))
            traj_controls.append(ad.value_of(controls))
            traj_stats.append(_stats_values(stats))
            running_terms.append(float(ad.value_of(lj)) * problem.running_weight(j))
        states = new
    stats_t = compute_features(basis, states, problem.space)
    term = _terminal_term(problem, states, stats_t)
    total = ad.add(total, term)
    traj = None
    if record:
        traj_stats.append(_stats_values(stats_t))
        traj = Trajectory(states=traj_states, controls=traj_controls, stats=traj_stats,
                          running_terms=running_terms,
                          terminal_term=float(ad.value_of(term)),
                          cost=float(ad.value_of(total)))
    return total, traj


def simulate(problem, policy, basis, ens0, bank, detach_policy_features=False) -> Trajectory:
    """Inference rollout; no tape, full trajectory record."""
    _, traj = rollout_cost(problem, policy, basis, ens0, bank, record=True,
                           detach_policy_features=detach_policy_features)
    return traj


def pathwise_cost(problem: ProblemSpec, traj: Trajectory) -> float:
    """Recompute the pathwise cost from a stored trajectory.

    Independent of the accumulation done while rolling out; the two agree to
    fp-roundoff (checked by tests at 1e-12).
    """
    total = 0.0
    for j in range(traj.horizon):
        stats = traj.stats[j]
        lj = float(np.mean(ad.value_of(
            problem.running_cost(j, traj.states[j], stats, traj.controls[j]))))
        total += problem.running_weight(j) * lj
    if problem.terminal_cost is not None:
        g = float(np.mean(ad.value_of(
            problem.terminal_cost(traj.states[-1], traj.stats[-1]))))
        total += problem.terminal_weight() * g
    return total


def loss_and_grad(problem: ProblemSpec, net: PolicyNetwork, basis: FeatureBasis,
                  ens0: Ensemble, bank: NoiseBank, detach_policy_features=False):
    """Pathwise loss of one taped rollout and its exact reverse-mode gradient."""
    tape = ad.Tape()
    bound = net.bind(tape)
    loss, _ = rollout_cost(problem, net, basis, ens0, bank, bound=bound,
                           detach_policy_features=detach_policy_features)
    tape.backward(loss)
    return float(loss.value), net.grad_from(bound)


def loss_only(problem, policy, basis, ens0, bank):
    total, _ = rollout_cost(problem, policy, basis, ens0, bank)
    return float(ad.value_of(total))


# ---------------------------------------------------------------------------
# mean-field (decoupled) rollout: probes driven by a reference ensemble
# ---------------------------------------------------------------------------

@dataclass
class MeanFieldRun:
    """Probe particles following the law proxied by a large reference ensemble."""

    probe_costs: np.ndarray           # (N_probe,) per-probe pathwise costs
    probe_traj: Optional[Trajectory]
    ref_traj: Optional[Trajectory]
    ref_cost: float
    probe_cost_node: object = None    # taped (N_probe, 1) tensor when recording gradients


def mean_field_rollout(problem: ProblemSpec, policy: Policy, basis: FeatureBasis,
                       ref_ens0: Ensemble, ref_bank: NoiseBank,
                       probe_states0, probe_bank: NoiseBank,
                       bound=None, record=False) -> MeanFieldRun:
    """Evolve a coupled reference ensemble and independent probe particles.

    The reference ensemble follows the usual coupled recursion; probes follow
    the same dynamics but with statistics computed from the reference only,
    so distinct probes never interact and are i.i.d. draws from (a proxy of)
    the mean-field law. Probe noise must be independent of reference noise.
    """
    t_steps = problem.horizon_steps
    ref_states = ref_ens0.states
    probe_states = np.asarray(probe_states0, dtype=np.float64)
    n_probe = probe_states.shape[0]
    probe_cost = np.zeros((n_probe, 1))
    ref_cost = 0.0
    r_states, r_controls, r_stats = [ref_ens0.states], [], []
    p_states, p_controls = [np.asarray(probe_states0, dtype=np.float64)], []
    for j in range(t_steps):
        stats = compute_features(basis, ref_states, problem.space)
        # reference: coupled update and cost
        ref_controls = _controls_of(policy, j, ref_states, stats, bound, problem.control_dim)
        ref_l = ad.mean_all(problem.running_cost(j, ref_states, stats, ref_controls))
        ref_cost = ad.add(ref_cost, ad.mul(ref_l, problem.running_weight(j)))
        ref_b = problem.drift(j, ref_states, stats, ref_controls)
        ref_sig = problem.diffusion(j, ref_states, stats, ref_controls)
        ref_new = ad.add(ad.add(ref_states, ref_b),
                         ad.matvec_particles(ref_sig, ref_bank.column(j)))
        if problem.space.is_torus:
            ref_new = ad.wrap_angle(ref_new)
        _check_states(problem, ad.value_of(ref_new), j + 1)
        # probes: same recursion, reference statistics
        pr_controls = _controls_of(policy, j, probe_states, stats, bound, problem.control_dim)
        pr_l = problem.running_cost(j, probe_states, stats, pr_controls)
        probe_cost = ad.add(probe_cost, ad.mul(pr_l, problem.running_weight(j)))
        pr_b = problem.drift(j, probe_states, stats, pr_controls)
        pr_sig = problem.diffusion(j, probe_states, stats, pr_controls)
        pr_new = ad.add(ad.add(probe_states, pr_b),
                        ad.matvec_particles(pr_sig, probe_bank.column(j)))
        if problem.space.is_torus:
            pr_new = ad.wrap_angle(pr_new)
        _check_states(problem, ad.value_of(pr_new), j + 1)
        if record:
            r_states.append(ad.value_of(ref_new))
            r_controls.append(ad.value_of(ref_controls))
            r_stats.append(_stats_values(stats))
            p_states.append(ad.value_of(pr_new))
            p_controls.append(ad.value_of(pr_controls))
        ref_states, probe_states = ref_new, pr_new
    stats_t = compute_features(basis, ref_states, problem.space)
    if problem.terminal_cost is not None:
        w_t = problem.terminal_weight()
        ref_cost = ad.add(ref_cost, ad.mul(
            ad.mean_all(problem.terminal_cost(ref_states, stats_t)), w_t))
        probe_cost = ad.add(probe_cost, ad.mul(
            problem.terminal_cost(probe_states, stats_t), w_t))
    probe_traj = ref_traj = None
    if record:
        r_stats.append(_stats_values(stats_t))
        ref_traj = Trajectory(states=r_states, controls=r_controls, stats=r_stats,
                              running_terms=[], terminal_term=0.0,
                              cost=float(ad.value_of(ref_cost)))
        probe_traj = Trajectory(states=p_states, controls=p_controls, stats=r_stats,
                                running_terms=[], terminal_term=0.0,
                                cost=float(np.mean(ad.value_of(probe_cost))))
    return MeanFieldRun(
        probe_costs=np.asarray(ad.value_of(probe_cost)).ravel().copy(),
        probe_traj=probe_traj, ref_traj=ref_traj,
        ref_cost=float(ad.value_of(ref_cost)),
        probe_cost_node=probe_cost if isinstance(probe_cost, ad.Tensor) else None)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(problem: ProblemSpec, net: PolicyNetwork, basis: FeatureBasis,
               ens0: Ensemble, bank: NoiseBank, h=1e-5, n_coords=32):
    """Max relative error of the taped gradient against central differences.

    Coordinates are sampled per parameter block by largest gradient magnitude:
    central differences carry a cancellation floor of roughly eps*|L|/(2h),
    so near-dead coordinates compare as pure rounding noise while contributing
    nothing to path coverage. Taking the strongest coordinates of every layer
    still exercises each stage of the chain rule.
    """
    _, grad = loss_and_grad(problem, net, basis, ens0, bank)
    theta0 = net.theta.copy()
    coords = _spread_coords(net, grad, n_coords)

    def loss_fn(theta):
        net.set_theta(theta)
        try:
            return loss_only(problem, net, basis, ens0, bank)
        finally:
            net.set_theta(theta0)

    return ad.max_relative_grad_error(loss_fn, theta0, grad, h=h, coords=coords)


def _spread_coords(net, grad, n_coords):
    n = grad.size
    if n <= n_coords:
        return list(range(n))
    blocks = []
    off = 0
    for w, b in net._views(net.theta):
        blocks.append((off, off + w.size))
        off += w.size
        blocks.append((off, off + b.size))
        off += b.size
    per_block = max(1, n_coords // len(blocks))
    coords = []
    for lo, hi in blocks:
        mags = np.abs(grad[lo:hi])
        take = min(per_block, hi - lo)
        coords.extend(lo + np.argsort(mags)[::-1][:take])
    return sorted(set(int(c) for c in coords))
