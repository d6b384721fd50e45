"""End-to-end training: fixed noise bank, gradient loop, checkpoints, evaluation.

The design point: noise and initial particles are simulated once, before the
loop, and every iteration differentiates the pathwise cost of that single
simulation. Nothing is resampled between iterations, so (seeds, config)
determine the whole loss curve bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import CheckpointError, DivergenceError, TrainingError
from .features import FeatureBasis
from .model import InitialLaw, NoiseBank, ProblemSpec, generate_noise, sample_initial
from .network import AdamParams, AdamState, NetSpec, PolicyNetwork, adam_step, make_network
from .rollout import loss_and_grad, loss_only, simulate


@dataclass
class TrainConfig:
    initial_law: InitialLaw
    iterations: int = 6000
    n_particles: int = 2000
    lr: float = 1e-3
    lr_schedule: str = "step"  # "constant" | "step": x0.5 at 50% and 75% of the run
    adam: AdamParams = field(default_factory=AdamParams)
    noise_seed: int = 0
    init_seed: int = 1
    weight_seed: int = 2
    weight_decay: float = 0.0
    log_every: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.iterations < 1:
            raise TrainingError("iterations must be >= 1")
        if self.lr_schedule not in ("constant", "step"):
            raise TrainingError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, i):
        if self.lr_schedule == "constant":
            return self.lr
        lr = self.lr
        if i >= 0.75 * self.iterations:
            return lr * 0.25
        if i >= 0.5 * self.iterations:
            return lr * 0.5
        return lr

    def describe(self):
        return {
            "iterations": self.iterations, "n_particles": self.n_particles,
            "lr": self.lr, "lr_schedule": self.lr_schedule,
            "adam": self.adam.describe(), "initial_law": self.initial_law.describe(),
            "seeds": {"noise": self.noise_seed, "init": self.init_seed,
                      "weights": self.weight_seed},
            "weight_decay": self.weight_decay,
        }


@dataclass
class TrainReport:
    losses: np.ndarray
    final_loss: float
    best_iteration: int
    wallclock_s: float
    config_hash: str
    noise_sha256: str
    n_params: int
    seeds: dict
    aborted_at: Optional[int] = None

    def to_dict(self):
        return {
            "final_loss": self.final_loss,
            "best_iteration": self.best_iteration,
            "iterations": int(self.losses.size),
            "initial_loss": float(self.losses[0]) if self.losses.size else None,
            "wallclock_s": self.wallclock_s,
            "config_hash": self.config_hash,
            "noise_sha256": self.noise_sha256,
            "n_params": self.n_params,
            "seeds": self.seeds,
            "aborted_at": self.aborted_at,
        }


def train_hash(problem: ProblemSpec, basis: FeatureBasis, spec: NetSpec, config: TrainConfig):
    blob = json.dumps({
        "problem": problem.describe(), "basis": basis.describe(),
        "net": spec.describe(), "train": config.describe(),
    }, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def train(problem: ProblemSpec, basis: FeatureBasis, spec: NetSpec, config: TrainConfig,
          log=None, checkpoint_cb=None):
    """Run the learning loop; returns (TrainReport, trained PolicyNetwork).

    The returned network carries the best-loss parameters seen during the run,
    and the report's final_loss is the loss at those parameters, i.e. the
    value-function approximation of the run. `checkpoint_cb(i, best_theta)`
    fires every `config.checkpoint_every` iterations when both are set.
    """
    spec = _respec_seed(spec, config.weight_seed)
    net = make_network(spec, problem.space, basis.n_features(problem.space.dim),
                       problem.control_dim, problem.horizon_steps)
    ens0 = sample_initial(config.initial_law, config.n_particles, config.init_seed,
                          problem.space)
    bank = generate_noise(config.n_particles, problem.horizon_steps, problem.noise_dim,
                          problem.noise_law, config.noise_seed)
    cfg_hash = train_hash(problem, basis, spec, config)
    noise_hash = bank.sha256()

    losses = np.full(config.iterations, np.nan)
    adam_state = AdamState.zeros(net.n_params)
    best_loss = np.inf
    best_iter = -1
    best_theta = net.theta.copy()
    t0 = time.perf_counter()
    aborted_at = None
    for i in range(config.iterations):
        try:
            loss, grad = loss_and_grad(problem, net, basis, ens0, bank)
            losses[i] = loss
            if loss < best_loss:
                best_loss, best_iter = loss, i
                best_theta[...] = net.theta
            if config.weight_decay:
                grad = grad + config.weight_decay * net.theta
            adam_step(net.theta, grad, adam_state, config.adam, lr=config.lr_at(i))
        except (DivergenceError, TrainingError) as err:
            aborted_at = i
            report = _report(losses[:i], best_loss, best_iter, t0, cfg_hash,
                             noise_hash, net.n_params, config, aborted_at)
            raise TrainingError(f"training aborted at iteration {i}: {err}",
                                iteration=i, report=report, best_theta=best_theta) from err
        if log is not None and config.log_every and i % config.log_every == 0:
            log(i, loss)
        if (checkpoint_cb is not None and config.checkpoint_every
                and i and i % config.checkpoint_every == 0):
            checkpoint_cb(i, best_theta)
    if bank.sha256() != noise_hash:
        raise TrainingError("noise bank mutated during training", iteration=config.iterations)
    net.set_theta(best_theta)
    report = _report(losses, best_loss, best_iter, t0, cfg_hash, noise_hash,
                     net.n_params, config, aborted_at)
    return report, net


def _respec_seed(spec: NetSpec, weight_seed):
    if spec.weight_seed == weight_seed:
        return spec
    from dataclasses import replace
    return replace(spec, weight_seed=weight_seed)


def _report(losses, best_loss, best_iter, t0, cfg_hash, noise_hash, n_params,
            config, aborted_at):
    return TrainReport(
        losses=np.asarray(losses, dtype=float), final_loss=float(best_loss),
        best_iteration=int(best_iter), wallclock_s=time.perf_counter() - t0,
        config_hash=cfg_hash, noise_sha256=noise_hash, n_params=n_params,
        seeds={"noise": config.noise_seed, "init": config.init_seed,
               "weights": config.weight_seed},
        aborted_at=aborted_at)


# ---------------------------------------------------------------------------
# post-training evaluation on fresh randomness
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    mean_cost: float
    std_cost: float
    costs: List[float]
    terminal_order_parameters: Optional[List[float]] = None

    def to_dict(self):
        return {"mean_cost": self.mean_cost, "std_cost": self.std_cost,
                "costs": self.costs,
                "terminal_order_parameters": self.terminal_order_parameters}


def evaluate(problem: ProblemSpec, basis: FeatureBasis, net: PolicyNetwork,
             initial_law: InitialLaw, n_eval, replications=1,
             fresh_noise_seed=10_000, fresh_init_seed=None) -> EvalReport:
    """Replications of the trained policy on freshly generated randomness.

    Each replication r uses noise seed fresh_noise_seed + r and initial seed
    fresh_init_seed + r (fresh_noise_seed + 500_000 + r when unset), so the
    whole evaluation is reproducible from two integers.
    """
    if replications < 1:
        raise TrainingError("need at least one evaluation replication")
    if fresh_init_seed is None:
        fresh_init_seed = fresh_noise_seed + 500_000
    costs = []
    r_terms = [] if problem.space.is_torus else None
    for r in range(replications):
        ens0 = sample_initial(initial_law, n_eval, fresh_init_seed + r, problem.space)
        bank = generate_noise(n_eval, problem.horizon_steps, problem.noise_dim,
                              problem.noise_law, fresh_noise_seed + r)
        if r_terms is None:
            costs.append(loss_only(problem, net, basis, ens0, bank))
        else:
            traj = simulate(problem, net, basis, ens0, bank)
            costs.append(traj.cost)
            r_terms.append(traj.stats[-1].order_parameter())
    mean = float(np.mean(costs))
    std = float(np.std(costs, ddof=1)) if replications > 1 else 0.0
    return EvalReport(mean_cost=mean, std_cost=std, costs=[float(c) for c in costs],
                      terminal_order_parameters=r_terms)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"MFCKPT01"


def checkpoint_save(path, theta, meta: dict):
    """Write JSON header + little-endian float64 weights; byte-stable."""
    theta = np.ascontiguousarray(np.asarray(theta, dtype="<f8"))
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(theta.tobytes())


def checkpoint_load(path, expect_config_hash=None, force=False):
    """Read (theta, meta); refuses a config-hash mismatch unless forced."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(hlen).decode())
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if expect_config_hash is not None and meta.get("config_hash") != expect_config_hash:
        if not force:
            raise CheckpointError(
                f"checkpoint config hash {meta.get('config_hash')!r} does not match "
                f"expected {expect_config_hash!r}; pass force to load anyway")
        warnings.warn("loading checkpoint despite config hash mismatch", stacklevel=2)
    return theta, meta
