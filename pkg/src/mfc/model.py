"""Problem instances, state spaces, ensembles, and the fixed noise bank."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, NumericalStateError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class StateSpace:
    """Euclidean R^d or the d-torus with period 2*pi per axis."""

    kind: str  # "euclidean" | "torus"
    dim: int

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus"):
            raise ConfigurationError(f"unknown state space kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("state space dim must be >= 1")

    @property
    def is_torus(self):
        return self.kind == "torus"


def euclidean(dim=1):
    return StateSpace("euclidean", dim)


def torus(dim=1):
    return StateSpace("torus", dim)


def canonicalize(space: StateSpace, states):
    """Wrap torus coordinates into [0, 2*pi); identity on Euclidean space."""
    states = np.asarray(states, dtype=np.float64)
    if np.isnan(states).any():
        raise NumericalStateError("canonicalize received NaN states")
    if space.is_torus:
        out = np.mod(states, TWO_PI)
        # np.mod of a tiny negative rounds up to the period itself
        out[out == TWO_PI] = 0.0
        return out
    return states


@dataclass
class Ensemble:
    """N particle states at one time step."""

    step: int
    states: np.ndarray  # (N, d)
    space: StateSpace

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ConfigurationError("ensemble states must be a nonempty (N, d) matrix")
        if not np.isfinite(self.states).all():
            raise NumericalStateError(f"non-finite ensemble state at step {self.step}")
        if self.space.is_torus:
            bad = (self.states < 0.0) | (self.states >= TWO_PI)
            if bad.any():
                raise NumericalStateError(
                    f"torus ensemble at step {self.step} has coordinates outside [0, 2pi)"
                )

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]


@dataclass(frozen=True)
class NoiseLaw:
    """Per-entry law of the noise tensor.

    Gaussian entries have standard deviation sqrt(dt) (Brownian increments);
    `truncate_k` optionally clips at k*sqrt(dt) for the compact-support regime.
    Uniform entries live on [-bound, bound].
    """

    kind: str = "gaussian"  # "gaussian" | "uniform"
    dt: float = 1.0
    bound: float = 1.0
    truncate_k: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ConfigurationError(f"unknown noise law {self.kind!r}")
        if self.kind == "gaussian" and self.dt <= 0:
            raise ConfigurationError("gaussian noise law needs dt > 0")
        if self.kind == "uniform" and self.bound <= 0:
            raise ConfigurationError("uniform noise law needs bound > 0")

    def describe(self):
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["dt"] = self.dt
            if self.truncate_k is not None:
                d["truncate_k"] = self.truncate_k
        else:
            d["bound"] = self.bound
        return d


@dataclass
class NoiseBank:
    """The pre-generated i.i.d. noise tensor, fixed across all training epochs."""

    tensor: np.ndarray  # (N, T, m)
    seed: int
    law: NoiseLaw

    def column(self, j):
        """Noise slice (N, m) feeding step j -> j+1."""
        return self.tensor[:, j, :]

    def sha256(self):
        return hashlib.sha256(np.ascontiguousarray(self.tensor).tobytes()).hexdigest()


def generate_noise(n, t, m, law: NoiseLaw, seed) -> NoiseBank:
    """Draw the (N, T, m) bank; bit-reproducible for a given seed."""
    if n < 1 or t < 1 or m < 1:
        raise ConfigurationError("noise bank dims must be positive")
    rng = np.random.default_rng(seed)
    if law.kind == "gaussian":
        scale = math.sqrt(law.dt)
        tensor = rng.normal(0.0, scale, size=(n, t, m))
        if law.truncate_k is not None:
            np.clip(tensor, -law.truncate_k * scale, law.truncate_k * scale, out=tensor)
    else:
        tensor = rng.uniform(-law.bound, law.bound, size=(n, t, m))
    return NoiseBank(tensor=tensor, seed=int(seed), law=law)


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution mu for sampling X_0^N.

    kinds:
      gaussian_diag(mean, var)           Euclidean only
      point_mass(point)                  any space
      uniform_torus                      torus only
      two_cluster_torus(centers, concentration)
          equal mixture of wrapped Gaussians, std = concentration**-0.5
      empirical(path)                    rows resampled i.i.d. from a CSV/npy file
    """

    kind: str
    mean: tuple = ()
    var: tuple = ()
    point: tuple = ()
    centers: tuple = (0.0, math.pi)
    concentration: float = 10.0
    path: str = ""

    def describe(self):
        d = {"kind": self.kind}
        if self.kind == "gaussian_diag":
            d["mean"] = list(self.mean)
            d["var"] = list(self.var)
        elif self.kind == "point_mass":
            d["point"] = list(self.point)
        elif self.kind == "two_cluster_torus":
            d["centers"] = list(self.centers)
            d["concentration"] = self.concentration
        elif self.kind == "empirical":
            d["path"] = self.path
        return d


def gaussian_diag(mean, var):
    mean = tuple(np.atleast_1d(np.asarray(mean, dtype=float)))
    var = tuple(np.atleast_1d(np.asarray(var, dtype=float)))
    if len(mean) != len(var):
        raise ConfigurationError("gaussian_diag mean and var must have equal length")
    if any(v < 0 for v in var):
        raise ConfigurationError("gaussian_diag variances must be nonnegative")
    return InitialLaw(kind="gaussian_diag", mean=mean, var=var)


def point_mass(point):
    return InitialLaw(kind="point_mass", point=tuple(np.atleast_1d(np.asarray(point, dtype=float))))


def uniform_torus():
    return InitialLaw(kind="uniform_torus")


def two_cluster_torus(centers=(0.0, math.pi), concentration=10.0):
    if concentration <= 0:
        raise ConfigurationError("two_cluster_torus concentration must be positive")
    return InitialLaw(kind="two_cluster_torus", centers=tuple(centers), concentration=float(concentration))


def empirical(path):
    return InitialLaw(kind="empirical", path=str(path))


def sample_initial(law: InitialLaw, n, seed, space: StateSpace) -> Ensemble:
    """Draw N i.i.d. initial states; deterministic under the seed."""
    if n < 1:
        raise ConfigurationError("need at least one particle")
    rng = np.random.default_rng(seed)
    d = space.dim
    if law.kind == "point_mass":
        p = np.asarray(law.point, dtype=float)
        if p.size != d:
            raise ConfigurationError(f"point_mass dim {p.size} != state dim {d}")
        states = np.tile(p, (n, 1))
        if space.is_torus:
            states = np.mod(states, TWO_PI)
    elif law.kind == "gaussian_diag":
        if space.is_torus:
            raise ConfigurationError("gaussian_diag is not defined on the torus; "
                                     "use two_cluster_torus or uniform_torus")
        mean = np.asarray(law.mean, dtype=float)
        var = np.asarray(law.var, dtype=float)
        if mean.size != d:
            raise ConfigurationError(f"gaussian_diag dim {mean.size} != state dim {d}")
        states = mean + np.sqrt(var) * rng.standard_normal((n, d))
    elif law.kind == "uniform_torus":
        if not space.is_torus:
            raise ConfigurationError("uniform_torus requires a torus state space")
        states = rng.uniform(0.0, TWO_PI, size=(n, d))
    elif law.kind == "two_cluster_torus":
        if not space.is_torus:
            raise ConfigurationError("two_cluster_torus requires a torus state space")
        std = law.concentration ** -0.5
        centers = np.asarray(law.centers, dtype=float)
        which = rng.integers(0, len(centers), size=n)
        states = centers[which][:, None] + std * rng.standard_normal((n, d))
        states = np.mod(states, TWO_PI)
    elif law.kind == "empirical":
        pool = _load_empirical(law.path)
        if pool.shape[1] != d:
            raise ConfigurationError(f"empirical sample dim {pool.shape[1]} != state dim {d}")
        idx = rng.integers(0, pool.shape[0], size=n)
        states = pool[idx].copy()
        if space.is_torus:
            states = np.mod(states, TWO_PI)
    else:
        raise ConfigurationError(f"unknown initial law {law.kind!r}")
    return Ensemble(step=0, states=states, space=space)


def _load_empirical(path):
    if str(path).endswith(".npy"):
        pool = np.load(path)
    else:
        pool = np.loadtxt(path, delimiter=",", ndmin=2)
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim == 1:
        pool = pool[:, None]
    if pool.shape[0] < 1:
        raise ConfigurationError(f"empirical file {path} holds no samples")
    return pool


@dataclass
class ProblemSpec:
    """One mean-field control instance.

    The model functions receive (j, states, stats, controls) with states of
    shape (N, d) and controls (N, control_dim), either plain arrays or taped
    tensors, and must be written with `mfc.autodiff` operations so gradients
    can flow. `drift` returns the full per-step state increment (any dt factor
    belongs to the problem definition); `running_cost` returns the
    instantaneous integrand, which the rollout weights by exp(-beta*j*dt)*dt.
    """

    name: str
    space: StateSpace
    control_dim: int
    horizon_steps: int
    dt: float
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    terminal_cost: Optional[Callable]
    discount_beta: float
    noise_dim: int
    noise_law: NoiseLaw
    # exp(-beta*T*dt) on G for truncated infinite horizons, weight 1 otherwise
    discount_terminal: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.control_dim < 1 or self.noise_dim < 1:
            raise ConfigurationError("control_dim and noise_dim must be positive")
        if self.horizon_steps < 1:
            raise ConfigurationError("horizon_steps must be positive")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.discount_beta < 0:
            raise ConfigurationError("discount rate must be nonnegative")

    def running_weight(self, j):
        return math.exp(-self.discount_beta * j * self.dt) * self.dt

    def terminal_weight(self):
        if self.discount_terminal:
            return math.exp(-self.discount_beta * self.horizon_steps * self.dt)
        return 1.0

    def describe(self):
        return {
            "name": self.name,
            "space": {"kind": self.space.kind, "dim": self.space.dim},
            "control_dim": self.control_dim,
            "horizon_steps": self.horizon_steps,
            "dt": self.dt,
            "discount_beta": self.discount_beta,
            "noise_dim": self.noise_dim,
            "noise_law": self.noise_law.describe(),
            "params": {k: self.params[k] for k in sorted(self.params)},
        }

    def sha256(self):
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
