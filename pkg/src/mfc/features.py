"""Empirical-measure features and measure-distance utilities.

Every feature is a plain average (1/N) sum_i g(x_i) of a test function over
the ensemble, so differentiating through the feature vector reaches every
particle. Raw moments used by model functions (mean, second moment, first
circular moment) are computed here as well, exactly, independent of whatever
basis feeds the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .model import Ensemble, StateSpace


@dataclass(frozen=True)
class FeatureBasis:
    """Finite separating family evaluated against the empirical measure.

    kind "polynomial": monomial moments x^k / k! per axis, degrees 1..max_degree,
    optionally with pairwise cross moments x_i * x_j (Euclidean spaces).
    kind "fourier": cos(l.x), sin(l.x) pairs for integer modes l != 0 (torus).
    """

    kind: str
    max_degree: int = 10
    cross_moments: bool = False
    modes: tuple = (1, -1, 2, -2, 3, -3, 4, -4, 5, -5)
    allow_any_space: bool = False

    def __post_init__(self):
        if self.kind not in ("polynomial", "fourier"):
            raise ConfigurationError(f"unknown feature basis {self.kind!r}")
        if self.kind == "polynomial" and self.max_degree < 1:
            raise ConfigurationError("polynomial basis needs max_degree >= 1")
        if self.kind == "fourier":
            if len(self.modes) == 0:
                raise ConfigurationError("fourier basis needs at least one mode")
            if len(set(self.modes)) != len(self.modes):
                raise ConfigurationError("fourier modes must be distinct")
            if any(_mode_is_zero(m) for m in self.modes):
                raise ConfigurationError("fourier mode 0 carries no information")

    def n_features(self, dim):
        if self.kind == "polynomial":
            m = self.max_degree * dim
            if self.cross_moments and dim > 1:
                m += dim * (dim - 1) // 2
            return m
        return 2 * len(self.modes)

    def check_space(self, space: StateSpace):
        if self.allow_any_space:
            return
        if self.kind == "polynomial" and space.is_torus:
            raise ConfigurationError("polynomial basis on a torus; set allow_any_space to override")
        if self.kind == "fourier" and not space.is_torus:
            raise ConfigurationError("fourier basis on Euclidean space; set allow_any_space to override")

    def describe(self):
        if self.kind == "polynomial":
            return {"kind": self.kind, "max_degree": self.max_degree,
                    "cross_moments": self.cross_moments}
        return {"kind": self.kind,
                "modes": [[int(v) for v in np.atleast_1d(m)] for m in self.modes]}


def _mode_is_zero(m):
    return not np.any(np.atleast_1d(m))


def polynomial_basis(max_degree=10, cross_moments=False):
    return FeatureBasis(kind="polynomial", max_degree=max_degree, cross_moments=cross_moments)


def fourier_basis(modes=(1, -1, 2, -2, 3, -3, 4, -4, 5, -5)):
    return FeatureBasis(kind="fourier", modes=tuple(modes))


@dataclass
class MeasureStats:
    """Feature vector plus the raw moments the model functions consume.

    Fields may be taped tensors during training rollouts or plain floats and
    arrays during inference; model functions must not care which.
    """

    features: object          # (m,) empirical averages of the basis functions
    mean: object              # (d,) first moment
    second_moment: object     # scalar E|x|^2
    c1: object = None         # torus: mean cos(x), first coordinate
    s1: object = None         # torus: mean sin(x), first coordinate
    n: int = 0

    @property
    def variance(self):
        m = self.mean
        if isinstance(m, ad.Tensor) or isinstance(self.second_moment, ad.Tensor):
            return ad.sub(self.second_moment, ad.sum_all(ad.square(m)))
        return self.second_moment - float(np.sum(np.square(m)))

    def order_parameter(self):
        """r = sqrt(C1^2 + S1^2); 0 for uniform, 1 for a point mass."""
        c1 = ad.value_of(self.c1)
        s1 = ad.value_of(self.s1)
        return float(np.sqrt(c1 * c1 + s1 * s1))


def compute_features(basis: FeatureBasis, ens, space: Optional[StateSpace] = None) -> MeasureStats:
    """Empirical feature vector and raw moments of one ensemble.

    `ens` is an Ensemble, a plain (N, d) array, or a taped tensor of states.
    """
    if isinstance(ens, Ensemble):
        states, space = ens.states, ens.space
    else:
        states = ens
        if space is None:
            raise ConfigurationError("compute_features needs a state space for raw states")
    basis.check_space(space)
    n, d = ad.value_of(states).shape

    mean = ad.mean0(states)
    second = ad.mean_all(ad.square(states)) * float(d) if d > 1 else ad.mean_all(ad.square(states))

    c1 = s1 = None
    if space.is_torus:
        embed = ad.angle_embed(states)       # [cos | sin]
        embed_mean = ad.mean0(embed)
        c1 = ad.index1(embed_mean, 0)
        s1 = ad.index1(embed_mean, d)

    if basis.kind == "polynomial":
        feats = _polynomial_features(basis, states, d)
    else:
        feats = _fourier_features(basis, states, d)

    return MeasureStats(features=feats, mean=mean, second_moment=second,
                        c1=c1, s1=s1, n=n)


@lru_cache(maxsize=32)
def _degree_table(max_degree):
    degrees = np.arange(1, max_degree + 1)
    scales = 1.0 / np.array([math.factorial(k) for k in degrees], dtype=np.float64)
    degrees.setflags(write=False)
    scales.setflags(write=False)
    return degrees, scales


def _polynomial_features(basis, states, d):
    degrees, scales = _degree_table(basis.max_degree)
    cols = []
    for axis in range(d):
        col = ad.slice_cols(states, axis, axis + 1) if d > 1 else states
        cols.append(ad.monomials(col, degrees, scales, consecutive=True))
    if basis.cross_moments and d > 1:
        for i in range(d):
            for j in range(i + 1, d):
                xi = ad.slice_cols(states, i, i + 1)
                xj = ad.slice_cols(states, j, j + 1)
                cols.append(ad.mul(xi, xj))
    block = cols[0] if len(cols) == 1 else ad.concat_cols(cols)
    return ad.mean0(block)


def _fourier_features(basis, states, d):
    if d == 1:
        modes = np.asarray([int(np.atleast_1d(m)[0]) for m in basis.modes])
        block = ad.fourier_pairs(states, modes)
    else:
        mode_mat = np.array([np.atleast_1d(m) for m in basis.modes], dtype=np.float64)  # (L, d)
        ang = ad.matmul(states, mode_mat.T)
        block = ad.concat_cols([ad.cos(ang), ad.sin(ang)])
    return ad.mean0(block)


def features_naive(basis: FeatureBasis, states, space: StateSpace):
    """Oracle: per-element double loop over particles and basis functions."""
    states = np.asarray(states, dtype=float)
    n, d = states.shape
    fns = []
    if basis.kind == "polynomial":
        for axis in range(d):
            for k in range(1, basis.max_degree + 1):
                fns.append(lambda x, a=axis, k=k: x[a] ** k / math.factorial(k))
        if basis.cross_moments and d > 1:
            for i in range(d):
                for j in range(i + 1, d):
                    fns.append(lambda x, i=i, j=j: x[i] * x[j])
    else:
        modes = [np.atleast_1d(m).astype(float) for m in basis.modes]
        for m in modes:
            fns.append(lambda x, m=m: math.cos(float(np.dot(m, x))))
        for m in modes:
            fns.append(lambda x, m=m: math.sin(float(np.dot(m, x))))
    out = np.zeros(len(fns))
    for idx, fn in enumerate(fns):
        acc = 0.0
        for i in range(n):
            acc += fn(states[i])
        out[idx] = acc / n
    return out


def kuramoto_potential(stats: MeasureStats):
    """Phi(mu) = -(C1^2 + S1^2)/2, the double integral of -cos(x-y)/2."""
    if stats.c1 is None or stats.s1 is None:
        raise ConfigurationError("kuramoto_potential needs torus stats with (C1, S1)")
    return ad.mul(ad.add(ad.square(stats.c1), ad.square(stats.s1)), -0.5)


def kuramoto_potential_naive(states):
    """Oracle: direct (1/N^2) sum_ij -cos(x_i - x_j)/2 on a 1-d torus ensemble."""
    x = np.asarray(states, dtype=float).ravel()
    n = x.size
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += math.cos(x[i] - x[j])
    return -0.5 * acc / (n * n)


# ---------------------------------------------------------------------------
# Wasserstein-1 between empirical measures
# ---------------------------------------------------------------------------

def w1_distance_1d(samples_a, samples_b, b_sorted=False):
    """Exact W1 between two 1-d empirical measures via quantile coupling.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    unequal sizes integrate the piecewise-constant quantile functions over a
    merged probability grid.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("w1_distance_1d needs nonempty sample sets")
    a = np.sort(a)
    if not b_sorted:
        b = np.sort(b)
    n, m = a.size, b.size
    if n == m:
        return float(np.abs(a - b).mean())
    widths, ia, ib = _quantile_grid(n, m)
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


@lru_cache(maxsize=64)
def _quantile_grid(n, m):
    """Merged CDF breakpoints of n- and m-point empirical measures.

    The quantile functions are constant between breakpoints, so W1 needs only
    interval widths and the sample index each interval reads; both depend on
    (n, m) alone.
    """
    bounds = np.concatenate([np.arange(1, n) / n, np.arange(1, m) / m, [0.0, 1.0]])
    bounds = np.unique(bounds)
    widths = np.diff(bounds)
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    ia = np.minimum((mids * n).astype(np.int64), n - 1)
    ib = np.minimum((mids * m).astype(np.int64), m - 1)
    widths.setflags(write=False)
    ia.setflags(write=False)
    ib.setflags(write=False)
    return widths, ia, ib


def w1_couplings_bruteforce(samples_a, samples_b):
    """Oracle for tiny inputs: minimize transport cost over permutation couplings."""
    import itertools

    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("brute-force oracle needs equal sizes")
    n = a.size
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(abs(a[i] - b[perm[i]]) for i in range(n)) / n
        best = min(best, cost)
    return best


def sliced_w1(samples_a, samples_b, n_projections=32, seed=0):
    """Average W1 of 1-d projections onto fixed random directions.

    A diagnostic proxy for multi-dimensional W1; exact in dimension one.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    d = a.shape[1]
    if d == 1:
        return w1_distance_1d(a, b)
    if n_projections < 1:
        raise ValueError("need at least one projection")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for u in dirs:
        total += w1_distance_1d(a @ u, b @ u)
    return total / n_projections
