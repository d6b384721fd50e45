"""Builtin benchmark problems and their analytic / semi-analytic oracles.

Three models, all one-dimensional:

  lq        dX = a dt + sigma dW, discounted running cost a^2/2 + kappa Var(mu);
            closed-form value a_c Var(mu) + b_c.
  kuramoto  angles on the torus, dX = a dt + sigma dW, discounted running cost
            kappa Phi(mu) + a^2/2 with Phi the first-mode synchronization
            potential; phase transition at kappa_c = beta sigma^2 + sigma^4/2.
  systemic  mean-reverting interbank model with quadratic costs on deviations
            from the mean; finite horizon with terminal cost; value available
            through a scalar Riccati equation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .features import kuramoto_potential
from .model import NoiseLaw, ProblemSpec, euclidean, torus

# Table of reported reference values ("Analytic" column) for the systemic
# risk model's six benchmark cases; the initial laws behind them are defined
# in the cited comparison work, so these are cross-check data, not CI gates.
SYSTEMIC_REFERENCE_VALUES = (0.1642, 0.1446, 0.1446, 0.1642, 0.1812, 0.1772)


# ---------------------------------------------------------------------------
# linear quadratic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LqParams:
    kappa: float = 1.0
    sigma: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0 or self.sigma <= 0 or self.beta <= 0:
            raise ConfigurationError("lq parameters must be positive")


def lq_value_coeffs(params: LqParams):
    """(a_c, b_c) of the closed-form value a_c Var(mu) + b_c."""
    a = (math.sqrt(8.0 * params.kappa + params.beta**2) - params.beta) / 4.0
    b = params.sigma**2 * a / params.beta
    return a, b


def lq_value_oracle(params: LqParams, variance):
    a, b = lq_value_coeffs(params)
    return a * variance + b


def lq_stationary_variance(params: LqParams):
    a, _ = lq_value_coeffs(params)
    return params.sigma**2 / (4.0 * a)


def lq_optimal_feedback(params: LqParams):
    """The HJB minimizer a*(x, mu) = -2 a_c (x - mean(mu)), as a test policy."""
    a_c, _ = lq_value_coeffs(params)

    def policy(j, states, stats):
        return ad.mul(ad.sub(states, stats.mean), -2.0 * a_c)

    return policy


def make_lq(params: LqParams, dt=0.05, t_model=20.0) -> ProblemSpec:
    """Truncated infinite-horizon LQ problem on R."""
    if dt * params.beta >= 1.0:
        raise ConfigurationError("lq discretization needs dt * beta < 1")
    steps = _steps_of(t_model, dt)
    sigma = params.sigma
    kappa = params.kappa

    def drift(j, x, stats, a):
        return ad.mul(a, dt)

    def diffusion(j, x, stats, a):
        return sigma

    def running(j, x, stats, a):
        return ad.add(ad.mul(ad.square(a), 0.5), ad.mul(stats.variance, kappa))

    return ProblemSpec(
        name="lq", space=euclidean(1), control_dim=1, horizon_steps=steps, dt=dt,
        drift=drift, diffusion=diffusion, running_cost=running, terminal_cost=None,
        discount_beta=params.beta, noise_dim=1, noise_law=NoiseLaw("gaussian", dt=dt),
        discount_terminal=True,
        params={"kappa": kappa, "sigma": sigma, "beta": params.beta, "t_model": t_model})


# ---------------------------------------------------------------------------
# Kuramoto
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KuramotoParams:
    kappa: float = 2.5
    sigma: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0 or self.sigma <= 0 or self.beta <= 0:
            raise ConfigurationError("kuramoto parameters must be positive")

    @property
    def kappa_critical(self):
        return self.beta * self.sigma**2 + 0.5 * self.sigma**4


def make_kuramoto(params: KuramotoParams, dt=0.05, t_model=20.0) -> ProblemSpec:
    """Truncated infinite-horizon synchronization control on the torus."""
    steps = _steps_of(t_model, dt)
    sigma = params.sigma
    kappa = params.kappa

    def drift(j, x, stats, a):
        return ad.mul(a, dt)

    def diffusion(j, x, stats, a):
        return sigma

    def running(j, x, stats, a):
        # kappa * Phi(mu) is common to all particles; a^2/2 is per particle
        return ad.add(ad.mul(ad.square(a), 0.5), ad.mul(kuramoto_potential(stats), kappa))

    return ProblemSpec(
        name="kuramoto", space=torus(1), control_dim=1, horizon_steps=steps, dt=dt,
        drift=drift, diffusion=diffusion, running_cost=running, terminal_cost=None,
        discount_beta=params.beta, noise_dim=1, noise_law=NoiseLaw("gaussian", dt=dt),
        discount_terminal=True,
        params={"kappa": kappa, "sigma": sigma, "beta": params.beta, "t_model": t_model})


# ---------------------------------------------------------------------------
# systemic risk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemicParams:
    kappa: float = 0.6
    sigma: float = 1.0
    q: float = 0.8
    eta: float = 2.0
    c: float = 2.0
    t_model: float = 0.2

    def __post_init__(self):
        if self.sigma <= 0 or self.t_model <= 0:
            raise ConfigurationError("systemic sigma and t_model must be positive")
        if self.q**2 > self.eta:
            warnings.warn("systemic risk parameters violate q^2 <= eta; "
                          "running cost is not jointly convex", stacklevel=2)


def make_systemic(params: SystemicParams, dt=0.2) -> ProblemSpec:
    """Finite-horizon mean-reverting model with terminal penalty on deviations."""
    steps = _steps_of(params.t_model, dt)
    kappa, sigma, q, eta, c = params.kappa, params.sigma, params.q, params.eta, params.c

    def drift(j, x, stats, a):
        return ad.mul(ad.add(ad.mul(ad.sub(stats.mean, x), kappa), a), dt)

    def diffusion(j, x, stats, a):
        return sigma

    def running(j, x, stats, a):
        dev = ad.sub(stats.mean, x)
        return ad.add(
            ad.sub(ad.mul(ad.square(a), 0.5), ad.mul(ad.mul(a, dev), q)),
            ad.mul(ad.square(dev), 0.5 * eta))

    def terminal(x, stats):
        return ad.mul(ad.square(ad.sub(x, stats.mean)), 0.5 * c)

    return ProblemSpec(
        name="systemic", space=euclidean(1), control_dim=1, horizon_steps=steps, dt=dt,
        drift=drift, diffusion=diffusion, running_cost=running, terminal_cost=terminal,
        discount_beta=0.0, noise_dim=1, noise_law=NoiseLaw("gaussian", dt=dt),
        discount_terminal=False,
        params={"kappa": kappa, "sigma": sigma, "q": q, "eta": eta, "c": c,
                "t_model": params.t_model})


def systemic_riccati_path(params: SystemicParams, n_grid=4001):
    """Backward RK4 solve of the value coefficient P(t) and the offset chi(t).

        dP/dt  = 2 kappa P + (2P + q)^2 / 2 - eta / 2,   P(T) = c / 2
        dchi/dt = -sigma^2 P,                            chi(T) = 0

    Returns (t_grid, P_grid, chi_grid) with t increasing from 0 to T.
    """
    if n_grid < 3:
        raise ConfigurationError("riccati grid needs at least 3 points")
    kappa, sigma, q, eta = params.kappa, params.sigma, params.q, params.eta
    t_end = params.t_model
    h = t_end / (n_grid - 1)

    def f(y):
        p, _ = y
        return np.array([2.0 * kappa * p + 0.5 * (2.0 * p + q) ** 2 - 0.5 * eta,
                         -sigma**2 * p])

    ys = np.empty((n_grid, 2))
    ys[-1] = (0.5 * params.c, 0.0)
    y = ys[-1].copy()
    for i in range(n_grid - 1, 0, -1):
        k1 = f(y)
        k2 = f(y - 0.5 * h * k1)
        k3 = f(y - 0.5 * h * k2)
        k4 = f(y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[i - 1] = y
    t_grid = np.linspace(0.0, t_end, n_grid)
    return t_grid, ys[:, 0], ys[:, 1]


def systemic_value_oracle(params: SystemicParams, var0, n_grid=4001):
    """Continuous-time value P(0) Var_0 + sigma^2 integral of P (= chi(0)).

    Validated against `systemic_discrete_dp` on a fine grid (see tests); the
    grid is refined once and the two resolutions must agree to 1e-9.
    """
    _, p, chi = systemic_riccati_path(params, n_grid)
    _, p2, chi2 = systemic_riccati_path(params, 2 * n_grid - 1)
    if abs(p[0] - p2[0]) > 1e-9 or abs(chi[0] - chi2[0]) > 1e-9:
        raise ConfigurationError("riccati solve did not converge under refinement")
    return p2[0] * var0 + chi2[0]


def systemic_discrete_dp(params: SystemicParams, dt, var0):
    """Exact dynamic program for the time-discretized problem.

    Quadratic value ansatz V_j(y) = P_j y^2 + chi_j on the deviation
    y = x - mean; the per-step minimization is closed form. For dt -> 0 this
    brute-force recursion converges to the Riccati oracle, which is how the
    oracle is validated. At coarse dt it is also the exact optimum the trained
    discrete-time policy can reach, up to finite-N effects.
    """
    steps = _steps_of(params.t_model, dt)
    kappa, sigma, q, eta = params.kappa, params.sigma, params.q, params.eta
    p = 0.5 * params.c
    chi = 0.0
    for _ in range(steps):
        k = (q + 2.0 * p * (1.0 - kappa * dt)) / (1.0 + 2.0 * p * dt)
        chi = chi + p * sigma**2 * dt
        p = (0.5 * k * k - q * k + 0.5 * eta) * dt + p * (1.0 - (kappa + k) * dt) ** 2
    return p * var0 + chi


def _steps_of(t_model, dt):
    steps = round(t_model / dt)
    if steps < 1 or abs(steps * dt - t_model) > 1e-9 * max(1.0, t_model):
        raise ConfigurationError(f"horizon {t_model} is not an integer multiple of dt={dt}")
    return steps
