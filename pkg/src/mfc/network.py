"""Feedforward policy network alpha(j, x, mu; theta) and its optimizer.

The network input is [time feature | state embedding | measure features].
Torus states enter as (cos x, sin x) per angle so the learned feedback is
exactly periodic; Euclidean states enter raw. Parameters live in one flat
float64 vector; per-layer weight matrices are views into it, so the Adam
update and checkpoint I/O see a single array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, TrainingError
from .model import StateSpace


@dataclass(frozen=True)
class NetSpec:
    """Architecture choices; hidden=() gives a bare affine policy.

    `final_layer_zero` starts the policy at the zero map so the first rollout
    follows the passive dynamics; without it an unlucky random output layer
    can wire positive feedback into the particle system and blow it up before
    the first update.
    """

    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "relu"  # "relu" | "tanh"
    clamp: Optional[float] = None
    clamp_hard: bool = False
    weight_seed: int = 0
    final_layer_zero: bool = True

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("hidden widths must be positive")
        if self.clamp is not None and self.clamp <= 0:
            raise ConfigurationError("clamp bound must be positive")

    def describe(self):
        return {"hidden": list(self.hidden), "activation": self.activation,
                "clamp": self.clamp, "clamp_hard": self.clamp_hard,
                "final_layer_zero": self.final_layer_zero}


@dataclass(frozen=True)
class InputLayout:
    """How (j, x, mu) maps onto network input coordinates."""

    space_kind: str
    state_dim: int
    n_features: int
    control_dim: int
    horizon_steps: int

    @property
    def state_embed_dim(self):
        return 2 * self.state_dim if self.space_kind == "torus" else self.state_dim

    @property
    def input_dim(self):
        return 1 + self.state_embed_dim + self.n_features

    def describe(self):
        return {"space_kind": self.space_kind, "state_dim": self.state_dim,
                "n_features": self.n_features, "control_dim": self.control_dim,
                "horizon_steps": self.horizon_steps}


class PolicyNetwork:
    """MLP with parameters in a flat theta vector."""

    def __init__(self, spec: NetSpec, layout: InputLayout):
        self.spec = spec
        self.layout = layout
        widths = [layout.input_dim, *spec.hidden, layout.control_dim]
        self.widths = widths
        self.n_params = sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))
        self.theta = np.zeros(self.n_params, dtype=np.float64)
        self._init_weights(spec.weight_seed)

    def _views(self, flat):
        """Per-layer (W, b) views into a flat vector."""
        views = []
        off = 0
        for i in range(len(self.widths) - 1):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            w = flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = flat[off:off + fan_out]
            off += fan_out
            views.append((w, b))
        return views

    def _init_weights(self, seed):
        """He-uniform for relu, Xavier-uniform for tanh; zero biases."""
        rng = np.random.default_rng(seed)
        views = self._views(self.theta)
        for layer, (w, b) in enumerate(views):
            fan_in, fan_out = w.shape
            if self.spec.activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
            b[...] = 0.0
            if self.spec.final_layer_zero and layer == len(views) - 1:
                w[...] = 0.0

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(f"theta must have shape ({self.n_params},)")
        self.theta[...] = theta

    def bind(self, tape):
        """Register every layer's parameters as leaves on a tape (once per rollout)."""
        return [(ad.leaf(w, tape), ad.leaf(b, tape)) for w, b in self._views(self.theta)]

    def grad_from(self, bound):
        """Collect leaf gradients back into one flat vector (zeros where unused)."""
        g = np.zeros(self.n_params, dtype=np.float64)
        off = 0
        for wt, bt in bound:
            wsz = wt.value.size
            if wt.grad is not None:
                g[off:off + wsz] = wt.grad.ravel()
            off += wsz
            bsz = bt.value.size
            if bt.grad is not None:
                g[off:off + bsz] = bt.grad
            off += bsz
        return g

    def time_feature(self, j):
        """j*dt scaled into [0, 1]."""
        return j / self.layout.horizon_steps

    def embed_states(self, states):
        if self.layout.space_kind == "torus":
            return ad.angle_embed(states)
        return states

    def forward(self, j, states, stats, bound=None):
        """Controls (N, control_dim) for every particle at step j.

        `stats` is the shared MeasureStats of the step's empirical measure.
        Pass `bound` (from .bind) to record the computation on a tape.
        """
        params = bound if bound is not None else self._views(self.theta)
        feats = stats.features
        n = ad.value_of(states).shape[0]
        fv = ad.value_of(feats)
        if fv.shape[0] != self.layout.n_features:
            raise ConfigurationError(
                f"feature vector has {fv.shape[0]} entries, layout expects {self.layout.n_features}")
        embed = self.embed_states(states)
        h = ad.assemble_inputs(self.time_feature(j), embed, feats, n)
        act = self.spec.activation
        last = len(params) - 1
        for i, (w, b) in enumerate(params):
            h = ad.affine(h, w, b, act=act if i < last else None)
        if self.spec.clamp is not None:
            h = ad.hard_clip(h, self.spec.clamp) if self.spec.clamp_hard else ad.saturate(h, self.spec.clamp)
        return h

    def describe(self):
        return {"spec": self.spec.describe(), "layout": self.layout.describe(),
                "widths": list(self.widths), "n_params": self.n_params}


def make_network(spec: NetSpec, space: StateSpace, n_features, control_dim, horizon_steps):
    layout = InputLayout(space_kind=space.kind, state_dim=space.dim,
                         n_features=n_features, control_dim=control_dim,
                         horizon_steps=horizon_steps)
    return PolicyNetwork(spec, layout)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def describe(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(theta, grad, state: AdamState, hyper: AdamParams, lr=None):
    """One bias-corrected Adam update; mutates theta and state in place."""
    if not np.isfinite(grad).all():
        raise TrainingError("non-finite gradient", iteration=state.t)
    lr = hyper.lr if lr is None else lr
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return theta, state
