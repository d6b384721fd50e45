import math

import numpy as np
import pytest

from mfc import autodiff as ad
from mfc.errors import ConfigurationError, TrainingError
from mfc.features import compute_features, fourier_basis, polynomial_basis
from mfc.model import euclidean, torus
from mfc.network import (AdamParams, AdamState, NetSpec, adam_step, make_network)

EUC = euclidean(1)


def _stats(states, basis=None, space=EUC):
    basis = basis or polynomial_basis(1)
    return compute_features(basis, states, space)


def test_default_init_is_the_zero_map():
    net = make_network(NetSpec(hidden=(4, 4)), EUC, 1, 1, 10)
    x = np.array([[1.5], [-2.0]])
    out = net.forward(0, x, _stats(x))
    assert np.all(out == 0.0)


def test_parameter_count_matches_layer_widths():
    net = make_network(NetSpec(hidden=(32, 32)), EUC, 10, 1, 10)
    widths = [12, 32, 32, 1]
    assert net.widths == widths
    assert net.n_params == sum((widths[i] + 1) * widths[i + 1] for i in range(3))
    assert net.theta.shape == (net.n_params,)


def test_input_dim_is_time_plus_embed_plus_features():
    net = make_network(NetSpec(hidden=(8,)), torus(1), 20, 1, 400)
    assert net.layout.input_dim == 1 + 2 + 20
    net = make_network(NetSpec(hidden=(8,)), euclidean(3), 5, 2, 10)
    assert net.layout.input_dim == 1 + 3 + 5


def test_identity_like_relu_net():
    net = make_network(NetSpec(hidden=(1,), activation="relu"), EUC, 1, 1, 4)
    theta = np.zeros(net.n_params)
    theta[1] = 1.0   # first layer weight on the state coordinate
    theta[4] = 1.0   # output weight
    net.set_theta(theta)
    x = np.array([[-3.0], [2.0]])
    out = net.forward(0, x, _stats(x))
    assert out[0, 0] == 0.0
    assert out[1, 0] == 2.0


def test_clamp_saturates_near_bound():
    net = make_network(NetSpec(hidden=(), clamp=1.0, final_layer_zero=False), EUC, 1, 1, 4)
    theta = np.zeros(net.n_params)
    theta[1] = 10.0  # affine weight on state; x=1 gives pre-clamp output 10
    net.set_theta(theta)
    x = np.array([[1.0]])
    out = net.forward(0, x, _stats(x))
    assert 0.99 <= out[0, 0] <= 1.0
    assert out[0, 0] == pytest.approx(math.tanh(10.0), abs=1e-12)


def test_feature_count_mismatch_is_configuration_error():
    net = make_network(NetSpec(hidden=(4,)), EUC, 3, 1, 4)
    x = np.array([[0.0]])
    with pytest.raises(ConfigurationError):
        net.forward(0, x, _stats(x, polynomial_basis(2)))


def test_torus_embedding_is_periodic():
    net = make_network(NetSpec(hidden=(6,), weight_seed=1, final_layer_zero=False),
                       torus(1), 2, 1, 4)
    basis = fourier_basis((1,))
    x = np.array([[0.3], [5.1]])
    stats = compute_features(basis, x, torus(1))
    shifted = np.mod(x + 2 * math.pi, 2 * math.pi)
    out1 = net.forward(1, x, stats)
    out2 = net.forward(1, shifted, stats)
    assert np.allclose(out1, out2, atol=1e-12)


def test_weight_init_deterministic_and_seed_sensitive():
    a = make_network(NetSpec(hidden=(8, 8), weight_seed=5), EUC, 4, 1, 10)
    b = make_network(NetSpec(hidden=(8, 8), weight_seed=5), EUC, 4, 1, 10)
    c = make_network(NetSpec(hidden=(8, 8), weight_seed=6), EUC, 4, 1, 10)
    assert a.theta.tobytes() == b.theta.tobytes()
    assert a.theta.tobytes() != c.theta.tobytes()


def test_time_feature_scaled_to_unit_interval():
    net = make_network(NetSpec(hidden=()), EUC, 1, 1, 400)
    assert net.time_feature(0) == 0.0
    assert net.time_feature(400) == 1.0
    assert net.time_feature(100) == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_theta_unchanged():
    theta = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3)
    adam_step(theta, np.zeros(3), state, AdamParams(lr=0.1))
    assert np.all(theta == [1.0, -2.0, 3.0])
    assert state.t == 1


def test_adam_first_step_magnitude_is_lr():
    theta = np.zeros(4)
    g = np.array([0.5, -2.0, 10.0, -0.01])
    state = AdamState.zeros(4)
    adam_step(theta, g, state, AdamParams(lr=1e-3, eps=1e-8))
    # bias-corrected m/sqrt(v) is sign(g) up to eps
    assert np.allclose(np.abs(theta), 1e-3, atol=1e-9)
    assert np.all(np.sign(theta) == -np.sign(g))


def test_adam_constant_gradient_moves_monotonically():
    theta = np.array([0.0])
    g = np.array([1.0])
    state = AdamState.zeros(1)
    hyper = AdamParams(lr=1e-2)
    prev = 0.0
    for _ in range(50):
        adam_step(theta, g, state, hyper)
        assert theta[0] < prev
        prev = theta[0]


def test_adam_rejects_nonfinite_gradient():
    theta = np.zeros(2)
    state = AdamState.zeros(2)
    state.t = 7
    with pytest.raises(TrainingError) as err:
        adam_step(theta, np.array([1.0, np.nan]), state, AdamParams())
    assert err.value.iteration == 7


def test_adam_lr_override():
    theta = np.zeros(1)
    state = AdamState.zeros(1)
    adam_step(theta, np.array([1.0]), state, AdamParams(lr=1e-3), lr=1e-1)
    assert abs(theta[0]) == pytest.approx(1e-1, rel=1e-6)
