import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfc import autodiff as ad
from mfc.errors import ConfigurationError
from mfc.features import (FeatureBasis, compute_features, features_naive, fourier_basis,
                          kuramoto_potential, kuramoto_potential_naive, polynomial_basis,
                          sliced_w1, w1_couplings_bruteforce, w1_distance_1d)
from mfc.model import euclidean, torus

EUC = euclidean(1)
TOR = torus(1)


def test_two_point_polynomial_moments():
    stats = compute_features(polynomial_basis(2), np.array([[0.0], [2.0]]), EUC)
    assert float(stats.mean[0]) == pytest.approx(1.0)
    assert float(stats.second_moment) == pytest.approx(2.0)
    # features carry the factorial scaling: [E x / 1!, E x^2 / 2!]
    assert np.allclose(stats.features, [1.0, 1.0])


def test_fourier_symmetric_roots_of_unity():
    states = np.array([[0.0], [math.pi / 2], [math.pi], [3 * math.pi / 2]])
    stats = compute_features(fourier_basis((1,)), states, TOR)
    assert float(stats.c1) == pytest.approx(0.0, abs=1e-15)
    assert float(stats.s1) == pytest.approx(0.0, abs=1e-15)


def test_fourier_point_mass():
    stats = compute_features(fourier_basis((1,)), np.zeros((3, 1)), TOR)
    assert float(stats.c1) == pytest.approx(1.0)
    assert float(stats.s1) == pytest.approx(0.0)
    assert stats.order_parameter() == pytest.approx(1.0)


small_states = st.lists(st.floats(-3, 3), min_size=1, max_size=8)


@given(small_states)
@settings(max_examples=50, deadline=None)
def test_polynomial_features_match_naive_double_loop(vals):
    states = np.array(vals)[:, None]
    basis = polynomial_basis(6)
    stats = compute_features(basis, states, EUC)
    ref = features_naive(basis, states, EUC)
    assert np.allclose(stats.features, ref, rtol=1e-15, atol=1e-15)


@given(st.lists(st.floats(0, 2 * math.pi - 1e-9), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_fourier_features_match_naive_double_loop(vals):
    states = np.array(vals)[:, None]
    basis = fourier_basis((1, -1, 2, 3))
    stats = compute_features(basis, states, TOR)
    ref = features_naive(basis, states, TOR)
    assert np.allclose(stats.features, ref, rtol=1e-14, atol=1e-14)


def test_cross_moments_match_naive_loop():
    rng = np.random.default_rng(0)
    states = rng.standard_normal((6, 3))
    basis = polynomial_basis(2, cross_moments=True)
    stats = compute_features(basis, states, euclidean(3))
    ref = features_naive(basis, states, euclidean(3))
    assert stats.features.shape == ref.shape == (2 * 3 + 3,)
    assert np.allclose(stats.features, ref, rtol=1e-13, atol=1e-14)


def test_permutation_invariance_default_and_exact_modes():
    rng = np.random.default_rng(1)
    states = rng.standard_normal((64, 1)) * np.logspace(0, 3, 64)[:, None] % 7
    perm = rng.permutation(64)
    a = compute_features(polynomial_basis(6), states, EUC)
    b = compute_features(polynomial_basis(6), states[perm], EUC)
    assert np.allclose(a.features, b.features, rtol=1e-15, atol=1e-15)
    with ad.exact_reductions():
        ax = compute_features(polynomial_basis(6), states, EUC)
        bx = compute_features(polynomial_basis(6), states[perm], EUC)
    assert ax.features.tobytes() == bx.features.tobytes()
    assert np.float64(ax.second_moment).tobytes() == np.float64(bx.second_moment).tobytes()


def test_basis_space_pairing_is_checked():
    with pytest.raises(ConfigurationError):
        compute_features(polynomial_basis(3), np.zeros((2, 1)), TOR)
    with pytest.raises(ConfigurationError):
        compute_features(fourier_basis((1,)), np.zeros((2, 1)), EUC)
    forced = FeatureBasis(kind="polynomial", max_degree=3, allow_any_space=True)
    compute_features(forced, np.zeros((2, 1)), TOR)  # override allowed


def test_fourier_mode_zero_rejected():
    with pytest.raises(ConfigurationError):
        fourier_basis((0, 1))
    with pytest.raises(ConfigurationError):
        fourier_basis((1, 1))


# ---------------------------------------------------------------------------
# Kuramoto potential
# ---------------------------------------------------------------------------

def test_potential_point_mass_is_minus_half():
    stats = compute_features(fourier_basis((1,)), np.full((5, 1), 1.3), TOR)
    assert float(kuramoto_potential(stats)) == pytest.approx(-0.5)


def test_potential_uniform_is_zero():
    states = np.linspace(0, 2 * math.pi, 8, endpoint=False)[:, None]
    stats = compute_features(fourier_basis((1,)), states, TOR)
    assert float(kuramoto_potential(stats)) == pytest.approx(0.0, abs=1e-15)


def test_potential_two_equal_clusters_is_zero_and_matches_naive():
    states = np.array([[0.0], [math.pi]])
    stats = compute_features(fourier_basis((1,)), states, TOR)
    assert float(kuramoto_potential(stats)) == pytest.approx(
        kuramoto_potential_naive(states), abs=1e-15)
    assert float(kuramoto_potential(stats)) == pytest.approx(0.0, abs=1e-15)


@given(st.lists(st.floats(0, 2 * math.pi - 1e-9), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_potential_matches_naive_and_stays_bounded(vals):
    states = np.array(vals)[:, None]
    stats = compute_features(fourier_basis((1,)), states, TOR)
    phi = float(kuramoto_potential(stats))
    assert phi == pytest.approx(kuramoto_potential_naive(states), abs=1e-12)
    assert -0.5 - 1e-12 <= phi <= 1e-15


# ---------------------------------------------------------------------------
# W1
# ---------------------------------------------------------------------------

def test_w1_point_masses():
    assert w1_distance_1d([0.0], [1.0]) == pytest.approx(1.0)


def test_w1_identity():
    assert w1_distance_1d([0.0, 1.0], [0.0, 1.0]) == 0.0


def test_w1_two_point_vs_exhaustive_couplings():
    a, b = [0.0, 0.0], [0.0, 2.0]
    assert w1_distance_1d(a, b) == pytest.approx(1.0)
    assert w1_distance_1d(a, b) == pytest.approx(w1_couplings_bruteforce(a, b))


def test_w1_unequal_sizes_hand_value():
    # quantile integral of {0,1} vs {0,1,2} worked out by hand
    assert w1_distance_1d([0.0, 1.0], [0.0, 1.0, 2.0]) == pytest.approx(0.5)


def _w1_by_replication(a, b):
    """Independent oracle: replicate both samples to lcm size, use sorted mean."""
    n, m = len(a), len(b)
    size = math.lcm(n, m)
    aa = np.sort(np.repeat(np.sort(a), size // n))
    bb = np.sort(np.repeat(np.sort(b), size // m))
    return float(np.abs(aa - bb).mean())


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=9),
       st.lists(st.floats(-10, 10), min_size=1, max_size=9))
@settings(max_examples=80, deadline=None)
def test_w1_unequal_sizes_match_replication_oracle(a, b):
    assert w1_distance_1d(a, b) == pytest.approx(_w1_by_replication(a, b), abs=1e-10)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       st.lists(st.floats(-5, 5), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_w1_metric_axioms(a, b, c):
    dab = w1_distance_1d(a, b)
    assert dab >= 0
    assert dab == pytest.approx(w1_distance_1d(b, a), abs=1e-12)
    assert w1_distance_1d(a, a) == pytest.approx(0.0, abs=1e-12)
    assert dab <= w1_distance_1d(a, c) + w1_distance_1d(c, b) + 1e-9


def test_w1_empty_input_rejected():
    with pytest.raises(ValueError):
        w1_distance_1d([], [1.0])


def test_sliced_w1_identical_sets_zero():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 2))
    assert sliced_w1(x, x, n_projections=8, seed=1) == pytest.approx(0.0, abs=1e-12)


def test_sliced_w1_translation_bound():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 2))
    t = np.array([0.7, -0.4])
    val = sliced_w1(x, x + t, n_projections=64, seed=2)
    assert 0.0 < val <= np.linalg.norm(t) + 1e-12


def test_sliced_w1_dimension_one_degenerates_to_exact():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(17)
    b = rng.standard_normal(23)
    assert sliced_w1(a, b, n_projections=5, seed=3) == pytest.approx(
        w1_distance_1d(a, b), abs=1e-14)


def test_sliced_w1_deterministic_under_seed():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((30, 3))
    b = rng.standard_normal((40, 3))
    v1 = sliced_w1(a, b, n_projections=16, seed=9)
    v2 = sliced_w1(a, b, n_projections=16, seed=9)
    assert v1 == v2
