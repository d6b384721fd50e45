import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfc.errors import ConfigurationError, NumericalStateError
from mfc.model import (Ensemble, NoiseLaw, TWO_PI, canonicalize, empirical, euclidean,
                       gaussian_diag, generate_noise, point_mass, sample_initial,
                       torus, two_cluster_torus, uniform_torus)
from mfc.problems import LqParams, make_lq


def test_point_mass_sampling_gives_constant_rows():
    ens = sample_initial(point_mass([0.0]), 3, seed=4, space=euclidean(1))
    assert ens.step == 0
    assert ens.states.shape == (3, 1)
    assert np.all(ens.states == 0.0)


def test_gaussian_sampling_variance_near_nine_quarters():
    ens = sample_initial(gaussian_diag([0.0], [2.25]), 3000, seed=7, space=euclidean(1))
    var = ens.states.var()
    assert abs(var - 2.25) / 2.25 < 0.15


def test_uniform_torus_resultant_length_small():
    n = 100_000
    ens = sample_initial(uniform_torus(), n, seed=3, space=torus(1))
    c = np.cos(ens.states).mean()
    s = np.sin(ens.states).mean()
    assert math.hypot(c, s) < 0.02  # 3/sqrt(N) Monte-Carlo tolerance


def test_two_cluster_sampling_concentrates_at_centers():
    ens = sample_initial(two_cluster_torus(concentration=25.0), 4000, seed=5, space=torus(1))
    x = ens.states.ravel()
    assert ((x >= 0) & (x < TWO_PI)).all()
    d0 = np.minimum(np.abs(x - 0.0), TWO_PI - x)            # distance to 0
    d1 = np.abs(x - math.pi)                                 # distance to pi
    assert (np.minimum(d0, d1) < 1.0).mean() > 0.99
    # antipodal equal clusters nearly cancel the first circular moment
    assert math.hypot(np.cos(x).mean(), np.sin(x).mean()) < 0.05


def test_empirical_law_resamples_file(tmp_path):
    pool = np.array([[1.0], [2.0], [3.0]])
    path = tmp_path / "pool.npy"
    np.save(path, pool)
    ens = sample_initial(empirical(str(path)), 50, seed=1, space=euclidean(1))
    assert set(np.unique(ens.states)) <= {1.0, 2.0, 3.0}


def test_sampling_is_deterministic_under_seed():
    a = sample_initial(gaussian_diag([0.0], [1.0]), 64, seed=9, space=euclidean(1))
    b = sample_initial(gaussian_diag([0.0], [1.0]), 64, seed=9, space=euclidean(1))
    assert a.states.tobytes() == b.states.tobytes()


def test_gaussian_on_torus_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        sample_initial(gaussian_diag([0.0], [1.0]), 4, seed=0, space=torus(1))


def test_noise_determinism_bit_exact():
    law = NoiseLaw("gaussian", dt=0.05)
    a = generate_noise(5, 7, 2, law, seed=42)
    b = generate_noise(5, 7, 2, law, seed=42)
    assert a.tensor.tobytes() == b.tensor.tobytes()
    assert a.sha256() == b.sha256()
    assert a.tensor.shape == (5, 7, 2)


def test_noise_gaussian_moments_at_clt_tolerance():
    bank = generate_noise(10_000, 1, 1, NoiseLaw("gaussian", dt=1.0), seed=11)
    x = bank.tensor.ravel()
    assert abs(x.mean()) < 0.05
    assert 0.94 < x.var() < 1.06


def test_noise_variance_scales_with_dt():
    bank = generate_noise(20_000, 2, 1, NoiseLaw("gaussian", dt=0.05), seed=1)
    ratio = bank.tensor.var() / 0.05
    # 1/sqrt(NTm) convergence, 4 sigma window
    assert abs(ratio - 1.0) < 4 * math.sqrt(2.0 / bank.tensor.size)


def test_noise_uniform_support_bound():
    bank = generate_noise(10_000, 1, 1, NoiseLaw("uniform", bound=1.0), seed=2)
    assert np.abs(bank.tensor).max() <= 1.0


def test_noise_truncation_clips_at_k_sqrt_dt():
    law = NoiseLaw("gaussian", dt=0.04, truncate_k=2.0)
    bank = generate_noise(5000, 3, 1, law, seed=3)
    assert np.abs(bank.tensor).max() <= 2.0 * math.sqrt(0.04) + 1e-15


def test_canonicalize_examples():
    t = torus(1)
    assert canonicalize(t, np.array([[2 * math.pi]]))[0, 0] == 0.0
    assert canonicalize(t, np.array([[-math.pi / 2]]))[0, 0] == pytest.approx(3 * math.pi / 2)
    e = euclidean(1)
    assert canonicalize(e, np.array([[5.3]]))[0, 0] == 5.3


def test_canonicalize_rejects_nan():
    with pytest.raises(NumericalStateError):
        canonicalize(torus(1), np.array([[float("nan")]]))


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8),
       st.lists(st.floats(-20, 20), min_size=1, max_size=6))
@settings(max_examples=60, deadline=None)
def test_torus_closure_under_update_sequences(start, increments):
    states = np.array(start)[:, None]
    space = torus(1)
    states = canonicalize(space, states)
    for inc in increments:
        states = canonicalize(space, states + inc)
        assert (states >= 0).all() and (states < TWO_PI).all()


def test_ensemble_rejects_nonfinite_with_step_index():
    with pytest.raises(NumericalStateError, match="step 3"):
        Ensemble(step=3, states=np.array([[1.0], [np.inf]]), space=euclidean(1))


def test_ensemble_rejects_noncanonical_torus_states():
    with pytest.raises(NumericalStateError):
        Ensemble(step=0, states=np.array([[7.0]]), space=torus(1))


def test_problem_spec_hash_is_stable_and_param_sensitive():
    p1 = make_lq(LqParams(), dt=0.05, t_model=1.0)
    p2 = make_lq(LqParams(), dt=0.05, t_model=1.0)
    p3 = make_lq(LqParams(kappa=2.0), dt=0.05, t_model=1.0)
    assert p1.sha256() == p2.sha256()
    assert p1.sha256() != p3.sha256()


def test_discount_weights_follow_the_stated_convention():
    prob = make_lq(LqParams(beta=1.0), dt=0.1, t_model=1.0)
    assert prob.running_weight(0) == pytest.approx(0.1)
    assert prob.running_weight(3) == pytest.approx(math.exp(-0.3) * 0.1)
    assert prob.terminal_weight() == pytest.approx(math.exp(-1.0))
