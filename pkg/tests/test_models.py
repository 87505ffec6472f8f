import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from qfilter import _kernels
from qfilter.errors import DegenerateModelError, InvalidStateError
from qfilter.models import (
    ChiSquaredModel,
    LinearGaussianModel,
    QubitChainModel,
    identity_link,
    load_trajectory,
    mobius_step,
    model_from_params,
    save_trajectory,
    simulate_linear,
    simulate_microstep_chain,
    simulate_qubit_chain,
    trapezoid_weights,
)


def test_linear_invariants():
    with pytest.raises(ValueError):
        LinearGaussianModel(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LinearGaussianModel(0.5, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LinearGaussianModel(0.5, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        LinearGaussianModel(0.5, float("nan"), 1.0, 1.0)


def test_linear_noise_free_decay(rng):
    model = LinearGaussianModel(0.5, 0.0, 1.0, 1.0)
    traj = simulate_linear(model, 5, rng, s0=1.0)
    assert np.allclose(traj.hidden, [0.5, 0.25, 0.125, 0.0625, 0.03125], atol=0)


def test_linear_stationary_variance():
    model = LinearGaussianModel(0.9, 1.0, 1.0, 1.0)
    traj = simulate_linear(model, 100_000, np.random.default_rng(3))
    expected = 1 / (1 - 0.81)
    assert abs(np.var(traj.hidden) / expected - 1) < 0.05


def test_linear_noiseless_observation(rng):
    model = LinearGaussianModel(0.7, 1.0, 1.0, 0.0, check=False)
    traj = simulate_linear(model, 50, rng)
    assert np.array_equal(traj.observed, traj.hidden)


def test_linear_densities():
    model = LinearGaussianModel(0.8, 0.6, 1.0, 1.0)
    x = np.linspace(-3, 3, 13)
    assert np.allclose(model.observation_density(x, 0.4), stats.norm.pdf(x, 0.4, 1.0), rtol=1e-13)
    assert np.allclose(model.transition_density(x, 0.5), stats.norm.pdf(x, 0.4, 0.6), rtol=1e-13)
    with pytest.raises(DegenerateModelError):
        LinearGaussianModel(0.8, 0.0, 1.0, 1.0).transition_density(0.1, 0.2)


def test_qubit_zero_coupling(rng):
    model = QubitChainModel(0.0, 100)
    traj = simulate_qubit_chain(model, 4000, 0.3, rng)
    assert np.all(traj.hidden == 0.3)
    assert abs(traj.observed.mean()) < 4 * 10 / math.sqrt(4000)
    assert abs(traj.observed.var() / 100 - 1) < 0.1


def test_qubit_boundary_is_fixed_point():
    model = QubitChainModel(0.1, 100)
    for s in (-1.0, 1.0):
        assert model.drift(s) == s
        assert model.diffusion_std(s) == 0.0
    # unclamped kernel run from the boundary stays there
    hidden, _, _ = _kernels.euler_qubit_chain(1.0, 0.1, 100.0, 0.0, np.ones(5), np.ones(5), False)
    assert np.all(hidden == 1.0)
    with pytest.raises(InvalidStateError):
        simulate_qubit_chain(model, 3, 1.0, np.random.default_rng(0))


def test_qubit_first_observation_mean():
    c, N, s0 = 0.1, 100, 0.5
    model = QubitChainModel(c, N)
    x1 = np.array([simulate_qubit_chain(model, 1, s0, np.random.default_rng(i)).observed[0] for i in range(1000)])
    # E[s1] under the clamp: clip(mu + sd Z) to [-1, 1]
    mu = s0 + N * c * c * s0 * (1 - s0**2)
    sd = c * (1 - s0**2) * math.sqrt(N)
    es1, _ = integrate.quad(lambda z: np.clip(mu + sd * z, -1, 1) * stats.norm.pdf(z), -12, 12)
    se = x1.std(ddof=1) / math.sqrt(x1.size)
    assert abs(x1.mean() - N * c * es1) < 3 * se


def test_qubit_densities():
    model = QubitChainModel(0.1, 100)
    x = np.linspace(-20, 20, 9)
    assert np.allclose(model.observation_density(x, 0.3), stats.norm.pdf(x, 3.0, 10.0), rtol=1e-13)
    s = 0.3
    mean = s + 100 * 0.01 * s * (1 - s * s)
    std = 0.1 * (1 - s * s) * 10
    assert np.allclose(model.transition_density(x / 20, s), stats.norm.pdf(x / 20, mean, std), rtol=1e-13)
    with pytest.raises(DegenerateModelError):
        QubitChainModel(0.0, 100).transition_density(0.1, 0.1)


def test_qubit_transition_matches_simulation():
    model = QubitChainModel(0.03, 100)
    s_prev = 0.3
    rng = np.random.default_rng(11)
    draws = np.array([simulate_qubit_chain(model, 1, s_prev, rng).hidden[0] for _ in range(10_000)])
    mean, std = float(model.drift(s_prev)), float(model.diffusion_std(s_prev))
    assert stats.kstest(draws, stats.norm(mean, std).cdf).statistic < 0.02


def test_qubit_transition_matrix_columns_sum_to_one():
    model = QubitChainModel(0.1, 100)
    nodes = model.grid(401)
    K = model.transition_matrix(nodes)
    assert np.allclose(trapezoid_weights(nodes) @ K, 1.0, atol=1e-12)
    assert np.all(K >= 0)
    # zero coupling: every column is a point mass at its own node
    K0 = QubitChainModel(0.0, 100).transition_matrix(nodes)
    assert np.allclose(trapezoid_weights(nodes) @ K0, 1.0, atol=1e-12)
    assert np.all(np.argmax(K0, axis=0) == np.arange(nodes.size))


def test_coupled_noise_reuses_observation_noise():
    model = QubitChainModel(0.05, 100)
    t_ind = simulate_qubit_chain(model, 50, 0.2, np.random.default_rng(5))
    t_cpl = simulate_qubit_chain(model, 50, 0.2, np.random.default_rng(5), coupled_noise=True)
    assert np.array_equal(t_ind.observed[:1] - 100 * 0.05 * t_ind.hidden[:1], t_cpl.observed[:1] - 100 * 0.05 * t_cpl.hidden[:1])
    assert not np.array_equal(t_ind.hidden, t_cpl.hidden)


# --- exact micro-step chain ----------------------------------------------------


def test_mobius_step_formula():
    assert mobius_step(0.2, 0.1, 1) == pytest.approx(0.3 / 1.02, abs=1e-16)
    assert mobius_step(0.2, 0.1, -1) == pytest.approx(0.1 / 0.98, abs=1e-16)


@pytest.mark.parametrize("c", [1e-2, 1e-3])
def test_mobius_taylor(c):
    s = np.linspace(-0.99, 0.99, 199)
    for sign in (1, -1):
        err = mobius_step(s, c, sign) - s - sign * c * (1 - s * s)
        assert np.max(np.abs(err)) <= c * c


def test_microstep_zero_coupling():
    model = QubitChainModel(0.0, 100)
    traj = simulate_microstep_chain(model, 200, 0.4, np.random.default_rng(1))
    assert np.all(traj.hidden == 0.4)
    # symmetric +-1 walk of 100 steps per block
    assert abs(traj.observed.mean()) < 4 * 10 / math.sqrt(200)


def test_microstep_engines_agree():
    model = QubitChainModel(0.05, 20)
    a = simulate_microstep_chain(model, 10, 0.3, np.random.default_rng(9), engine="kernel")
    b = simulate_microstep_chain(model, 10, 0.3, np.random.default_rng(9), engine="quantum")
    assert np.array_equal(a.observed, b.observed)
    assert np.allclose(a.hidden, b.hidden, atol=1e-12)


# --- chi-squared observation ------------------------------------------------------


@pytest.mark.parametrize("t", [1.0, 3.0, 6.5])
@pytest.mark.parametrize("link", ["exp", "identity"])
def test_chi2_decomposition_reconstructs_density(t, link):
    model = ChiSquaredModel(t) if link == "exp" else ChiSquaredModel(t, identity_link())
    x = np.linspace(-1.5, 2.0, 15) if link == "exp" else np.linspace(0.05, 6.0, 15)
    d = model.decomposition()
    for s in (0.4, 1.0, 2.5):
        y = np.exp(x) if link == "exp" else x
        jac = np.exp(x) if link == "exp" else 1.0
        oracle = stats.chi2.pdf(y / s, t) / s * jac
        assert np.allclose(d.density(x, s), oracle, rtol=1e-12)
        assert np.allclose(model.observation_density(x, s), oracle, rtol=1e-12)


def test_chi2_derivatives():
    model = ChiSquaredModel(4.0)
    d = model.decomposition()
    x = np.linspace(-1, 1, 7)
    eps = 1e-6
    fd_t = (d.T(x + eps) - d.T(x - eps)) / (2 * eps)
    fd_h = (np.log(d.h(x + eps)) - np.log(d.h(x - eps))) / (2 * eps)
    assert np.allclose(d.T_prime(x), fd_t, rtol=1e-8)
    assert np.allclose(d.h_log_prime(x), fd_h, rtol=1e-7)
    assert np.allclose(d.Q_inverse(d.Q(np.array([0.5, 2.0]))), [0.5, 2.0])


def test_chi2_off_domain_and_sampling(rng):
    model = ChiSquaredModel(3.0, identity_link())
    assert model.observation_density(-1.0, 1.0) == 0.0
    assert model.observation_density(1.0, -1.0) == 0.0
    x = model.sample_observation(np.full(20_000, 2.0), rng)
    assert abs(x.mean() / (2.0 * 3.0) - 1) < 0.03
    with pytest.raises(ValueError):
        ChiSquaredModel(0.0)
    with pytest.raises(NotImplementedError):
        model.transition_density(1.0, 1.0)


# --- persistence -------------------------------------------------------------------


@given(st.integers(0, 2**31), st.integers(1, 40))
def test_trajectory_round_trip(tmp_path_factory, seed, T):
    path = tmp_path_factory.mktemp("traj") / "t.csv"
    model = LinearGaussianModel(0.5, 0.7, 1.3, 0.4)
    traj = simulate_linear(model, T, np.random.default_rng(seed))
    traj.seed = seed
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.hidden, traj.hidden)
    assert np.array_equal(back.observed, traj.observed)
    assert back.seed == seed and back.model_id == "linear"
    assert model_from_params(back.meta["params"]) == model


def test_model_from_params():
    m = QubitChainModel(0.1, 100)
    assert model_from_params(m.params()) == m
    with pytest.raises(ValueError):
        model_from_params({"kind": "nope"})


@pytest.mark.parametrize(
    "model",
    [LinearGaussianModel(0.5, 1.0, 1.3, 0.7), QubitChainModel(0.1, 100), ChiSquaredModel(3.0), ChiSquaredModel(5.0, identity_link())],
    ids=["linear", "qubit", "chi2-exp", "chi2-identity"],
)
def test_decomposition_reconstructs_density(model, rng):
    d = model.decomposition()
    if isinstance(model, ChiSquaredModel):
        s = rng.uniform(0.2, 3.0, 100)
        x = rng.uniform(-1.0, 1.5, 100) if model.link.name == "exp" else rng.uniform(0.05, 8.0, 100)
    else:
        s = rng.uniform(-1.0, 1.0, 100)
        x = rng.uniform(-15.0, 15.0, 100)
    assert np.max(np.abs(d.density(x, s) - model.observation_density(x, s))) < 1e-9


def test_microstep_stays_inside_and_is_reproducible():
    model = QubitChainModel(0.2, 50)
    a = simulate_microstep_chain(model, 500, 0.9, np.random.default_rng(3))
    b = simulate_microstep_chain(model, 500, 0.9, np.random.default_rng(3))
    assert np.all(np.abs(a.hidden) < 1.0)
    assert np.array_equal(a.hidden, b.hidden) and np.array_equal(a.observed, b.observed)
    q1 = simulate_qubit_chain(QubitChainModel(0.1, 100), 300, 0.1, np.random.default_rng(3))
    q2 = simulate_qubit_chain(QubitChainModel(0.1, 100), 300, 0.1, np.random.default_rng(3))
    assert np.array_equal(q1.hidden, q2.hidden) and np.array_equal(q1.observed, q2.observed)
