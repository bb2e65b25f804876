import numpy as np
import pytest

from haargp import circuit, linalg
from haargp.errors import ContractViolation, DimensionError
from haargp.gp import (
    KernelMatrix,
    ObservedSet,
    PredictionSet,
    fidelity_kernel,
    gp_posterior,
    marginal_predictive,
    prior_kernel,
    state_gram,
)


def random_states(d, count, seed):
    rng = np.random.default_rng(seed)
    return [linalg.random_pure_state(d, rng) for _ in range(count)]


def leading_kernel(obs_count, states, seed=0):
    rng = np.random.default_rng(seed)
    d = states[0].dim
    obs = circuit.ObservableSet(tuple(
        linalg.random_hermitian(d, rng, traceless=True) for _ in range(obs_count)))
    return prior_kernel(obs, states, mode="leading"), obs


def test_fidelity_kernel_bounds():
    states = random_states(4, 2, 1)
    k = fidelity_kernel(states[0], states[1])
    assert 0 <= k <= 1 + 1e-12
    assert fidelity_kernel(states[0], states[0]) == pytest.approx(1.0, abs=1e-12)


def test_state_gram_psd():
    states = random_states(8, 6, 2)
    g = state_gram(states)
    assert np.allclose(g, g.T, atol=1e-13)
    assert np.linalg.eigvalsh(g).min() > -1e-12


def test_prior_kernel_flat_matches_entries():
    states = random_states(4, 3, 3)
    kernel, _ = leading_kernel(2, states)
    flat = kernel.flat()
    ent = kernel.entries()
    n, P = 2, 3
    for i in range(n):
        for j in range(n):
            for a in range(P):
                for b in range(P):
                    assert flat[i * P + a, j * P + b] == pytest.approx(
                        ent[i, j, a, b], rel=1e-14)


def test_posterior_matches_direct_solve():
    # single channel: mean must equal k_po (K_oo + jit)^-1 y computed by hand
    states = random_states(4, 5, 4)
    kernel, _ = leading_kernel(1, states)
    y = np.array([[0.3, -0.2, 0.5]])
    observed = ObservedSet(states[:3], y)
    predict = PredictionSet(states[3:])
    jit = 1e-12
    post = gp_posterior(kernel, observed, predict, jitter=jit)
    flat = kernel.flat()
    # jitter is applied in G units, so it enters the flat kernel scaled by M/d
    m_over_d = flat[0, 0] / kernel.state_block[0, 0]
    k_oo = flat[:3, :3] + jit * m_over_d * np.eye(3)
    k_po = flat[3:, :3]
    mean = k_po @ np.linalg.solve(k_oo, y[0])
    assert np.allclose(post.mean[0], mean, atol=1e-10)


def test_posterior_variance_nonnegative():
    states = random_states(4, 6, 5)
    kernel, _ = leading_kernel(2, states)
    y = np.zeros((2, 4))
    post = gp_posterior(kernel, ObservedSet(states[:4], y), PredictionSet(states[4:]))
    assert np.all(post.variance() >= -1e-12)


def test_empty_observed_returns_prior():
    states = random_states(4, 3, 6)
    kernel, _ = leading_kernel(1, states)
    observed = ObservedSet((), np.zeros((1, 0)))
    post = gp_posterior(kernel, observed, PredictionSet(states))
    assert np.allclose(post.mean, 0)
    assert np.allclose(post.covariance, kernel.entries())


def test_interpolation_at_observed_point():
    # predicting an observed state reproduces its label when noise is tiny
    states = random_states(4, 3, 7)
    kernel, _ = leading_kernel(1, states + [states[0]])
    y = np.array([[0.4, -0.1, 0.25]])
    observed = ObservedSet(states, y)
    predict = PredictionSet([states[0]])
    kernel2, _ = leading_kernel(1, list(states) + [states[0]])
    post = gp_posterior(kernel2, observed, predict, jitter=1e-13)
    assert post.mean[0, 0] == pytest.approx(0.4, abs=1e-4)
    assert post.variance()[0, 0] < 1e-6


def test_dense_and_separable_paths_agree():
    states = random_states(4, 4, 8)
    kernel, obs = leading_kernel(2, states)
    dense = kernel.entries()
    kernel_dense = KernelMatrix.from_dense(dense, dim=4)
    y = np.array([[0.2, -0.3], [0.1, 0.05]])
    observed = ObservedSet(states[:2], y)
    predict = PredictionSet(states[2:])
    jit = 1e-11
    a = gp_posterior(kernel, observed, predict, jitter=jit)
    b = gp_posterior(kernel_dense, observed, predict, jitter=jit)
    assert np.allclose(a.mean, b.mean, atol=1e-8)
    assert np.allclose(a.covariance, b.covariance, atol=1e-8)


def test_log_marginal_single_channel_value():
    states = random_states(4, 2, 9)
    kernel, _ = leading_kernel(1, states)
    y = np.array([[0.37]])
    observed = ObservedSet(states[:1], y)
    post = marginal_predictive(observed, PredictionSet(states[1:]), kernel, jitter=1e-12)
    scale = kernel.flat()[0, 0] / kernel.state_block[0, 0]
    k_eff = kernel.flat()[0, 0] + 1e-12 * scale
    expected = -0.5 * y[0, 0] ** 2 / k_eff - 0.5 * np.log(k_eff) - 0.5 * np.log(2 * np.pi)
    assert post.log_marginal[0] == pytest.approx(expected, rel=1e-8)


def test_coverage_of_posterior_intervals():
    """Sampling f from the prior and conditioning on part of it, the true
    held-out values should land in the central 95% interval about 95% of
    the time (binomial tolerance 0.03 over 2000 trials)."""
    states = random_states(4, 6, 10)
    kernel, _ = leading_kernel(1, states, seed=10)
    flat = kernel.flat()
    chol = np.linalg.cholesky(flat + 1e-12 * np.eye(6))
    rng = np.random.default_rng(77)
    n_obs = 4
    observed_states, predict_states = states[:n_obs], states[n_obs:]
    hits = 0
    trials = 2000
    crit = 1.959963984540054
    for _ in range(trials):
        f = chol @ rng.standard_normal(6)
        observed = ObservedSet(observed_states, f[None, :n_obs])
        post = gp_posterior(kernel, observed, PredictionSet(predict_states),
                            jitter=1e-12)
        z = (f[n_obs] - post.mean[0, 0]) / np.sqrt(post.variance()[0, 0])
        hits += abs(z) <= crit
    assert hits / trials == pytest.approx(0.95, abs=0.03)


def test_exact_mode_kernel_runs():
    states = random_states(4, 2, 11)
    rng = np.random.default_rng(12)
    obs = circuit.ObservableSet((linalg.random_hermitian(4, rng, traceless=True),))
    kernel = prior_kernel(obs, states, mode="exact")
    ent = kernel.entries()
    # exact/ leading gap is order 1/d relative
    lead = prior_kernel(obs, states, mode="leading").entries()
    assert np.all(np.isfinite(ent))
    rel = np.abs(ent - lead).max() / np.abs(ent).max()
    assert 0 < rel < 1
