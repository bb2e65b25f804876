import numpy as np
import pytest

from haargp import circuit, linalg
from haargp.errors import TrainingDivergence
from haargp.gp import KernelMatrix, ObservedSet, PredictionSet, gp_posterior
from haargp.qntk import (
    LinearizedDynamics,
    gradient_descent_train,
    haar_averaged_qntk,
    haar_averaged_qntk_leading,
    meta_kernel_estimate,
    parameter_shift_gradient,
    qntk,
    shift_derivative,
    theta_star,
)


def setup_problem(seed=0, n=2, depth=6, n_states=2):
    rng = np.random.default_rng(seed)
    spec = circuit.random_circuit(n, depth, rng)
    theta = circuit.sample_parameters(depth, rng)
    states = [linalg.random_pure_state(spec.d, rng) for _ in range(n_states)]
    obs = circuit.pauli_z_observables(n)
    return spec, theta, states, obs


def test_parameter_shift_matches_fd():
    spec, theta, states, obs = setup_problem(1)
    exact = parameter_shift_gradient(spec, theta, states, obs)
    fd = parameter_shift_gradient(spec, theta, states, obs, force_fd=True)
    assert exact.exact
    assert not fd.exact
    assert np.max(np.abs(exact.values - fd.values)) < 1e-7


def test_sweep_gradient_matches_entrywise():
    # O(L) sweep vs direct rotation-by-rotation evaluation
    spec, theta, states, obs = setup_problem(2, depth=4)
    grad = parameter_shift_gradient(spec, theta, states, obs)
    from haargp.qntk import SHIFT
    for mu in range(spec.depth):
        for k, rho in enumerate(states):
            tp = theta.copy()
            tp[mu] += SHIFT
            tm = theta.copy()
            tm[mu] -= SHIFT
            fp = circuit.model_output(spec, tp, rho, obs)
            fm = circuit.model_output(spec, tm, rho, obs)
            assert np.allclose(grad.values[:, k, mu], fp - fm, atol=1e-11)


def test_qntk_matrix_properties():
    spec, theta, states, obs = setup_problem(3)
    k = qntk(spec, theta, states, obs)
    m = k.matrix
    assert np.allclose(m, m.T, atol=1e-12)
    assert np.linalg.eigvalsh(m).min() > -1e-10
    assert k.n_channels == len(obs.observables)
    assert k.n_points == len(states)


def test_shift_derivative_first_order_consistency():
    spec, theta, states, obs = setup_problem(4, depth=3)
    grad = parameter_shift_gradient(spec, theta, states, obs)
    d1 = shift_derivative(spec, theta, states[0], obs, (1,))
    assert d1[0] == pytest.approx(grad.values[0, 0, 1], abs=1e-11)


def test_shift_derivative_mixed_partial_symmetry():
    spec, theta, states, obs = setup_problem(5, depth=3)
    d12 = shift_derivative(spec, theta, states[0], obs, (0, 2))
    d21 = shift_derivative(spec, theta, states[0], obs, (2, 0))
    assert np.allclose(d12, d21, atol=1e-11)


def test_haar_averaged_qntk_leading_vs_closed():
    d = 16
    z = linalg.pauli_string("Z" + "III")
    rho = linalg.basis_state(d, 0)
    x = linalg.pauli_string("YIII")
    closed = haar_averaged_qntk(z, z, rho, rho, x, x)
    lead = haar_averaged_qntk_leading(z, z, rho, rho, x, x)
    # ratio approaches 2 from above as d grows
    assert 1.5 < closed / lead < 3.5


def test_haar_averaged_qntk_frozen_value():
    # d=4, equal pure states, traceless O with Tr(O^2)=d, Pauli generator:
    # closed form gives 128/300
    d = 4
    z = linalg.pauli_string("ZI")
    rho = linalg.basis_state(d, 0)
    x = linalg.pauli_string("YI")
    val = haar_averaged_qntk(z, z, rho, rho, x, x)
    assert val == pytest.approx(128 / 300, rel=1e-12)


def test_training_reduces_loss():
    spec, theta, states, obs = setup_problem(6, depth=8)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    y = np.array([[0.2, -0.1]])
    traj = gradient_descent_train(spec, theta, states, y, obs1, eta=0.05, steps=40)
    assert traj.losses[-1] < traj.losses[0]
    assert traj.outputs.shape == (41, 1, 2)


def test_training_divergence_detected():
    # outputs are bounded, so the blow-up guard is relative: start at a
    # near-perfect fit, then let a huge step rate bounce the loss up.
    spec, theta, states, obs = setup_problem(7, depth=4)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    f0 = np.array([[circuit.model_output(spec, theta, rho, obs1)[0]
                    for rho in states]])
    y = f0 + 1e-7
    with pytest.raises(TrainingDivergence):
        gradient_descent_train(spec, theta, states, y, obs1, eta=100.0, steps=300)


def test_linearized_t0_and_infinity():
    spec, theta, states, obs = setup_problem(8, depth=10)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    kernel = qntk(spec, theta, states, obs1)
    f0 = np.array([[0.3, -0.2]])
    y = np.array([[0.1, 0.0]])
    lin = LinearizedDynamics(kernel, n_observed=2, f0=f0, y=y, eta=0.01)
    assert np.allclose(lin.mean(0), f0, atol=1e-12)
    # observed outputs converge to the labels
    assert np.allclose(lin.observed_mean(10 ** 7), y, atol=1e-6)


def test_linearized_discrete_matches_continuous_smalleta():
    spec, theta, states, obs = setup_problem(9, depth=10)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    kernel = qntk(spec, theta, states, obs1)
    f0 = np.array([[0.25, -0.15]])
    y = np.zeros((1, 2))
    cont = LinearizedDynamics(kernel, 2, f0, y, eta=1e-3)
    disc = LinearizedDynamics(kernel, 2, f0, y, eta=1e-3, mode="discrete")
    assert np.allclose(cont.mean(50), disc.mean(50), atol=1e-3)


def test_linearized_discrete_instability_flagged():
    spec, theta, states, obs = setup_problem(10, depth=6)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    kernel = qntk(spec, theta, states, obs1)
    f0 = np.zeros((1, 2))
    y = np.zeros((1, 2))
    lam_max = np.linalg.eigvalsh(kernel.matrix).max()
    with pytest.raises(Exception):
        LinearizedDynamics(kernel, 2, f0, y, eta=2.5 / lam_max, mode="discrete")


def test_infinite_time_matches_gp_posterior():
    """The t -> infinity linearized prediction with f0 = 0 is GP
    regression with the frozen kernel."""
    spec, theta, states, obs = setup_problem(11, depth=12, n_states=4)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    kernel = qntk(spec, theta, states, obs1)
    n_obs = 3
    y = np.array([[0.2, -0.3, 0.4]])
    f0 = np.zeros((1, 4))
    jit = 1e-10
    lin = LinearizedDynamics(kernel, n_obs, f0, y, eta=0.01, jitter=jit)
    inf_mean, _ = lin.infinite_time()
    gp_kernel = KernelMatrix(np.array([[1.0]]), kernel.matrix * spec.d, dim=spec.d)
    post = gp_posterior(gp_kernel, ObservedSet(states[:n_obs], y),
                        PredictionSet(states[n_obs:]), jitter=jit * spec.d)
    assert np.allclose(inf_mean[:, n_obs:], post.mean, atol=1e-8)


def test_predicted_covariance_shrinks():
    spec, theta, states, obs = setup_problem(12, depth=10, n_states=3)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    kernel = qntk(spec, theta, states, obs1)
    f0 = np.zeros((1, 3))
    y = np.array([[0.1, -0.2]])
    lin = LinearizedDynamics(kernel, 2, f0, y, eta=0.01)
    c0 = lin.predicted_covariance(0)
    cinf = lin.predicted_covariance(10 ** 6)
    assert c0.shape == (1, 1)  # one channel, one prediction point
    assert cinf[0, 0] <= c0[0, 0] + 1e-12


def test_theta_star_single_step_solves_linear_model():
    spec, theta, states, obs = setup_problem(13, depth=14)
    obs1 = circuit.ObservableSet((obs.observables[0],))
    grad = parameter_shift_gradient(spec, theta, states, obs1)
    kernel = qntk(spec, theta, states, obs1)
    f = np.array([circuit.model_output(spec, theta, rho, obs1)[0] for rho in states])
    y = np.array([0.15, -0.05])
    th_new = theta_star(theta, grad, kernel, f[None, :], y[None, :])
    # in the linear model the update lands exactly on the labels
    g = grad.flat()
    f_lin = f + g @ (th_new - theta)
    assert np.allclose(f_lin, y, atol=1e-8)


def test_meta_kernel_estimates_run():
    est = meta_kernel_estimate(1, 2, "dQNTK", 400, np.random.default_rng(3))
    assert est.order == "dQNTK"
    assert np.isfinite(est.value)
    assert est.std_error > 0
    est2 = meta_kernel_estimate(1, 2, "ddQNTK", 200, np.random.default_rng(4))
    assert np.isfinite(est2.value)
    with pytest.raises(Exception):
        meta_kernel_estimate(1, 2, "qqNTK", 100, np.random.default_rng(5))
