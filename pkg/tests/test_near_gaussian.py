import numpy as np
import pytest

from haargp import linalg
from haargp.moments import MomentSpec, connected_moment
from haargp.near_gaussian import (
    MomentSet,
    QuarticAction,
    action_evaluate,
    corrected_covariance,
    corrected_mean,
    couplings_from_moments,
    gaussianity_diagnostics,
    predicted_connected_four,
    quadrature_moments,
    symmetrize_four,
)


def rank_one_quartic(ws, coeffs):
    m = ws[0].shape[0]
    v = np.zeros((m,) * 4)
    for w, c in zip(ws, coeffs):
        v += c * np.einsum("a,b,c,d->abcd", w, w, w, w)
    return v


def small_action(scale=0.05, lam=1.0):
    rng = np.random.default_rng(2)
    k = np.array([[1.3, -0.4], [-0.4, 0.9]])
    w1 = rng.standard_normal(2)
    w2 = rng.standard_normal(2)
    v = scale * rank_one_quartic([w1, w2], [0.7, 0.4])
    return QuarticAction(k, v, lam=lam)


def test_symmetrize_idempotent():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 3, 3, 3))
    s = symmetrize_four(v)
    assert np.allclose(symmetrize_four(s), s, atol=1e-14)
    assert np.allclose(s, np.transpose(s, (2, 0, 3, 1)), atol=1e-14)


def test_action_evaluate_value():
    act = QuarticAction(np.eye(2), np.zeros((2, 2, 2, 2)), lam=1.0)
    f = np.array([1.0, 2.0])
    assert action_evaluate(act, f) == pytest.approx(2.5)
    v = np.zeros((2, 2, 2, 2))
    v[0, 0, 0, 0] = 24.0
    act2 = QuarticAction(np.eye(2), v, lam=1.0)
    assert action_evaluate(act2, f) == pytest.approx(2.5 + 1.0)


def test_corrected_covariance_first_order():
    act = small_action()
    c = act.propagator()
    w = np.einsum("cdef,ac,bd,ef->ab", act.v_coupling, c, c, c)
    expected = c - (act.lam / 2) * w
    assert np.allclose(corrected_covariance(act), 0.5 * (expected + expected.T),
                       atol=1e-13)


def test_predicted_connected_four_sign_and_symmetry():
    act = small_action()
    v4 = predicted_connected_four(act)
    assert np.allclose(v4, symmetrize_four(v4), atol=1e-13)
    # positive-combination V makes every diagonal connected 4-point negative
    for i in range(2):
        assert v4[i, i, i, i] < 0


def test_coupling_roundtrip_perturbative():
    """V -> moments -> V recovery at a perturbative scale (1e-8 identity)."""
    q = 0.8
    vbar = -3e-5
    second = np.array([[q]])
    fourth = np.array(vbar).reshape(1, 1, 1, 1)
    moments = MomentSet(second, fourth)
    act = couplings_from_moments(moments, lam=1.0)
    back_second = corrected_covariance(act)
    back_fourth = predicted_connected_four(act)
    assert abs(back_second[0, 0] - q) < 1e-8
    assert abs(back_fourth[0, 0, 0, 0] - vbar) < 1e-8
    assert act.warning is None


def test_coupling_warning_outside_perturbative_regime():
    second = np.array([[1.0]])
    fourth = np.array(-0.5).reshape(1, 1, 1, 1)
    act = couplings_from_moments(MomentSet(second, fourth))
    assert act.warning is not None


def test_corrected_mean_pins_observed_entries():
    act = small_action()
    out = corrected_mean(act, np.array([0.7]), [1])
    assert out.shape == (2,)
    assert out[1] == pytest.approx(0.7, abs=1e-14)


def test_corrected_mean_reduces_to_gaussian_at_zero_v():
    k = np.array([[1.1, -0.3], [-0.3, 0.8]])
    act = QuarticAction(k, np.zeros((2, 2, 2, 2)))
    c = act.propagator()
    y = np.array([0.4])
    out = corrected_mean(act, y, [0])
    gauss = c[1, 0] / c[0, 0] * y[0]
    assert out[1] == pytest.approx(gauss, abs=1e-12)


def test_quadrature_matches_gaussian_when_v_zero():
    k = np.array([[1.2, 0.3], [0.3, 0.9]])
    act = QuarticAction(k, np.zeros((2, 2, 2, 2)))
    mean, cov, conn4 = quadrature_moments(act, n_nodes=220)
    assert np.allclose(mean, 0, atol=1e-10)
    assert np.allclose(cov, act.propagator(), atol=1e-8)
    assert np.max(np.abs(conn4)) < 1e-7


def test_gaussianity_diagnostics_normal_and_uniform():
    rng = np.random.default_rng(5)
    n = 60_000
    samples = np.column_stack([
        rng.standard_normal(n),            # excess kurtosis 0
        rng.uniform(-1, 1, size=n),        # excess kurtosis -1.2
    ])
    rep = gaussianity_diagnostics(samples, labels=["gauss", "flat"])
    assert abs(rep.kurtosis[0]) < 4 * rep.kurtosis_se[0]
    assert rep.kurtosis[1] == pytest.approx(-1.2, abs=4 * rep.kurtosis_se[1] + 0.02)
    assert not rep.degenerate
    assert "flat" in rep.flagged
    assert "gauss" not in rep.flagged


def test_gaussianity_diagnostics_degenerate_column():
    rng = np.random.default_rng(6)
    samples = np.column_stack([rng.standard_normal(2000), np.full(2000, 0.25)])
    rep = gaussianity_diagnostics(samples)
    assert rep.labels[1] in rep.degenerate
    assert rep.labels[0] not in rep.degenerate


def test_gaussianity_diagnostics_needs_samples():
    with pytest.raises(Exception):
        gaussianity_diagnostics(np.zeros((10, 1)))


def test_extracted_coupling_shrinks_with_dimension():
    """The connected 4-point magnitude extracted from circuit moments
    falls rapidly with Hilbert dimension (log-log slope well below -2)."""
    dims = [4, 8, 16]
    mags = []
    for d in dims:
        rho_a = linalg.basis_state(d, 0)
        rho_b = linalg.basis_state(d, 1)
        ob = linalg.pauli_string("Z" + "I" * (int(np.log2(d)) - 1))
        pairs = ((rho_a, ob), (rho_b, ob), (rho_a, ob), (rho_b, ob))
        conn4 = connected_moment(MomentSpec(pairs), 4)
        mags.append(abs(conn4))
    slope = np.polyfit(np.log(dims), np.log(mags), 1)[0]
    assert -5.0 < slope < -2.5


def test_moment_set_symmetrizes():
    second = np.array([[1.0, 0.1], [0.1, 1.0]])
    raw = np.zeros((2, 2, 2, 2))
    raw[0, 1, 0, 1] = -0.004
    ms = MomentSet(second, raw)
    assert np.allclose(ms.fourth_connected, symmetrize_four(raw), atol=1e-15)
