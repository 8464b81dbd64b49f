from dataclasses import replace

import numpy as np
import pytest

from thgsim import criteria
from thgsim.models import CascadeParams, DirectParams, diffusion, model_for
from thgsim.phase_space import quadrature_transform
from thgsim.spectra import (FluctuationModel, SpectralResult, SteadyStateError, UnstableError,
                            build_fluctuation_model, critical_pump_direct, drift_jacobian,
                            integrated_spectrum, ou_spectrum, output_quadrature_spectra,
                            pump_sweep, relax_classical, spectral_matrix, steady_state,
                            steady_state_cascade, steady_state_direct)

DIRECT = DirectParams(1e-3, 1.0, 2.0, 100.0, "intracavity")
CASCADE = CascadeParams(1e-2, 1.5e-2, 1.0, 0.75, 1.25, 100.0, "intracavity")


def fd_jacobian(params, y, h=1e-6):
    """Central differences of the noise-free drift in each (holomorphic) variable."""
    m = model_for(params)
    n = y.size
    J = np.empty((n, n), complex)
    for k in range(n):
        e = np.zeros(n, complex)
        e[k] = h * max(1.0, abs(y[k]))
        J[:, k] = (m.drift(y + e) - m.drift(y - e)) / (2 * e[k])
    return J


def test_vacuum_steady_states():
    ss = steady_state_direct(replace(DIRECT, epsilon=0.0))
    assert np.all(ss.amplitudes == 0)
    fm = build_fluctuation_model(replace(DIRECT, epsilon=0.0))
    assert np.allclose(fm.A, np.diag([1, 1, 2, 2]))
    assert np.all(fm.D == 0)
    assert np.all(steady_state_cascade(replace(CASCADE, epsilon=0.0)).amplitudes == 0)


def test_direct_steady_state_against_relaxation():
    ss = steady_state_direct(DIRECT)
    assert ss.residual_norm < 1e-10
    assert ss.stable
    a, b = ss.amplitudes
    assert b == pytest.approx(-DIRECT.kappa * a ** 3 / (3 * DIRECT.gamma_b))
    relaxed = relax_classical(DIRECT)
    assert np.allclose(relaxed, ss.amplitudes, atol=1e-6)


def test_direct_steady_state_monotone_in_pump():
    amps = [steady_state_direct(replace(DIRECT, epsilon=e)).amplitudes[0].real
            for e in np.linspace(0, 200, 41)]
    assert np.all(np.diff(amps) > 0)


def test_cascade_steady_state_fig_parameters():
    ss = steady_state_cascade(CASCADE)
    assert ss.residual_norm < 1e-10
    assert ss.stable


def test_cascade_newton_matches_relaxation(rng):
    for eps in rng.uniform(10, 200, 10):
        p = replace(CASCADE, epsilon=float(eps))
        ss = steady_state_cascade(p)
        assert ss.residual_norm < 1e-10
        assert np.allclose(relax_classical(p), ss.amplitudes, atol=1e-6)


def test_steady_state_preconditions():
    with pytest.raises(ValueError):
        steady_state_direct(DirectParams(1e-3))
    with pytest.raises(ValueError):
        steady_state_direct(replace(DIRECT, epsilon=1j))
    with pytest.raises(SteadyStateError):
        steady_state_cascade(CASCADE, seed_amplitudes=[np.nan, 0, 0])


def test_direct_drift_matrix_entry():
    ss = steady_state_direct(DIRECT)
    fm = build_fluctuation_model(DIRECT, ss)
    a = ss.amplitudes[0].real
    k, gb = DIRECT.kappa, DIRECT.gamma_b
    assert fm.A[0, 1] == pytest.approx(2 * k * k * a ** 4 / (3 * gb), rel=1e-12)
    assert np.allclose(fm.D, fm.D.T)
    assert np.allclose(fm.D, diffusion(ss.doubled(), DIRECT))


@pytest.mark.parametrize("params", [DIRECT, CASCADE])
def test_jacobian_matches_finite_differences(params, rng):
    for eps in rng.uniform(10, 130, 5):
        p = replace(params, epsilon=float(eps))
        y = steady_state(p).doubled()
        J = drift_jacobian(p, y)
        assert np.all(np.abs(fd_jacobian(p, y) - J) < 1e-6 * (1 + np.abs(J)))
    # also off the conjugate manifold
    for y in rng.standard_normal((5, 2 * (len(params.loss_rates)))) * 10 + 0j:
        J = drift_jacobian(params, y)
        assert np.all(np.abs(fd_jacobian(params, y) - J) < 1e-6 * (1 + np.abs(J)))


def test_critical_pump():
    ec = critical_pump_direct(DIRECT)
    assert ec == pytest.approx(137, abs=1)
    assert critical_pump_direct(replace(DIRECT, kappa=2e-3)) == pytest.approx(ec / np.sqrt(2))
    below = steady_state_direct(replace(DIRECT, epsilon=0.99 * ec))
    above = steady_state_direct(replace(DIRECT, epsilon=1.01 * ec))
    assert below.stable and not above.stable
    with pytest.raises(ValueError):
        critical_pump_direct(DirectParams(1e-3))


def test_scalar_lorentzian():
    w = np.linspace(-20, 20, 2001)
    g, d = 1.3, 0.7
    S = spectral_matrix(np.array([[g]]), np.array([[d]]), w)[:, 0, 0]
    assert np.max(np.abs(S - d / (g * g + w * w))) < 1e-12


def test_zero_diffusion_gives_vacuum_output():
    fm = build_fluctuation_model(DIRECT)
    fm0 = FluctuationModel(fm.A, np.zeros_like(fm.D), fm.loss_rates)
    sp = ou_spectrum(fm0, np.linspace(-5, 5, 11))
    assert np.all(sp.S == 0)
    assert np.allclose(output_quadrature_spectra(sp), np.eye(4)[None])


def test_high_frequency_limit():
    fm = build_fluctuation_model(CASCADE)
    w = np.array([1e2, 1e3, 1e4])
    sp = ou_spectrum(fm, w)
    norms = np.abs(sp.S).max(axis=(1, 2))
    assert norms[1] / norms[2] == pytest.approx(100, rel=1e-2)
    V = output_quadrature_spectra(sp)
    # leading tail: V - 1 -> 2 sqrt(g_i g_j) Re(T D T^T) / w^2
    T = quadrature_transform(3)
    g = np.repeat(np.sqrt(CASCADE.loss_rates), 2)
    tail = 2 * np.outer(g, g) * (T @ fm.D @ T.T).real
    assert np.allclose((V[2] - np.eye(6)) * 1e8, tail, rtol=1e-3, atol=1e-6)
    low = build_fluctuation_model(replace(CASCADE, epsilon=10.0))
    V = output_quadrature_spectra(ou_spectrum(low, [-1e3, 1e3]))
    assert np.max(np.abs(V - np.eye(6))) < 1e-6


def test_spectrum_symmetry_and_reality():
    fm = build_fluctuation_model(CASCADE)
    w = np.linspace(-3, 3, 61)
    sp = ou_spectrum(fm, w)
    assert np.allclose(sp.S[::-1], np.conj(sp.S), atol=1e-14)
    assert np.allclose(sp.S[::-1], np.swapaxes(sp.S, 1, 2), atol=1e-14)
    V = output_quadrature_spectra(sp)
    assert np.isrealobj(V)
    assert np.allclose(V, V[::-1], atol=1e-12)
    assert np.allclose(V, np.swapaxes(V, 1, 2))


def test_integrated_spectrum_equals_lyapunov():
    fm = build_fluctuation_model(CASCADE)
    C = fm.stationary_covariance()
    assert np.allclose(fm.A @ C + C @ fm.A.T, fm.D, atol=1e-12)
    assert np.allclose(integrated_spectrum(fm), C, atol=1e-8)


def test_unstable_spectrum_rejected():
    p = replace(DIRECT, epsilon=200.0)
    fm = build_fluctuation_model(p)
    with pytest.raises(UnstableError):
        ou_spectrum(fm)


def test_opo_squeezing_convention():
    # degenerate parametric amplifier below threshold: V_Y(0) = 1 - 4k/(g+k)^2,
    # perfect output squeezing as k -> g
    g, k = 1.0, 0.9
    A = np.array([[g, -k], [-k, g]], complex)
    D = np.diag([k, k]).astype(complex)
    sp = SpectralResult(np.array([0.0]), spectral_matrix(A, D, [0.0]), np.array([g]))
    V = output_quadrature_spectra(sp)
    assert V[0, 1, 1] == pytest.approx(1 - 4 * g * k / (g + k) ** 2, rel=1e-12)
    assert V[0, 0, 0] == pytest.approx(1 + 4 * g * k / (g - k) ** 2, rel=1e-12)


def test_direct_sweep_symmetric_and_violated():
    sw = pump_sweep(DIRECT, np.linspace(10, 130, 7), np.linspace(-10, 10, 401))
    assert set(sw.columns["steering_01"]) <= {criteria.SYMMETRIC, criteria.NONE}
    assert sw.columns["steering_01"][-1] == criteria.SYMMETRIC
    e = sw.array("EPR_01")
    assert np.all(np.diff(e) <= 1e-12)
    assert np.allclose(sw.array("EPR_01"), sw.array("EPR_10"))


def test_sweep_skips_unstable_pumps():
    sw = pump_sweep(DIRECT, [50.0, 200.0], np.linspace(-5, 5, 101), refine=False)
    assert sw.skipped == [200.0]
    assert list(sw.array("epsilon")) == [50.0]


def test_refinement_never_worse_than_grid():
    w = np.linspace(-20, 20, 81)
    a = pump_sweep(CASCADE, [60.0], w, refine=False)
    b = pump_sweep(CASCADE, [60.0], w, refine=True)
    for key in ("DSp_01", "EPR_12", "EPR_21"):
        assert b.array(key)[0] <= a.array(key)[0] + 1e-15


def test_bipartite_curves_from_spectral_result():
    fm = build_fluctuation_model(DIRECT)
    sp = ou_spectrum(fm, np.linspace(-3, 3, 31))
    with pytest.raises(ValueError):
        sp.bipartite(0, 1)
    output_quadrature_spectra(sp)
    rep = sp.bipartite(0, 1)
    assert rep.epr_ij.shape == (31,)
    T = quadrature_transform(2)
    assert T.shape == (4, 4)
