"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The stochastic criteria run 10^5 to 10^6 trajectories and take tens of
minutes on one core; expensive ensembles are computed once and shared.
"""

from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from thgsim import criteria
from thgsim.cli import EXIT_OK, main
from thgsim.config import parse_config
from thgsim.models import (CascadeParams, DirectParams, cascade_model, diffusion, direct_model,
                           integrate_classical, model_for)
from thgsim.phase_space import quadrature_transform
from thgsim.scenarios import read_table, run_scenario
from thgsim.sde import IntegrationConfig, run_ensemble
from thgsim.spectra import (build_fluctuation_model, critical_pump_direct,
                            integrated_spectrum, ou_spectrum, output_quadrature_spectra,
                            spectral_matrix, steady_state, steady_state_direct)

from conftest import random_states

pytestmark = pytest.mark.slow

DIRECT_CAV = DirectParams(1e-3, 1.0, 2.0, 100.0, "intracavity")
CASCADE_CAV = CascadeParams(1e-2, 1.5e-2, 1.0, 0.75, 1.25, 100.0, "intracavity")


def fd_jacobian(params, y, h=1e-6):
    m = model_for(params)
    J = np.empty((y.size, y.size), complex)
    for k in range(y.size):
        e = np.zeros(y.size, complex)
        e[k] = h * max(1.0, abs(y[k]))
        J[:, k] = (m.drift(y + e) - m.drift(y - e)) / (2 * e[k])
    return J


@lru_cache(maxsize=None)
def scenario_table(name):
    return run_scenario(parse_config(f"[run]\nscenario = {name}\n"))


@lru_cache(maxsize=None)
def direct_million():
    cfg = IntegrationConfig(dt=2e-3, t_max=1.5, n_traj=1_000_000, seed=11, scheme="midpoint",
                            sample_stride=5, divergence_radius=1e5)
    res = run_ensemble(direct_model(DirectParams(1e-3)), [100, 100, 0, 0], cfg)
    return res.times * 0.1, criteria.bipartite_report(res, 0, 1), res


# -- 1 ----------------------------------------------------------------------

def test_criterion_1_critical_pump(verdict):
    ec = critical_pump_direct(DIRECT_CAV)
    below = steady_state_direct(replace(DIRECT_CAV, epsilon=0.99 * ec))
    above = steady_state_direct(replace(DIRECT_CAV, epsilon=1.01 * ec))
    ok = abs(ec - 137) <= 1 and below.stable and not above.stable
    verdict(1, ok, f"eps_c = {ec:.4f}; min Re eig(A) at 0.99 eps_c = "
                   f"{below.drift_eigenvalues.real.min():.3g}, at 1.01 eps_c = "
                   f"{above.drift_eigenvalues.real.min():.3g}")


# -- 2 ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["travelling-direct", "travelling-cascade"])
def test_criterion_2_conservation(name, verdict):
    out = scenario_table(name)
    c = out.table.columns
    q, se = c["charge"], c["charge_se"]
    z = np.abs(q[1:] - q[0]) / se[1:]
    ok = bool(np.all(z <= 5)) and out.meta["n_diverged"] == 0
    verdict(f"2 ({name})", ok, f"{out.meta['n_traj']} trajectories, max |charge - charge(0)|/se = "
                               f"{z.max():.2f} over {len(z)} grid points (limit 5)")


# -- 3 ----------------------------------------------------------------------

def _baseline_checks(res, n):
    var, var_se = res.estimate(lambda m: np.diagonal(m.covariance(), axis1=1, axis2=2))
    var_ok = np.all(np.abs(var - 1) <= 5 * var_se + 1e-12)
    ds_ok, epr_ok = True, True
    for i in range(n):
        for j in range(i + 1, n):
            rep = criteria.bipartite_report(res, i, j)
            ds_ok &= np.allclose(rep.ds_plus, 4, atol=1e-10) and np.allclose(rep.ds_minus, 4, atol=1e-10)
            epr_ok &= np.allclose(rep.epr_ij, 1, atol=1e-10) and np.allclose(rep.epr_ji, 1, atol=1e-10)
            epr_ok &= bool(np.all(rep.steering == criteria.NONE))
    return bool(var_ok), bool(ds_ok), bool(epr_ok), float(np.max(np.abs(var - 1)))


def test_criterion_3_baselines(verdict):
    cfg = IntegrationConfig(dt=1e-2, t_max=2.0, n_traj=2000, seed=5, scheme="midpoint", n_bins=20)
    cases = {
        "direct kappa=0": (direct_model(DirectParams(0.0)), [100, 100, 0, 0], 2),
        "cascade kappa=0": (cascade_model(CascadeParams(0.0, 0.0)), [100, 100, 3, 3, 0, 0], 3),
        "direct cavity kappa=0": (direct_model(replace(DIRECT_CAV, kappa=0.0)), [0, 0, 0, 0], 2),
        "direct eps=0": (direct_model(replace(DIRECT_CAV, epsilon=0.0)), [0, 0, 0, 0], 2),
        "cascade eps=0": (cascade_model(replace(CASCADE_CAV, epsilon=0.0)), [0] * 6, 3),
    }
    details, ok = [], True
    for label, (model, y0, n) in cases.items():
        v, d, e, dev = _baseline_checks(run_ensemble(model, y0, cfg), n)
        ok &= v and d and e
        details.append(f"{label}: max|V-1| = {dev:.1e}")
    for params in (replace(DIRECT_CAV, epsilon=0.0), replace(CASCADE_CAV, epsilon=0.0)):
        V = output_quadrature_spectra(ou_spectrum(build_fluctuation_model(params)))
        ok &= bool(np.allclose(V, np.eye(V.shape[-1])))
    details.append("linearised eps=0 output spectra = identity")
    verdict(3, ok, "; ".join(details))


# -- 4 ----------------------------------------------------------------------

def test_criterion_4_noise_factorisation(verdict):
    rng = np.random.default_rng(4)
    worst = {}
    for label, params, n in (("cascade", CASCADE_CAV, 6), ("cascade travelling", CascadeParams(1e-2, 1.5e-2), 6),
                             ("direct", DIRECT_CAV, 4)):
        m = model_for(params)
        worst[label] = max(np.max(np.abs(m.noise(y) @ m.noise(y).T - diffusion(y, params)))
                           for y in random_states(rng, 100, n))
    # second moments of the direct noise: <dW_a dW_a> = 2 kappa a+ b dt and its conjugate partner
    a, ap, b, bp = random_states(rng, 1, 4)[0]
    D = diffusion([a, ap, b, bp], DIRECT_CAV)
    expected = np.diag([2e-3 * ap * b, 2e-3 * a * bp, 0, 0])
    d_ok = np.allclose(D, expected, rtol=1e-14, atol=0)
    ok = all(w < 1e-12 for w in worst.values()) and d_ok
    verdict(4, ok, ", ".join(f"{k} max|BB^T-D| = {v:.1e}" for k, v in worst.items())
            + f"; direct D entries match 2 kappa a+ b: {d_ok}")


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_jacobian(verdict):
    rng = np.random.default_rng(5)
    worst = {}
    for label, params, hi in (("direct", DIRECT_CAV, 130.0), ("cascade", CASCADE_CAV, 200.0)):
        errs = []
        for eps in rng.uniform(5, hi, 10):
            p = replace(params, epsilon=float(eps))
            fm = build_fluctuation_model(p)
            assert fm.steady_state.stable
            J = fd_jacobian(p, fm.steady_state.doubled())
            errs.append(np.max(np.abs(-fm.A - J) / (1 + np.abs(J))))
        worst[label] = max(errs)
    verdict(5, all(v < 1e-6 for v in worst.values()),
            ", ".join(f"{k}: max relative error {v:.1e}" for k, v in worst.items()))


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_ou_oracle(verdict):
    w = np.linspace(-20, 20, 2001)
    g, d = 1.0, 0.8
    S = spectral_matrix(np.array([[g]]), np.array([[d]]), w)[:, 0, 0]
    lor = float(np.max(np.abs(S - d / (g * g + w * w))))
    devs, tails = {}, {}
    for label, params in (("direct", DIRECT_CAV), ("cascade", CASCADE_CAV)):
        low = build_fluctuation_model(replace(params, epsilon=10.0))
        n = 2 * len(params.loss_rates)
        V = output_quadrature_spectra(ou_spectrum(low, [-1e3, 1e3]))
        devs[label] = float(np.max(np.abs(V - np.eye(n))))
        # at operating pumps the departure follows the analytic 1/omega^2 tail
        fm = build_fluctuation_model(params)
        V = output_quadrature_spectra(ou_spectrum(fm, [1e3]))[0]
        T = quadrature_transform(n // 2)
        gg = np.repeat(np.sqrt(params.loss_rates), 2)
        tail = 2 * np.outer(gg, gg) * (T @ fm.D @ T.T).real / 1e6
        tails[label] = float(np.max(np.abs(V - np.eye(n) - tail)) / max(np.abs(tail).max(), 1e-300))
    ok = lor < 1e-12 and all(v < 1e-6 for v in devs.values()) and all(v < 1e-2 for v in tails.values())
    verdict(6, ok, f"Lorentzian max error {lor:.1e}; |V_out - 1| at |omega|=1e3, eps=10: "
                   + ", ".join(f"{k} {v:.1e}" for k, v in devs.items())
                   + "; tail law at eps=100 relative error "
                   + ", ".join(f"{k} {v:.1e}" for k, v in tails.items()))


# -- 7 ----------------------------------------------------------------------

def test_criterion_7_linearised_vs_stochastic(verdict):
    # large photon numbers keep the nonlinear bias of the means well below the MC error
    params = CascadeParams(1e-3, 1.5e-3, 1.0, 0.75, 1.25, 1000.0, "intracavity")
    fm = build_fluctuation_model(params)
    T = quadrature_transform(3)
    C_lyap = (T @ fm.stationary_covariance() @ T.T).real
    C_int = (T @ integrated_spectrum(fm) @ T.T).real
    cfg = IntegrationConfig(dt=0.05, t_max=10.0, n_traj=1_000_000, seed=7, scheme="midpoint",
                            sample_stride=20, n_bins=100)
    res = run_ensemble(cascade_model(params), fm.steady_state.doubled(), cfg)
    v, se = res.estimate(lambda m: m.cnumber_covariance())
    z = np.abs(np.diag(v[-1]) - np.diag(C_int)) / np.diag(se[-1])
    ok = bool(np.all(z <= 3)) and np.allclose(C_lyap, C_int, atol=1e-8)
    verdict(7, ok, f"{res.n_traj} trajectories, {res.n_diverged} diverged; normal-ordered "
                   f"variances {np.round(np.diag(C_int), 4).tolist()}; |z| = {np.round(z, 2).tolist()}"
                   " (limit 3)")


# -- 8 ----------------------------------------------------------------------

def test_criterion_8a_direct_epr_window(verdict):
    xi, rep, _ = direct_million()
    se = rep.stderr["epr_ij"]
    below = rep.epr_ij < 1 - 2 * se
    window = xi[below]
    finite = below.any() and not below[-1] and not below[0]
    epr_depth = 1 - rep.epr_ij.min()
    ds_depth = 1 - rep.ds_min.min() / 4
    ok = bool(finite and epr_depth > ds_depth)
    verdict("8a", ok, f"EPR_ab < 1 for xi in [{window.min():.3f}, {window.max():.3f}], "
                      f"min EPR_ab = {rep.epr_ij.min():.3f}, min DS/4 = {rep.ds_min.min() / 4:.3f}")


def steering_onset(xi, labels, run=3):
    """First xi starting ``run`` consecutive asymmetric labels after a symmetric point."""
    asym = np.array([str(s).startswith("asymmetric") for s in labels])
    sym = np.flatnonzero(labels == criteria.SYMMETRIC)
    if sym.size == 0:
        return None
    for k in range(sym[0], len(xi) - run + 1):
        if asym[k:k + run].all():
            return float(xi[k])
    return None


def test_steering_onset_rule():
    xi = np.arange(8) * 0.01
    lab = np.array(["none", "asymmetric_i_steers_j", "symmetric", "symmetric", "asymmetric_i_steers_j",
                    "symmetric", "asymmetric_i_steers_j", "asymmetric_i_steers_j"], dtype=object)
    assert steering_onset(xi, lab, run=2) == pytest.approx(0.06)
    assert steering_onset(xi, np.array(["none"] * 8, dtype=object)) is None


def test_criterion_8b_steering_onset(verdict):
    xi, rep, res = direct_million()
    onset = steering_onset(xi, rep.steering)
    ok = onset is not None and 0.04 <= onset <= 0.12
    k = int(np.searchsorted(xi, onset)) if onset is not None else -1
    verdict("8b", ok, f"{res.n_traj} trajectories; asymmetric steering from xi = {onset} "
                      f"({rep.steering[k]}, EPR_ab = {rep.epr_ij[k]:.3f}, EPR_ba = {rep.epr_ji[k]:.3f})")


def test_criterion_8c_cascade_travelling(verdict):
    c = scenario_table("travelling-cascade").table.columns
    ds = {p: np.minimum(c[f"DSp_{p}"], c[f"DSm_{p}"]).min() for p in ("01", "12", "02")}
    epr20 = c["EPR_20"].min()
    ok = ds["01"] < ds["02"] and ds["12"] < ds["02"] and epr20 >= 0.97
    verdict("8c", ok, "min DS " + ", ".join(f"{k} {v:.3f}" for k, v in ds.items())
            + f"; min EPR_20 = {epr20:.4f} (limit 0.97)")


def test_criterion_8d_cascade_intracavity(verdict):
    c = scenario_table("spectra-cascade").table.columns
    ds = {p: np.minimum(c[f"DSp_{p}"], c[f"DSm_{p}"]) for p in ("01", "12", "02")}
    epr02 = np.minimum(c["EPR_02"], c["EPR_20"])
    tol = 1e-9
    ok = (np.all(ds["01"] < 4 - tol) and np.all(ds["12"] < 4 - tol)
          and np.all(ds["02"] >= 4 - tol) and np.all(epr02 >= 1 - tol))
    eps = c["epsilon"]
    bad02 = eps[ds["02"] < 4 - tol]
    verdict("8d", bool(ok), f"{len(eps)} pumps in [{eps[0]:g}, {eps[-1]:g}]; DS 01 violated at "
                            f"{np.count_nonzero(ds['01'] < 4 - tol)}, DS 12 at {np.count_nonzero(ds['12'] < 4 - tol)}; "
                            f"DS 02 min {ds['02'].min():.3f} (violated at {len(bad02)} pumps, "
                            f"eps <= {bad02.max() if bad02.size else 0:g}); min EPR 02/20 = {epr02.min():.4f}")


def test_criterion_8e_direct_intracavity(verdict):
    c = scenario_table("spectra-direct").table.columns
    e = np.minimum(c["EPR_01"], c["EPR_10"])
    sym = np.all(c["steering_01"] == criteria.SYMMETRIC) and np.allclose(c["EPR_01"], c["EPR_10"], rtol=1e-6)
    mono = np.all(np.diff(e) < 0)
    ec = critical_pump_direct(DIRECT_CAV)
    ok = bool(sym and mono and c["epsilon"][-1] < ec)
    verdict("8e", ok, f"eps {c['epsilon'][0]:g}..{c['epsilon'][-1]:g} (eps_c {ec:.2f}); symmetric: {bool(sym)}; "
                      f"min EPR strictly decreasing: {bool(mono)} "
                      f"({', '.join(f'{x:.3f}' for x in e)})")


def test_criterion_8f_tripartite(verdict):
    c = scenario_table("spectra-cascade").table.columns
    vals = np.stack([c[k] for k in ("vLFm_012", "vLFm_120", "vLFm_021")], axis=1)
    ok = not np.any(c["vLFm_violated"])
    verdict("8f", bool(ok), f"{len(c['epsilon'])} pumps; min vLF values {np.round(vals.min(axis=0), 3).tolist()}; "
                            f"violated at {int(np.count_nonzero(c['vLFm_violated']))} pumps")


# -- 9 ----------------------------------------------------------------------

def test_criterion_9_self_pulsing(verdict):
    t = np.linspace(0, 50, 5001)
    hi = integrate_classical(replace(DIRECT_CAV, epsilon=200.0), [1 + 1j, 0], t)
    na = np.abs(hi[:, 0]) ** 2
    late = na[t >= 40]
    swing = (late.max() - late.min()) / late.mean()
    # oscillation amplitude over the last two windows does not decay
    prev = na[(t >= 30) & (t < 40)]
    sustained = swing > 0.1 and (late.max() - late.min()) > 0.5 * (prev.max() - prev.min())
    lo = integrate_classical(DIRECT_CAV, [1 + 1j, 0], t)
    ss = steady_state(DIRECT_CAV).amplitudes
    err = float(np.max(np.abs(lo[-1] - ss)))
    ok = bool(sustained) and err < 1e-6
    verdict(9, ok, f"eps=200: N_a swings by {100 * swing:.0f}% of its mean over t in [40, 50]; "
                   f"eps=100: |alpha(50) - steady state| = {err:.1e}")


# -- 10 ---------------------------------------------------------------------

@pytest.mark.parametrize("scenario,extra", [
    ("travelling-direct", "n_traj = 3000\nt_max = 0.5\nn_bins = 30\n"),
    ("travelling-cascade", "n_traj = 3000\nt_max = 2\nn_bins = 30\n"),
    ("selfpulse-direct", "n_traj = 60\nt_max = 5\nn_bins = 6\n"),
])
def test_criterion_10_determinism(tmp_path, scenario, extra, verdict):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[run]\nscenario = {scenario}\n[integration]\n{extra}")
    blobs = []
    for w in (1, 2, 4):
        out = tmp_path / f"w{w}"
        assert main(["run", str(cfg), "--workers", str(w), "--seed", "99", "--out", str(out)]) == EXIT_OK
        blobs.append((out / f"{scenario}.csv").read_bytes())
    rows = len(read_table(tmp_path / "w1" / f"{scenario}.csv")["t"])
    verdict(f"10 ({scenario})", all(b == blobs[0] for b in blobs),
            f"workers 1, 2, 4 give byte-identical data ({len(blobs[0])} bytes, {rows} rows)")
