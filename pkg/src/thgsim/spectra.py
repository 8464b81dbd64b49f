"""Intracavity steady states, linearised fluctuations and output spectra.

Fluctuations about a classical steady state obey ``d(dy) = -A dy dt + B dW``
with ``A = -J`` (J the Jacobian of the noise-free drift in the doubled
variables) and ``D = B B^T`` at the steady state.  The intracavity spectral
matrix is ``S(w) = (A + iw)^-1 D (A^T - iw)^-1``; output quadrature spectra
follow from ``V_out = 1 + 2 sqrt(g_i g_j) S_quad``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import integrate, linalg, optimize

from . import criteria
from .models import CascadeParams, DirectParams, diffusion, integrate_classical, model_for
from .phase_space import quadrature_transform

log = logging.getLogger(__name__)

DEFAULT_OMEGA = np.linspace(-20.0, 20.0, 2001)
RESIDUAL_TOL = 1e-10


class SteadyStateError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


class UnstableError(ValueError):
    pass


@dataclass
class SteadyState:
    amplitudes: np.ndarray
    residual_norm: float
    drift_eigenvalues: np.ndarray = field(default=None)

    @property
    def stable(self) -> bool:
        return bool(np.all(self.drift_eigenvalues.real > 0))

    def doubled(self) -> np.ndarray:
        """``[a0, conj(a0), a1, conj(a1), ...]``."""
        y = np.empty(2 * self.amplitudes.size, dtype=complex)
        y[0::2] = self.amplitudes
        y[1::2] = self.amplitudes.conj()
        return y


@dataclass
class FluctuationModel:
    A: np.ndarray
    D: np.ndarray
    loss_rates: np.ndarray
    steady_state: SteadyState | None = None

    @property
    def n_modes(self) -> int:
        return self.A.shape[0] // 2

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def stationary_covariance(self) -> np.ndarray:
        """Solve ``A C + C A^T = D``: the equal-time fluctuation covariance."""
        return linalg.solve_sylvester(self.A, self.A.T, self.D)


# ---------------------------------------------------------------------------
# Jacobians of the noise-free drift in doubled variables
# ---------------------------------------------------------------------------

def drift_jacobian(params, y) -> np.ndarray:
    y = np.asarray(y, dtype=complex)
    if isinstance(params, DirectParams):
        k, ga, gb = params.kappa, params.gamma_a, params.gamma_b
        a, ap, b, bp = y
        return np.array([
            [-ga, 2 * k * ap * b, k * ap ** 2, 0],
            [2 * k * a * bp, -ga, 0, k * a ** 2],
            [-k * a ** 2, 0, -gb, 0],
            [0, -k * ap ** 2, 0, -gb],
        ], dtype=complex)
    if isinstance(params, CascadeParams):
        k1, k2 = params.kappa1, params.kappa2
        g0, g1, g2 = params.gamma0, params.gamma1, params.gamma2
        a0, a0p, a1, a1p, a2, a2p = y
        return np.array([
            [-g0, -2 * k1 * a1, -2 * k1 * a0p, -k2 * a2, -k2 * a1p, 0],
            [-2 * k1 * a1p, -g0, -k2 * a2p, -2 * k1 * a0, 0, -k2 * a1],
            [2 * k1 * a0, -k2 * a2, -g1, 0, -k2 * a0p, 0],
            [-k2 * a2p, 2 * k1 * a0p, 0, -g1, 0, -k2 * a0],
            [k2 * a1, 0, k2 * a0, 0, -g2, 0],
            [0, k2 * a1p, 0, k2 * a0p, 0, -g2],
        ], dtype=complex)
    raise TypeError(f"unknown parameter type {type(params).__name__}")


def _drift_matrix(params, y) -> np.ndarray:
    return -drift_jacobian(params, y)


def _require_intracavity(params):
    if params.variant != "intracavity":
        raise ValueError("steady states need the intracavity variant")
    eps = complex(params.epsilon)
    if eps.imag != 0 or eps.real < 0:
        raise ValueError("pump amplitude must be real and >= 0")
    if np.any(params.loss_rates <= 0):
        raise ValueError("steady states need all loss rates > 0")
    return eps.real


def _finish(params, amps) -> SteadyState:
    y = np.empty(2 * len(amps), dtype=complex)
    y[0::2] = amps
    y[1::2] = np.conj(amps)
    res = float(np.linalg.norm(model_for(params).drift(y)))
    eig = np.linalg.eigvals(_drift_matrix(params, y))
    return SteadyState(np.asarray(amps, dtype=complex), res, eig)


def steady_state_direct(params: DirectParams) -> SteadyState:
    """Real-amplitude root of ``eps = g_a a + k^2 a^5 / (3 g_b)``, ``b = -k a^3 / (3 g_b)``."""
    eps = _require_intracavity(params)
    k, ga, gb = params.kappa, params.gamma_a, params.gamma_b
    c5 = k * k / (3 * gb)

    def g(a):
        return ga * a + c5 * a ** 5 - eps

    if eps == 0:
        a = 0.0
    else:
        a = optimize.brentq(g, 0.0, eps / ga, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        for _ in range(3):  # Newton polish
            a -= g(a) / (ga + 5 * c5 * a ** 4)
    b = -k * a ** 3 / (3 * gb)
    ss = _finish(params, [a, b])
    if ss.residual_norm > RESIDUAL_TOL * max(1.0, eps):
        raise SteadyStateError(f"direct steady state residual {ss.residual_norm:.3g}", ss.residual_norm)
    return ss


def relax_classical(params, t_relax: float | None = None, start=None) -> np.ndarray:
    """Amplitudes after a long noise-free evolution from ``start`` (default vacuum)."""
    n = 2 if isinstance(params, DirectParams) else 3
    if t_relax is None:
        t_relax = 60.0 / float(np.min(params.loss_rates))
    start = np.zeros(n, dtype=complex) if start is None else np.asarray(start, dtype=complex)
    return integrate_classical(params, start, [0.0, t_relax], rtol=1e-11, atol=1e-11)[-1]


def steady_state_cascade(params: CascadeParams, seed_amplitudes=None) -> SteadyState:
    """Newton solve of the noise-free cascade equations, seeded by ODE relaxation."""
    eps = _require_intracavity(params)
    if eps == 0:
        return _finish(params, np.zeros(3, dtype=complex))
    x0 = relax_classical(params) if seed_amplitudes is None else np.asarray(seed_amplitudes, complex)
    rhs = _real_rhs(params)

    def jac(x):
        amps = x[:3] + 1j * x[3:]
        y = np.empty(6, dtype=complex)
        y[0::2], y[1::2] = amps, amps.conj()
        J = drift_jacobian(params, y)
        # d f_i / d(alpha_j) and d f_i / d(alpha_j*) on the conjugate manifold
        Ja, Jc = J[0::2, 0::2], J[0::2, 1::2]
        dre = Ja + Jc  # derivative w.r.t. Re(alpha_j)
        dim = 1j * (Ja - Jc)  # derivative w.r.t. Im(alpha_j)
        return np.block([[dre.real, dim.real], [dre.imag, dim.imag]])

    if not np.all(np.isfinite(x0)):
        raise SteadyStateError("non-finite starting point for the steady-state solve")
    try:
        sol = optimize.root(rhs, np.concatenate([x0.real, x0.imag]), jac=jac, method="hybr",
                            options={"xtol": 1e-14})
        x = sol.x
        for _ in range(3):
            x = x - np.linalg.solve(jac(x), rhs(x))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SteadyStateError(f"cascade steady state solve failed: {exc}") from exc
    ss = _finish(params, x[:3] + 1j * x[3:])
    if not np.isfinite(ss.residual_norm) or ss.residual_norm > RESIDUAL_TOL * max(1.0, eps):
        raise SteadyStateError(f"cascade steady state did not converge (residual "
                               f"{ss.residual_norm:.3g})", ss.residual_norm)
    return ss


def _real_rhs(params):
    model = model_for(params)

    def rhs(x):
        n = x.size // 2
        amps = x[:n] + 1j * x[n:]
        y = np.empty(2 * n, dtype=complex)
        y[0::2], y[1::2] = amps, amps.conj()
        d = model.drift(y)[0::2]
        return np.concatenate([d.real, d.imag])

    return rhs


def steady_state(params) -> SteadyState:
    if isinstance(params, DirectParams):
        return steady_state_direct(params)
    return steady_state_cascade(params)


def build_fluctuation_model(params, ss: SteadyState | None = None) -> FluctuationModel:
    """Drift ``A = -J`` and diffusion ``D`` at the steady state."""
    if ss is None:
        ss = steady_state(params)
    y = ss.doubled()
    return FluctuationModel(_drift_matrix(params, y), diffusion(y, params), params.loss_rates, ss)


def critical_pump_direct(params: DirectParams) -> float:
    """Pump above which the direct intracavity steady state loses stability."""
    ga, gb, k = params.gamma_a, params.gamma_b, params.kappa
    if not (k > 0 and ga > 0 and gb > 0):
        raise ValueError("critical pump needs kappa, gamma_a, gamma_b > 0")
    r = gb / ga
    kk = k * k / (9 * ga * gb)
    return (6 * kk) ** -0.25 * ((1 + r) ** 0.25 + 0.5 * (1 + r) ** 1.25)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass
class SpectralResult:
    omega: np.ndarray
    S: np.ndarray  # (n_w, N, N) complex, doubled-variable basis
    loss_rates: np.ndarray | None = None
    V_out: np.ndarray | None = None  # (n_w, 2n, 2n) real quadrature basis

    def bipartite(self, i: int, j: int) -> criteria.BipartiteReport:
        if self.V_out is None:
            raise ValueError("output spectra not computed")
        return criteria.bipartite_report(self.V_out, i, j)


def _check_stable(A):
    eig = np.linalg.eigvals(A)
    if np.any(eig.real < 0):
        raise UnstableError(f"drift matrix has eigenvalues with negative real part "
                            f"(min {eig.real.min():.3g}); no stationary spectrum")


def spectral_matrix(A, D, omega) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = A.shape[0]
    eye = np.eye(n)
    Ap = A[None] + 1j * omega[:, None, None] * eye
    Am = A[None] - 1j * omega[:, None, None] * eye
    X = np.linalg.solve(Ap, np.broadcast_to(D, Ap.shape))  # (A+iw)^-1 D
    # X (A^T - iw)^-1 = [(A - iw)^-1 X^T]^T
    return np.swapaxes(np.linalg.solve(Am, np.swapaxes(X, -1, -2)), -1, -2)


def ou_spectrum(fm: FluctuationModel, omega_grid=DEFAULT_OMEGA) -> SpectralResult:
    _check_stable(fm.A)
    omega = np.asarray(omega_grid, dtype=float)
    return SpectralResult(omega, spectral_matrix(fm.A, fm.D, omega), fm.loss_rates)


def output_quadrature_spectra(spectral: SpectralResult, loss_rates=None) -> np.ndarray:
    """Output quadrature variance matrix per frequency; vacuum level 1."""
    rates = spectral.loss_rates if loss_rates is None else np.asarray(loss_rates, dtype=float)
    n = spectral.S.shape[-1] // 2
    T = quadrature_transform(n)
    Sq = T @ spectral.S @ T.T
    Sq = 0.5 * (Sq + np.swapaxes(Sq, -1, -2))  # S(-w) = S(w)^T
    g = np.repeat(np.sqrt(rates), 2)
    V = np.eye(2 * n) + 2.0 * np.outer(g, g) * Sq.real
    spectral.V_out = V
    return V


def integrated_spectrum(fm: FluctuationModel) -> np.ndarray:
    """``int S(w) dw / 2pi`` by adaptive quadrature over the real line."""
    _check_stable(fm.A)

    def f(w):
        s = spectral_matrix(fm.A, fm.D, w)[0]
        return np.concatenate([s.real.ravel(), s.imag.ravel()])

    val, _ = integrate.quad_vec(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-11)
    n = fm.A.shape[0]
    return (val[: n * n] + 1j * val[n * n:]).reshape(n, n) / (2 * np.pi)


# ---------------------------------------------------------------------------
# pump sweeps
# ---------------------------------------------------------------------------

def _output_at(fm, w):
    s = SpectralResult(np.array([w]), spectral_matrix(fm.A, fm.D, [w]), fm.loss_rates)
    return output_quadrature_spectra(s)


def _refined_min(fm, omega, values, metric):
    k = int(np.argmin(values))
    best_w, best_v = omega[k], values[k]
    lo, hi = omega[max(k - 1, 0)], omega[min(k + 1, omega.size - 1)]
    if hi > lo:
        r = optimize.minimize_scalar(lambda w: float(metric(_output_at(fm, w))[0]),
                                     bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
        if r.fun < best_v:
            best_w, best_v = float(r.x), float(r.fun)
    return float(best_v), float(best_w)


@dataclass
class SweepResult:
    columns: dict[str, list] = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def add(self, key, value):
        self.columns.setdefault(key, []).append(value)

    def array(self, key) -> np.ndarray:
        return np.asarray(self.columns[key])


def _with_pump(params, eps):
    from dataclasses import replace
    return replace(params, epsilon=float(eps))


def pump_sweep(params, pump_grid, omega_grid=DEFAULT_OMEGA, refine: bool = True,
               tripartite: bool | None = None) -> SweepResult:
    """Minima over frequency of DS and EPR values (and vLF for three modes) per pump."""
    omega = np.asarray(omega_grid, dtype=float)
    n = 2 if isinstance(params, DirectParams) else 3
    if tripartite is None:
        tripartite = n == 3
    out = SweepResult()
    for eps in pump_grid:
        p = _with_pump(params, eps)
        try:
            fm = build_fluctuation_model(p)
            spec = ou_spectrum(fm, omega)
        except (UnstableError, SteadyStateError) as exc:
            log.warning("pump %g skipped: %s", eps, exc)
            out.skipped.append(float(eps))
            continue
        V = output_quadrature_spectra(spec)
        out.add("epsilon", float(eps))
        out.add("min_eig_real", float(fm.eigenvalues().real.min()))
        for m in range(n):
            out.add(f"N{m}", float(abs(fm.steady_state.amplitudes[m]) ** 2))
        for i, j in combinations(range(n), 2):
            metrics = {
                f"DSp_{i}{j}": lambda v, i=i, j=j: criteria.duan_simon(v, i, j)[0],
                f"DSm_{i}{j}": lambda v, i=i, j=j: criteria.duan_simon(v, i, j)[1],
                f"EPR_{i}{j}": lambda v, i=i, j=j: criteria.reid_epr(v, i, j),
                f"EPR_{j}{i}": lambda v, i=i, j=j: criteria.reid_epr(v, j, i),
            }
            mins = {}
            for key, fn in metrics.items():
                vals = fn(V)
                if refine:
                    mins[key] = _refined_min(fm, omega, vals, fn)
                else:
                    k = int(np.argmin(vals))
                    mins[key] = (float(vals[k]), float(omega[k]))
                out.add(key, mins[key][0])
                out.add(f"{key}_omega", mins[key][1])
            out.add(f"steering_{i}{j}",
                    criteria.classify_steering(mins[f"EPR_{i}{j}"][0], mins[f"EPR_{j}{i}"][0], 0.0))
        if tripartite:
            for sign, tag in ((-1, "m"), (1, "p")):
                rep = criteria.vlf_tripartite(V, x_sign=sign)
                for c, (i, j, k) in enumerate(rep.combinations):
                    out.add(f"vLF{tag}_{i}{j}{k}", float(rep.values[:, c].min()))
                out.add(f"vLF{tag}_violated", bool(np.any(rep.violated())))
    return out
