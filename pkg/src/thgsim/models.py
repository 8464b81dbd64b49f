"""Positive-P drift and noise for direct and cascaded third-harmonic generation.

Direct THG (triply degenerate four-wave mixing) uses the truncated positive-P
approximation: third-order derivatives in the Fokker-Planck equation are
dropped, leaving noise on the fundamental only.  The cascade (SHG followed by
sum-frequency mixing) maps exactly onto positive-P equations.

State ordering: direct ``[a, a+, b, b+]``; cascade ``[a0, a0+, a1, a1+, a2, a2+]``.
Noise matrices are ``(n_vars, n_channels)`` and multiply real Wiener
increments.  Square roots of complex arguments take the principal branch.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numba as nb
import numpy as np

from .phase_space import SystemState

TRAVELLING = "travelling-wave"
INTRACAVITY = "intracavity"
Variant = Literal["travelling-wave", "intracavity"]


def _check_variant(variant, gammas, epsilon):
    if variant not in (TRAVELLING, INTRACAVITY):
        raise ValueError(f"variant must be {TRAVELLING!r} or {INTRACAVITY!r}, got {variant!r}")
    if any(g < 0 for g in gammas):
        raise ValueError("loss rates must be >= 0")
    if variant == TRAVELLING and (any(g != 0 for g in gammas) or epsilon != 0):
        raise ValueError("travelling-wave variant has no pump or cavity loss")


@dataclass(frozen=True)
class DirectParams:
    kappa: float
    gamma_a: float = 0.0
    gamma_b: float = 0.0
    epsilon: complex = 0.0
    variant: Variant = TRAVELLING

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        _check_variant(self.variant, (self.gamma_a, self.gamma_b), self.epsilon)

    @property
    def loss_rates(self) -> np.ndarray:
        return np.array([self.gamma_a, self.gamma_b], dtype=float)

    def vector(self) -> np.ndarray:
        return np.array([self.kappa, self.gamma_a, self.gamma_b, self.epsilon], dtype=complex)


@dataclass(frozen=True)
class CascadeParams:
    kappa1: float
    kappa2: float
    gamma0: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    epsilon: complex = 0.0
    variant: Variant = TRAVELLING

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("couplings must be >= 0")
        _check_variant(self.variant, (self.gamma0, self.gamma1, self.gamma2), self.epsilon)

    @property
    def loss_rates(self) -> np.ndarray:
        return np.array([self.gamma0, self.gamma1, self.gamma2], dtype=float)

    def vector(self) -> np.ndarray:
        return np.array([self.kappa1, self.kappa2, self.gamma0, self.gamma1,
                         self.gamma2, self.epsilon], dtype=complex)


# ---------------------------------------------------------------------------
# compiled right-hand sides: rhs(y, p, drift_out, noise_out)
# ---------------------------------------------------------------------------

@nb.njit(nogil=True, cache=True)
def direct_rhs(y, p, f, B):
    k = p[0].real
    ga = p[1].real
    gb = p[2].real
    eps = p[3]
    a, ap, b, bp = y[0], y[1], y[2], y[3]
    f[0] = eps - ga * a + k * ap * ap * b
    f[1] = eps.conjugate() - ga * ap + k * a * a * bp
    f[2] = -gb * b - (k / 3.0) * a * a * a
    f[3] = -gb * bp - (k / 3.0) * ap * ap * ap
    B[:, :] = 0.0
    B[0, 0] = cmath.sqrt(2.0 * k * ap * b)
    B[1, 1] = cmath.sqrt(2.0 * k * a * bp)


@nb.njit(nogil=True, cache=True)
def cascade_rhs(y, p, f, B):
    k1 = p[0].real
    k2 = p[1].real
    g0 = p[2].real
    g1 = p[3].real
    g2 = p[4].real
    eps = p[5]
    a0, a0p, a1, a1p, a2, a2p = y[0], y[1], y[2], y[3], y[4], y[5]
    f[0] = eps - g0 * a0 - 2.0 * k1 * a0p * a1 - k2 * a1p * a2
    f[1] = eps.conjugate() - g0 * a0p - 2.0 * k1 * a0 * a1p - k2 * a1 * a2p
    f[2] = -g1 * a1 + k1 * a0 * a0 - k2 * a0p * a2
    f[3] = -g1 * a1p + k1 * a0p * a0p - k2 * a0 * a2p
    f[4] = -g2 * a2 + k2 * a0 * a1
    f[5] = -g2 * a2p + k2 * a0p * a1p
    B[:, :] = 0.0
    s1 = cmath.sqrt(-2.0 * k1 * a1)
    s1p = cmath.sqrt(-2.0 * k1 * a1p)
    s2 = cmath.sqrt(-k2 * a2 / 2.0)
    s2p = cmath.sqrt(-k2 * a2p / 2.0)
    B[0, 0] = s1
    B[1, 1] = s1p
    # eta3 + i eta5 on a0, eta3 - i eta5 on a1 (and 4, 6 for the plus variables)
    B[0, 2] = s2
    B[0, 4] = 1j * s2
    B[2, 2] = s2
    B[2, 4] = -1j * s2
    B[1, 3] = s2p
    B[1, 5] = 1j * s2p
    B[3, 3] = s2p
    B[3, 5] = -1j * s2p


@nb.njit(nogil=True, cache=True)
def csqrt(z):
    """Principal complex square root (branch cut on the negative real axis)."""
    x = z.real
    y = z.imag
    r = math.hypot(x, y)
    if r == 0.0:
        return 0j
    w = math.sqrt(0.5 * (r + abs(x)))
    if x >= 0.0:
        return complex(w, 0.5 * y / w)
    return complex(0.5 * abs(y) / w, math.copysign(w, y))


@nb.njit(nogil=True, cache=True)
def direct_increment(y, p, dt, dW, out):
    """``out = drift * dt + B @ dW`` without forming B."""
    k = p[0].real
    ga = p[1].real
    gb = p[2].real
    eps = p[3]
    a, ap, b, bp = y[0], y[1], y[2], y[3]
    out[0] = (eps - ga * a + k * ap * ap * b) * dt + csqrt(2.0 * k * ap * b) * dW[0]
    out[1] = (eps.conjugate() - ga * ap + k * a * a * bp) * dt + csqrt(2.0 * k * a * bp) * dW[1]
    out[2] = (-gb * b - (k / 3.0) * a * a * a) * dt
    out[3] = (-gb * bp - (k / 3.0) * ap * ap * ap) * dt


@nb.njit(nogil=True, cache=True)
def cascade_increment(y, p, dt, dW, out):
    k1 = p[0].real
    k2 = p[1].real
    g0 = p[2].real
    g1 = p[3].real
    g2 = p[4].real
    eps = p[5]
    a0, a0p, a1, a1p, a2, a2p = y[0], y[1], y[2], y[3], y[4], y[5]
    s2 = csqrt(-k2 * a2 / 2.0)
    s2p = csqrt(-k2 * a2p / 2.0)
    out[0] = ((eps - g0 * a0 - 2.0 * k1 * a0p * a1 - k2 * a1p * a2) * dt
              + csqrt(-2.0 * k1 * a1) * dW[0] + s2 * (dW[2] + 1j * dW[4]))
    out[1] = ((eps.conjugate() - g0 * a0p - 2.0 * k1 * a0 * a1p - k2 * a1 * a2p) * dt
              + csqrt(-2.0 * k1 * a1p) * dW[1] + s2p * (dW[3] + 1j * dW[5]))
    out[2] = (-g1 * a1 + k1 * a0 * a0 - k2 * a0p * a2) * dt + s2 * (dW[2] - 1j * dW[4])
    out[3] = (-g1 * a1p + k1 * a0p * a0p - k2 * a0 * a2p) * dt + s2p * (dW[3] - 1j * dW[5])
    out[4] = (-g2 * a2 + k2 * a0 * a1) * dt
    out[5] = (-g2 * a2p + k2 * a0p * a1p) * dt


def make_increment(rhs):
    """Fused increment built from a plain ``rhs``; slower, allocates per call."""

    @nb.njit(nogil=True)
    def increment(y, p, dt, dW, out):
        n = y.shape[0]
        f = np.empty(n, dtype=np.complex128)
        B = np.empty((n, dW.shape[0]), dtype=np.complex128)
        rhs(y, p, f, B)
        for k in range(n):
            acc = f[k] * dt
            for j in range(dW.shape[0]):
                acc += B[k, j] * dW[j]
            out[k] = acc

    return increment


@dataclass(frozen=True)
class SDEModel:
    """A model the ensemble engine can integrate.

    ``rhs`` is a numba-compiled ``rhs(y, p, drift_out, noise_out)``.
    ``increment``, if given, is a compiled ``increment(y, p, dt, dW, out)``
    returning ``drift*dt + B @ dW`` in one pass; the engine uses it in the
    inner loop and falls back to ``rhs`` otherwise.
    """

    name: str
    n_modes: int
    n_channels: int
    rhs: Callable
    params: np.ndarray = field(repr=False)
    loss_rates: np.ndarray = field(default=None, repr=False)
    increment: Callable = field(default=None, repr=False)

    def __post_init__(self):
        if self.increment is None:
            object.__setattr__(self, "increment", make_increment(self.rhs))

    @property
    def n_vars(self) -> int:
        return 2 * self.n_modes

    def drift_and_noise(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = np.ascontiguousarray(y, dtype=complex)
        f = np.empty(self.n_vars, dtype=complex)
        B = np.empty((self.n_vars, self.n_channels), dtype=complex)
        self.rhs(y, self.params, f, B)
        return f, B

    def drift(self, y: np.ndarray) -> np.ndarray:
        return self.drift_and_noise(y)[0]

    def noise(self, y: np.ndarray) -> np.ndarray:
        return self.drift_and_noise(y)[1]


def direct_model(params: DirectParams) -> SDEModel:
    return SDEModel("direct", 2, 2, direct_rhs, params.vector(), params.loss_rates, direct_increment)


def cascade_model(params: CascadeParams) -> SDEModel:
    return SDEModel("cascade", 3, 6, cascade_rhs, params.vector(), params.loss_rates, cascade_increment)


def model_for(params) -> SDEModel:
    if isinstance(params, DirectParams):
        return direct_model(params)
    if isinstance(params, CascadeParams):
        return cascade_model(params)
    raise TypeError(f"unknown parameter type {type(params).__name__}")


def _vec(state) -> np.ndarray:
    if isinstance(state, SystemState):
        return state.to_vector()
    return np.asarray(state, dtype=complex)


def _expect(y, n, what):
    if y.shape != (2 * n,):
        raise ValueError(f"{what} needs a {n}-mode state, got {y.size // 2} modes")


def drift_direct(state, params: DirectParams) -> np.ndarray:
    y = _vec(state)
    _expect(y, 2, "direct model")
    return direct_model(params).drift(y)


def noise_direct(state, params: DirectParams) -> np.ndarray:
    y = _vec(state)
    _expect(y, 2, "direct model")
    return direct_model(params).noise(y)


def drift_cascade(state, params: CascadeParams) -> np.ndarray:
    y = _vec(state)
    _expect(y, 3, "cascade model")
    return cascade_model(params).drift(y)


def noise_cascade(state, params: CascadeParams) -> np.ndarray:
    y = _vec(state)
    _expect(y, 3, "cascade model")
    return cascade_model(params).noise(y)


def diffusion_direct(state, params: DirectParams) -> np.ndarray:
    """Analytic diffusion matrix of the truncated equations: diag(2k a+ b, 2k a b+, 0, 0)."""
    a, ap, b, bp = _vec(state)
    k = params.kappa
    return np.diag(np.array([2 * k * ap * b, 2 * k * a * bp, 0, 0], dtype=complex))


def diffusion_cascade(state, params: CascadeParams) -> np.ndarray:
    a0, a0p, a1, a1p, a2, a2p = _vec(state)
    k1, k2 = params.kappa1, params.kappa2
    D = np.zeros((6, 6), dtype=complex)
    D[0, 0] = -2 * k1 * a1
    D[1, 1] = -2 * k1 * a1p
    D[0, 2] = D[2, 0] = -k2 * a2
    D[1, 3] = D[3, 1] = -k2 * a2p
    return D


def diffusion(state, params) -> np.ndarray:
    if isinstance(params, DirectParams):
        return diffusion_direct(state, params)
    return diffusion_cascade(state, params)


def conserved_charge(state, model: str) -> complex:
    """Manley-Rowe charge: ``N_a + 3 N_b`` (direct) or ``N0 + 2 N1 + 3 N2`` (cascade)."""
    y = _vec(state)
    n = y[0::2] * y[1::2]
    if model == "direct":
        _expect(y, 2, "direct charge")
        return complex(n[0] + 3 * n[1])
    if model == "cascade":
        _expect(y, 3, "cascade charge")
        return complex(n[0] + 2 * n[1] + 3 * n[2])
    raise ValueError(f"model must be 'direct' or 'cascade', got {model!r}")


def charge_weights(model: str) -> np.ndarray:
    return {"direct": np.array([1.0, 3.0]), "cascade": np.array([1.0, 2.0, 3.0])}[model]


def classical_rhs(state, params) -> np.ndarray:
    """Noise-free drift with ``alpha_plus = conj(alpha)`` imposed.

    Takes and returns the vector of mode amplitudes ``[alpha_0, alpha_1, ...]``.
    """
    if isinstance(state, SystemState):
        amps = np.array([m.alpha for m in state.modes])
    else:
        amps = np.asarray(state, dtype=complex)
    y = np.empty(2 * amps.size, dtype=complex)
    y[0::2] = amps
    y[1::2] = amps.conj()
    return model_for(params).drift(y)[0::2]


def classical_rhs_real(params) -> Callable[[float, np.ndarray], np.ndarray]:
    """``f(t, x)`` on stacked real/imag parts, for ``scipy.integrate.solve_ivp``."""
    model = model_for(params)
    n = model.n_modes
    y = np.empty(2 * n, dtype=complex)
    f = np.empty(2 * n, dtype=complex)
    B = np.empty((2 * n, model.n_channels), dtype=complex)

    def rhs(t, x):
        amps = x[:n] + 1j * x[n:]
        y[0::2] = amps
        y[1::2] = amps.conj()
        model.rhs(y, model.params, f, B)
        d = f[0::2]
        return np.concatenate([d.real, d.imag])

    return rhs


def integrate_classical(params, amplitudes, t_eval, rtol: float = 1e-10, atol: float = 1e-10):
    """Noise-free evolution on the conjugate manifold; returns ``(len(t_eval), n)`` amplitudes."""
    from scipy.integrate import solve_ivp

    amps = np.asarray(amplitudes, dtype=complex)
    n = amps.size
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(classical_rhs_real(params), (t_eval[0], t_eval[-1]),
                    np.concatenate([amps.real, amps.imag]), t_eval=t_eval,
                    method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"classical integration failed: {sol.message}")
    return (sol.y[:n] + 1j * sol.y[n:]).T
