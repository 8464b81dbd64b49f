"""Phase-space amplitudes, quadratures and mergeable ensemble moments.

Positive-P variables come in pairs ``(alpha, alpha_plus)`` per optical mode.
State vectors are flat complex arrays ordered ``[a0, a0+, a1, a1+, ...]`` and
quadrature vectors ``[X0, Y0, X1, Y1, ...]``.

Moments are kept as Welford/Chan running means and co-moments, which merge
exactly and stay accurate when amplitudes are large (N ~ 1e4) while the
fluctuations of interest are O(1).
"""

from __future__ import annotations

import cmath
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class InsufficientSamplesError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModeAmplitude:
    alpha: complex
    alpha_plus: complex

    @classmethod
    def coherent(cls, alpha: complex) -> "ModeAmplitude":
        return cls(complex(alpha), complex(alpha).conjugate())

    @property
    def intensity(self) -> complex:
        return self.alpha * self.alpha_plus


@dataclass(frozen=True)
class SystemState:
    modes: tuple[ModeAmplitude, ...]
    time: float = 0.0

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("time must be >= 0")
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def to_vector(self) -> np.ndarray:
        out = np.empty(2 * self.n_modes, dtype=complex)
        for i, m in enumerate(self.modes):
            out[2 * i] = m.alpha
            out[2 * i + 1] = m.alpha_plus
        return out

    @classmethod
    def from_vector(cls, y: Sequence[complex], time: float = 0.0) -> "SystemState":
        y = np.asarray(y, dtype=complex)
        if y.ndim != 1 or y.size % 2:
            raise ValueError("state vector must have even length")
        modes = tuple(ModeAmplitude(complex(y[2 * i]), complex(y[2 * i + 1])) for i in range(y.size // 2))
        return cls(modes, float(time))

    @classmethod
    def coherent(cls, amplitudes: Sequence[complex], time: float = 0.0) -> "SystemState":
        return cls(tuple(ModeAmplitude.coherent(a) for a in amplitudes), time)


def quadrature(mode: ModeAmplitude, theta: float) -> complex:
    """c-number quadrature ``alpha e^{-i theta} + alpha_plus e^{i theta}``."""
    return mode.alpha * cmath.exp(-1j * theta) + mode.alpha_plus * cmath.exp(1j * theta)


def quadrature_vector(y: np.ndarray) -> np.ndarray:
    """Map state vector(s) ``(..., 2n)`` onto ``(..., 2n)`` X/Y quadratures."""
    a = y[..., 0::2]
    ap = y[..., 1::2]
    q = np.empty(y.shape, dtype=complex)
    q[..., 0::2] = a + ap
    q[..., 1::2] = -1j * (a - ap)
    return q


def quadrature_transform(n_modes: int) -> np.ndarray:
    """Matrix T with ``q = T @ y`` for a single state vector."""
    t = np.zeros((2 * n_modes, 2 * n_modes), dtype=complex)
    for i in range(n_modes):
        t[2 * i, 2 * i] = 1
        t[2 * i, 2 * i + 1] = 1
        t[2 * i + 1, 2 * i] = -1j
        t[2 * i + 1, 2 * i + 1] = 1j
    return t


def quad_index(q: str, i: int) -> int:
    if q not in ("X", "Y"):
        raise ValueError(f"quadrature must be 'X' or 'Y', got {q!r}")
    return 2 * i + (q == "Y")


@dataclass
class QuadratureMoments:
    """Running moments of the quadratures and intensities on a time grid.

    ``mean[g, k]`` and ``comoment[g, k, l] = sum (q_k - m_k)(q_l - m_l)`` are
    complex: positive-P samples are not real, only their averages are.
    """

    n_modes: int
    n_grid: int
    count: int = 0
    mean: np.ndarray = field(default=None, repr=False)
    comoment: np.ndarray = field(default=None, repr=False)
    intensity: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        nq = 2 * self.n_modes
        if self.mean is None:
            self.mean = np.zeros((self.n_grid, nq), dtype=complex)
        if self.comoment is None:
            self.comoment = np.zeros((self.n_grid, nq, nq), dtype=complex)
        if self.intensity is None:
            self.intensity = np.zeros((self.n_grid, self.n_modes), dtype=complex)

    @classmethod
    def empty(cls, n_modes: int, n_grid: int) -> "QuadratureMoments":
        return cls(n_modes, n_grid)

    @classmethod
    def from_samples(cls, states: np.ndarray) -> "QuadratureMoments":
        """Build from state samples shaped ``(n_samples, n_grid, 2n)`` sequentially."""
        states = np.asarray(states, dtype=complex)
        if states.ndim == 2:
            states = states[:, None, :]
        acc = cls.empty(states.shape[2] // 2, states.shape[1])
        for s in states:
            acc.add(s)
        return acc

    def add(self, y: np.ndarray) -> None:
        """Add one trajectory, ``y`` shaped ``(n_grid, 2n)``."""
        y = np.asarray(y, dtype=complex).reshape(self.n_grid, 2 * self.n_modes)
        q = quadrature_vector(y)
        self.count += 1
        d = q - self.mean
        self.mean += d / self.count
        self.comoment += d[:, :, None] * (q - self.mean)[:, None, :]
        self.intensity += (y[:, 0::2] * y[:, 1::2] - self.intensity) / self.count

    def copy(self) -> "QuadratureMoments":
        return QuadratureMoments(self.n_modes, self.n_grid, self.count,
                                 self.mean.copy(), self.comoment.copy(), self.intensity.copy())

    # -- readouts ---------------------------------------------------------
    def _need(self, k: int = 2) -> None:
        if self.count < k:
            raise InsufficientSamplesError(f"need at least {k} samples, have {self.count}")

    def means(self) -> np.ndarray:
        """Real parts of the quadrature means, ``(n_grid, 2n)``."""
        self._need(1)
        return self.mean.real.copy()

    def mean_intensity(self) -> np.ndarray:
        """Normally ordered photon numbers ``<alpha alpha+>``, ``(n_grid, n)``."""
        self._need(1)
        return self.intensity.real.copy()

    def cnumber_covariance(self) -> np.ndarray:
        """Real part of the c-number quadrature covariance, ``(n_grid, 2n, 2n)``."""
        self._need(2)
        c = self.comoment.real / (self.count - 1)
        return 0.5 * (c + np.swapaxes(c, -1, -2))

    def covariance(self) -> np.ndarray:
        """Operator (symmetrised) quadrature covariance matrix per grid point.

        Same-mode variances get the vacuum +1; everything else is the c-number
        value (distinct modes commute; the symmetrised X-Y term of one mode is
        normally ordered already).
        """
        c = self.cnumber_covariance()
        idx = np.arange(2 * self.n_modes)
        c[:, idx, idx] += 1.0
        return c

    def to_arrays(self) -> dict:
        return {"count": np.array(self.count), "mean": self.mean,
                "comoment": self.comoment, "intensity": self.intensity}


def merge(a: QuadratureMoments, b: QuadratureMoments) -> QuadratureMoments:
    """Chan et al. pairwise combination of two accumulators."""
    if (a.n_modes, a.n_grid) != (b.n_modes, b.n_grid):
        raise GridMismatchError(
            f"cannot merge moments on ({a.n_modes} modes, {a.n_grid} points) "
            f"with ({b.n_modes} modes, {b.n_grid} points)")
    if b.count == 0:
        return a.copy()
    if a.count == 0:
        return b.copy()
    n = a.count + b.count
    wb = b.count / n
    d = b.mean - a.mean
    mean = a.mean + d * wb
    com = a.comoment + b.comoment + d[:, :, None] * d[:, None, :] * (a.count * wb)
    inten = a.intensity + (b.intensity - a.intensity) * wb
    return QuadratureMoments(a.n_modes, a.n_grid, n, mean, com, inten)


def tree_merge(parts: Sequence[QuadratureMoments]) -> QuadratureMoments:
    """Reduce chunk accumulators in a fixed, index-determined binary tree."""
    if not parts:
        raise ValueError("nothing to merge")
    level = list(parts)
    while len(level) > 1:
        nxt = [merge(level[k], level[k + 1]) for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def operator_variance_X(moments: QuadratureMoments, i: int, theta: float = 0.0) -> np.ndarray:
    """Operator variance of ``X_i(theta)`` on every grid point."""
    v = moments.covariance()
    c, s = np.cos(theta), np.sin(theta)
    x, y = 2 * i, 2 * i + 1
    return c * c * v[:, x, x] + 2 * c * s * v[:, x, y] + s * s * v[:, y, y]


def operator_covariance(moments: QuadratureMoments, a: tuple[str, int], b: tuple[str, int]) -> np.ndarray:
    """``V(q_i, q'_j)`` between two distinct quadrature/mode labels, e.g. ``("X", 0)``."""
    ka, kb = quad_index(*a), quad_index(*b)
    if ka == kb:
        raise ValueError("same quadrature requested twice; use operator_variance_X")
    return moments.cnumber_covariance()[:, ka, kb]


def binned_estimate(total, bins: Sequence, fn: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Value of ``fn`` on the full ensemble and its standard error from bins.

    Standard error is the spread of ``fn`` over equal sub-ensembles divided
    by sqrt(n_bins) (batch means).
    """
    value = np.asarray(fn(total), dtype=float)
    if len(bins) < 2:
        return value, np.full_like(value, np.nan)
    vals = []
    for b in bins:
        try:
            vals.append(np.asarray(fn(b), dtype=float))
        except ValueError:
            # a small bin can be degenerate where the full ensemble is not
            vals.append(np.full_like(value, np.nan))
    vals = np.stack(vals)
    n_ok = np.count_nonzero(np.isfinite(vals), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        se = np.nanstd(vals, axis=0, ddof=1) / np.sqrt(n_ok)
    return value, np.where(n_ok >= 2, se, np.nan)
