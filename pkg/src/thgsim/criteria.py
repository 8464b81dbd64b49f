"""Bipartite and tripartite continuous-variable correlation criteria.

All functions take an operator quadrature covariance matrix ``V`` shaped
``(..., 2n, 2n)`` (ordering ``X0, Y0, X1, Y1, ...``, coherent-state variance
1), or anything with a ``covariance()`` method returning one.  Leading axes
(time grid, frequency grid) broadcast through.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

NONE = "none"
SYMMETRIC = "symmetric"
I_STEERS_J = "asymmetric_i_steers_j"
J_STEERS_I = "asymmetric_j_steers_i"

DEGENERATE_VARIANCE = 1e-12
VIOLATION_SIGMAS = 2.0


class DegenerateSteererError(ValueError):
    pass


def _cov(obj) -> np.ndarray:
    if hasattr(obj, "covariance"):
        return obj.covariance()
    return np.asarray(obj, dtype=float)


def _combo_variance(V: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("...k,...kl,...l->...", w, V, w)


def _weights(n: int, terms: dict[int, float]) -> np.ndarray:
    w = np.zeros(n)
    for k, c in terms.items():
        w[k] += c
    return w


def duan_simon(cov, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """``DS+ = V(Xi+Xj) + V(Yi-Yj)`` and ``DS- = V(Xi-Xj) + V(Yi+Yj)``.

    Either value below 4 signals entanglement.
    """
    if i == j:
        raise ValueError("Duan-Simon needs two distinct modes")
    V = _cov(cov)
    n = V.shape[-1]
    xi, yi, xj, yj = 2 * i, 2 * i + 1, 2 * j, 2 * j + 1
    plus = (_combo_variance(V, _weights(n, {xi: 1, xj: 1}))
            + _combo_variance(V, _weights(n, {yi: 1, yj: -1})))
    minus = (_combo_variance(V, _weights(n, {xi: 1, xj: -1}))
             + _combo_variance(V, _weights(n, {yi: 1, yj: 1})))
    return plus, minus


def inferred_variances(cov, steered: int, steerer: int) -> tuple[np.ndarray, np.ndarray]:
    """Inferred X and Y variances of ``steered`` from measurements on ``steerer``."""
    if steered == steerer:
        raise ValueError("inference needs two distinct modes")
    V = _cov(cov)
    out = []
    for off in (0, 1):
        a, b = 2 * steered + off, 2 * steerer + off
        vb = V[..., b, b]
        if np.any(vb <= DEGENERATE_VARIANCE):
            raise DegenerateSteererError(
                f"steerer mode {steerer} has variance {np.min(vb):.3g} in quadrature {'XY'[off]}")
        out.append(V[..., a, a] - V[..., a, b] ** 2 / vb)
    return out[0], out[1]


def reid_epr(cov, steered: int, steerer: int) -> np.ndarray:
    """``EPR_ij`` product of inferred variances; below 1, ``steerer`` steers ``steered``."""
    vx, vy = inferred_variances(cov, steered, steerer)
    return vx * vy


def _classify_one(eij, eji, se_ij, se_ji):
    a = eij < 1 - VIOLATION_SIGMAS * se_ij
    b = eji < 1 - VIOLATION_SIGMAS * se_ji
    if a and b:
        return SYMMETRIC
    if a:
        return J_STEERS_I
    if b:
        return I_STEERS_J
    return NONE


def classify_steering(epr_ij, epr_ji, stderr=0.0):
    """Steering label; a direction counts only if its product clears 1 by 2 s.e.

    ``epr_ij < 1`` means measurements on j steer mode i.  ``stderr`` is a
    scalar or a pair ``(se_ij, se_ji)``; array inputs give an array of labels.
    """
    if isinstance(stderr, tuple):
        se_ij, se_ji = stderr
    else:
        se_ij = se_ji = stderr
    eij, eji = np.asarray(epr_ij, float), np.asarray(epr_ji, float)
    se_ij, se_ji = np.nan_to_num(np.asarray(se_ij, float)), np.nan_to_num(np.asarray(se_ji, float))
    if eij.ndim == 0 and eji.ndim == 0:
        return _classify_one(float(eij), float(eji), float(se_ij), float(se_ji))
    shape = np.broadcast(eij, eji, se_ij, se_ji).shape
    args = [np.broadcast_to(x, shape).ravel() for x in (eij, eji, se_ij, se_ji)]
    return np.array([_classify_one(*v) for v in zip(*args)], dtype=object).reshape(shape)


@dataclass
class BipartiteReport:
    pair: tuple[int, int]
    ds_plus: np.ndarray
    ds_minus: np.ndarray
    epr_ij: np.ndarray
    epr_ji: np.ndarray
    stderr: dict
    steering: np.ndarray

    @property
    def ds_min(self) -> np.ndarray:
        return np.minimum(self.ds_plus, self.ds_minus)

    def columns(self) -> dict[str, np.ndarray]:
        i, j = self.pair
        tag = f"{i}{j}"
        return {
            f"DSp_{tag}": self.ds_plus, f"DSp_{tag}_se": self.stderr["ds_plus"],
            f"DSm_{tag}": self.ds_minus, f"DSm_{tag}_se": self.stderr["ds_minus"],
            f"EPR_{i}{j}": self.epr_ij, f"EPR_{i}{j}_se": self.stderr["epr_ij"],
            f"EPR_{j}{i}": self.epr_ji, f"EPR_{j}{i}_se": self.stderr["epr_ji"],
            f"steering_{tag}": self.steering,
        }


def _check_gaussian_consistency(rep: BipartiteReport) -> None:
    se = np.nan_to_num(rep.stderr["epr_ij"])
    steer = np.minimum(rep.epr_ij, rep.epr_ji) < 1 - VIOLATION_SIGMAS * se
    ds_ok = rep.ds_min < 4 + VIOLATION_SIGMAS * np.nan_to_num(rep.stderr["ds_minus"])
    bad = np.count_nonzero(steer & ~ds_ok)
    if bad:
        log.info("pair %s: %d points steer without Duan-Simon violation (non-Gaussian statistics)",
                 rep.pair, bad)


def bipartite_report(source, i: int, j: int) -> BipartiteReport:
    """Duan-Simon and Reid values for modes ``(i, j)``.

    ``source`` is either an ensemble result (anything with ``estimate``;
    errors come from sub-ensemble bins) or a covariance matrix (no errors).
    """
    fns = {
        "ds_plus": lambda m: duan_simon(m, i, j)[0],
        "ds_minus": lambda m: duan_simon(m, i, j)[1],
        "epr_ij": lambda m: reid_epr(m, i, j),
        "epr_ji": lambda m: reid_epr(m, j, i),
    }
    vals, errs = {}, {}
    for key, fn in fns.items():
        if hasattr(source, "estimate"):
            vals[key], errs[key] = source.estimate(fn)
        else:
            vals[key] = np.asarray(fn(source), dtype=float)
            errs[key] = np.zeros_like(vals[key])
    steering = classify_steering(vals["epr_ij"], vals["epr_ji"], (errs["epr_ij"], errs["epr_ji"]))
    rep = BipartiteReport((i, j), vals["ds_plus"], vals["ds_minus"], vals["epr_ij"],
                          vals["epr_ji"], errs, steering)
    _check_gaussian_consistency(rep)
    return rep


VLF_COMBINATIONS = ((0, 1, 2), (1, 2, 0), (0, 2, 1))


@dataclass
class TripartiteReport:
    values: np.ndarray  # (..., 3)
    gains: np.ndarray  # (..., 3)
    combinations: tuple = VLF_COMBINATIONS
    stderr: np.ndarray | None = None

    def violated(self) -> np.ndarray:
        """True where at least two of the three inequalities fall below 4 (by 2 s.e.)."""
        se = 0.0 if self.stderr is None else np.nan_to_num(self.stderr)
        below = self.values < 4 - VIOLATION_SIGMAS * se
        return np.count_nonzero(below, axis=-1) >= 2


def vlf_optimal_gain(cov, i: int, j: int, k: int, x_sign: int = -1) -> np.ndarray:
    """Gain on ``Y_k`` minimising ``V(Y_i - x_sign*Y_j + g Y_k)``."""
    V = _cov(cov)
    yi, yj, yk = 2 * i + 1, 2 * j + 1, 2 * k + 1
    cov_k = V[..., yi, yk] - x_sign * V[..., yj, yk]
    return -cov_k / V[..., yk, yk]


def vlf_value(cov, i: int, j: int, k: int, g, x_sign: int = -1) -> np.ndarray:
    """``V(X_i + x_sign X_j) + V(Y_i - x_sign Y_j + g Y_k)``; the default is the
    ``X_i - X_j``, ``Y_i + Y_j + g Y_k`` form."""
    V = _cov(cov)
    n = V.shape[-1]
    xpart = _combo_variance(V, _weights(n, {2 * i: 1, 2 * j: x_sign}))
    g = np.asarray(g, dtype=float)
    w = np.zeros(g.shape + (n,))
    w[..., 2 * i + 1] = 1
    w[..., 2 * j + 1] = -x_sign
    w[..., 2 * k + 1] = g
    return xpart + np.einsum("...k,...kl,...l->...", w, V, w)


def vlf_tripartite(cov, gains: Sequence[float] | None = None, x_sign: int = -1) -> TripartiteReport:
    """Three van Loock-Furusawa combinations, gains optimised unless given.

    Two values below 4 certify genuine tripartite entanglement.
    """
    V = _cov(cov)
    if V.shape[-1] != 6:
        raise ValueError("tripartite criteria need three modes")
    values, used = [], []
    for c, (i, j, k) in enumerate(VLF_COMBINATIONS):
        g = vlf_optimal_gain(V, i, j, k, x_sign) if gains is None else np.full(V.shape[:-2], gains[c], float)
        values.append(vlf_value(V, i, j, k, g, x_sign))
        used.append(g)
    return TripartiteReport(np.stack(values, axis=-1), np.stack(used, axis=-1))


def vlf_from_ensemble(result, x_sign: int = -1) -> TripartiteReport:
    """Tripartite report with binned errors (gains re-optimised per bin)."""
    vals, se = result.estimate(lambda m: vlf_tripartite(m, x_sign=x_sign).values)
    gains = vlf_tripartite(result.moments, x_sign=x_sign).gains
    return TripartiteReport(vals, gains, stderr=se)
