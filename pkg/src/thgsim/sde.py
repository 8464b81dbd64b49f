"""Ensemble integration of complex Ito SDEs driven by real Wiener noises.

Trajectories are split into a fixed number of contiguous chunks (one per
statistics bin).  Each chunk is integrated by a compiled kernel that draws
its noise from the counter-based stream of every trajectory, so the chunk
results, and the fixed-tree merge of them, do not depend on the number of
worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numba as nb
import numpy as np

from .models import SDEModel
from .phase_space import QuadratureMoments, SystemState, binned_estimate, tree_merge
from .rng import fill_normals

log = logging.getLogger(__name__)

SCHEMES = ("euler", "midpoint")
UNRELIABLE_FRACTION = 0.01


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class IntegrationConfig:
    dt: float = 1e-3
    t_max: float = 1.0
    sample_stride: int = 0  # 0: pick for ~200 output points
    n_traj: int = 1000
    seed: int = 0
    divergence_radius: float = math.inf
    scheme: str = "euler"
    midpoint_iterations: int = 5
    n_bins: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if self.t_max / self.dt < 1 - 1e-9:
            raise ValueError("t_max must cover at least one step")
        if self.sample_stride < 0:
            raise ValueError("sample_stride must be >= 1 (or 0 for automatic)")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.divergence_radius > 0:
            raise ValueError("divergence_radius must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.midpoint_iterations < 1:
            raise ValueError("midpoint_iterations must be >= 1")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def stride(self) -> int:
        if self.sample_stride:
            return self.sample_stride
        return max(1, int(round(self.n_steps / 200)))

    @property
    def n_grid(self) -> int:
        return self.n_steps // self.stride + 1

    def times(self) -> np.ndarray:
        return np.arange(self.n_grid) * (self.stride * self.dt)

    def chunks(self) -> list[tuple[int, int]]:
        nb_ = min(self.n_bins, self.n_traj)
        edges = [(c * self.n_traj) // nb_ for c in range(nb_ + 1)]
        return list(zip(edges[:-1], edges[1:]))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleResult:
    times: np.ndarray
    moments: QuadratureMoments
    bins: list[QuadratureMoments]
    n_traj: int
    n_diverged: int
    first_divergence_time: float
    config: IntegrationConfig

    @property
    def unreliable(self) -> bool:
        return self.n_diverged > UNRELIABLE_FRACTION * self.n_traj

    def estimate(self, fn):
        """``fn(moments) -> array`` on the full ensemble, with binned standard error."""
        return binned_estimate(self.moments, self.bins, fn)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@nb.njit(nogil=True, cache=True)
def _advance(inc, p, y, dt, dW, scheme, n_iter, dy, ym, zero, nz):
    n = y.shape[0]
    if scheme == 0:
        inc(y, p, dt, dW, dy)
        for k in range(n):
            y[k] += dy[k]
    else:
        # Drift: implicit midpoint (fixed-point iterated), which keeps quadratic
        # invariants of the noise-free flow.  Noise: evaluated at the start of
        # the step, so the scheme stays Ito and never samples a square-root
        # branch cut at a noise-dependent point.
        inc(y, p, 0.0, dW, nz)
        for k in range(n):
            ym[k] = y[k] + 0.5 * nz[k]
        for _ in range(n_iter):
            inc(ym, p, dt, zero, dy)
            for k in range(n):
                ym[k] = y[k] + 0.5 * (dy[k] + nz[k])
        for k in range(n):
            y[k] = 2.0 * ym[k] - y[k]


@nb.njit(nogil=True, cache=True)
def _escaped(y, radius):
    for k in range(y.shape[0]):
        v = y[k]
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            return True
        if abs(v) > radius:
            return True
    return False


@nb.njit(nogil=True, cache=True)
def _run_chunk(inc, p, y0, n_ch, seed, start, stop, dt, n_steps, stride, radius,
               scheme, n_iter, mean, com, inten):
    n = y0.shape[0]
    nm = n // 2
    G = mean.shape[0]
    y = np.empty(n, dtype=np.complex128)
    ym = np.empty(n, dtype=np.complex128)
    dy = np.empty(n, dtype=np.complex128)
    nz = np.empty(n, dtype=np.complex128)
    zero = np.zeros(n_ch, dtype=np.float64)
    z = np.empty(n_ch, dtype=np.float64)
    dW = np.empty(n_ch, dtype=np.float64)
    buf = np.empty((G, n), dtype=np.complex128)
    q = np.empty(n, dtype=np.complex128)
    d = np.empty(n, dtype=np.complex128)
    sdt = math.sqrt(dt)
    count = 0
    n_div = 0
    first_div = math.inf
    for traj in range(start, stop):
        for k in range(n):
            y[k] = y0[k]
        for k in range(n):
            buf[0, k] = y[k]
        dead = False
        for s in range(n_steps):
            if n_ch > 0:
                fill_normals(seed, np.uint64(traj), np.uint64(s), z)
                for j in range(n_ch):
                    dW[j] = z[j] * sdt
            _advance(inc, p, y, dt, dW, scheme, n_iter, dy, ym, zero, nz)
            if _escaped(y, radius):
                dead = True
                t_div = (s + 1) * dt
                if t_div < first_div:
                    first_div = t_div
                break
            if (s + 1) % stride == 0:
                g = (s + 1) // stride
                if g < G:
                    for k in range(n):
                        buf[g, k] = y[k]
        if dead:
            n_div += 1
            continue
        count += 1
        inv = 1.0 / count
        for g in range(G):
            for i in range(nm):
                a = buf[g, 2 * i]
                ap = buf[g, 2 * i + 1]
                q[2 * i] = a + ap
                q[2 * i + 1] = -1j * (a - ap)
                inten[g, i] += (a * ap - inten[g, i]) * inv
            for k in range(n):
                d[k] = q[k] - mean[g, k]
                mean[g, k] += d[k] * inv
            for k in range(n):
                for l in range(n):
                    com[g, k, l] += d[k] * (q[l] - mean[g, l])
    return count, n_div, first_div


_SCHEME_CODE = {"euler": 0, "midpoint": 1}


def step(model: SDEModel, state: SystemState, dt: float, increments, scheme: str = "euler",
         midpoint_iterations: int = 5) -> SystemState:
    """Advance one state by one step given the Wiener increments of each channel."""
    dW = np.ascontiguousarray(increments, dtype=float).reshape(-1)
    if dW.size != model.n_channels:
        raise ValueError(f"expected {model.n_channels} increments, got {dW.size}")
    y = state.to_vector()
    if y.size != model.n_vars:
        raise ValueError(f"model {model.name} needs {model.n_modes} modes, state has {state.n_modes}")
    if not np.all(np.isfinite(y)):
        raise DivergenceError("state is not finite")
    f, B = model.drift_and_noise(y)
    dy, ym, nz = (np.empty(model.n_vars, dtype=complex) for _ in range(3))
    _advance(model.increment, model.params, y, float(dt), dW, _SCHEME_CODE[scheme],
             midpoint_iterations, dy, ym, np.zeros(model.n_channels), nz)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(B)) and np.all(np.isfinite(y))):
        raise DivergenceError(f"non-finite drift or noise at t={state.time}")
    return SystemState.from_vector(y, state.time + dt)


def run_trajectory(model: SDEModel, y0, config: IntegrationConfig, index: int) -> np.ndarray:
    """Re-run a single trajectory; returns its states on the output grid ``(n_grid, 2n)``.

    Uses the same stream as ``run_ensemble`` so any ensemble member can be
    reproduced in isolation.  Divergent trajectories come back as NaN after
    the escape.
    """
    y = np.array(y0, dtype=complex)
    out = np.full((config.n_grid, model.n_vars), np.nan + 0j)
    out[0] = y
    dy, ym, nz = (np.empty(model.n_vars, dtype=complex) for _ in range(3))
    zero = np.zeros(model.n_channels)
    z = np.empty(model.n_channels)
    stride = config.stride
    sdt = math.sqrt(config.dt)
    for s in range(config.n_steps):
        if model.n_channels:
            fill_normals(np.uint64(config.seed), np.uint64(index), np.uint64(s), z)
        _advance(model.increment, model.params, y, config.dt, z * sdt, _SCHEME_CODE[config.scheme],
                 config.midpoint_iterations, dy, ym, zero, nz)
        if _escaped(y, config.divergence_radius):
            break
        if (s + 1) % stride == 0 and (s + 1) // stride < config.n_grid:
            out[(s + 1) // stride] = y
    return out


def _chunk_job(model, y0, config, start, stop, n_grid):
    nq = model.n_vars
    mean = np.zeros((n_grid, nq), dtype=complex)
    com = np.zeros((n_grid, nq, nq), dtype=complex)
    inten = np.zeros((n_grid, model.n_modes), dtype=complex)
    count, n_div, first = _run_chunk(
        model.increment, model.params, y0, model.n_channels, np.uint64(config.seed),
        start, stop, config.dt, config.n_steps, config.stride, config.divergence_radius,
        _SCHEME_CODE[config.scheme], config.midpoint_iterations, mean, com, inten)
    acc = QuadratureMoments(model.n_modes, n_grid, int(count), mean, com, inten)
    return acc, int(n_div), float(first)


def run_ensemble(model: SDEModel, y0, config: IntegrationConfig, workers: int = 1) -> EnsembleResult:
    """Integrate ``config.n_traj`` trajectories from the deterministic start ``y0``.

    Divergent trajectories (any |amplitude| beyond the radius, or non-finite)
    are dropped whole and counted; more than 1% dropped marks the result
    unreliable.
    """
    if isinstance(y0, SystemState):
        y0 = y0.to_vector()
    y0 = np.ascontiguousarray(y0, dtype=complex)
    if y0.shape != (model.n_vars,):
        raise ValueError(f"initial state must have {model.n_vars} entries")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    chunks = config.chunks()
    n_grid = config.n_grid
    jobs = [(model, y0, config, a, b, n_grid) for a, b in chunks]
    if workers == 1:
        results = [_chunk_job(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda j: _chunk_job(*j), jobs))
    bins = [r[0] for r in results]
    n_div = sum(r[1] for r in results)
    first = min(r[2] for r in results)
    total = tree_merge(bins)
    res = EnsembleResult(config.times(), total, bins, config.n_traj, n_div, first, config)
    if res.unreliable:
        log.warning("%d of %d trajectories diverged (first at t=%g); result unreliable",
                    n_div, config.n_traj, first)
    return res
