"""Counter-based Gaussian streams (Philox4x32-10) keyed by seed and trajectory.

Every normal deviate is a pure function of ``(seed, trajectory, step, slot)``,
so a trajectory can be regenerated in isolation and the ensemble result does
not depend on how trajectories are scheduled across workers.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_PI = 2.0 * math.pi
_INV_2_32 = 1.0 / 4294967296.0


@nb.njit(nogil=True, cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all arguments are uint64 holding 32-bit words."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(nogil=True, cache=True)
def _uniform(x):
    # open interval (0, 1): log() below never sees zero
    return (np.float64(x) + 0.5) * _INV_2_32


@nb.njit(nogil=True, cache=True)
def fill_normals(seed, traj, step, out):
    """Write ``len(out)`` standard normals for one (trajectory, step) into ``out``.

    Counter words: (block, step, traj_lo, traj_hi); key: (seed_lo, seed_hi).
    Each Philox block yields four uniforms, turned into four normals by
    Box-Muller.
    """
    seed = np.uint64(seed)
    traj = np.uint64(traj)
    k0 = seed & _MASK
    k1 = seed >> _S32
    t0 = traj & _MASK
    t1 = traj >> _S32
    s = np.uint64(step) & _MASK
    n = out.shape[0]
    nblocks = (n + 3) // 4
    for b in range(nblocks):
        x0, x1, x2, x3 = philox4x32(np.uint64(b), s, t0, t1, k0, k1)
        base = 4 * b
        r = math.sqrt(-2.0 * math.log(_uniform(x0)))
        th = _TWO_PI * _uniform(x1)
        out[base] = r * math.cos(th)
        if base + 1 < n:
            out[base + 1] = r * math.sin(th)
        if base + 2 < n:
            r = math.sqrt(-2.0 * math.log(_uniform(x2)))
            th = _TWO_PI * _uniform(x3)
            out[base + 2] = r * math.cos(th)
            if base + 3 < n:
                out[base + 3] = r * math.sin(th)


class TrajectoryStream:
    """Gaussian increments for one trajectory. Stateless: indexed by step."""

    def __init__(self, seed: int, index: int):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        if index < 0:
            raise ValueError(f"trajectory index must be >= 0, got {index}")
        self.seed = int(seed)
        self.index = int(index)

    def normals(self, step: int, n: int) -> np.ndarray:
        out = np.empty(n)
        fill_normals(np.uint64(self.seed), np.uint64(self.index), np.uint64(step), out)
        return out

    def increments(self, step: int, n: int, dt: float) -> np.ndarray:
        """Wiener increments over one step: N(0, dt) per channel."""
        return self.normals(step, n) * math.sqrt(dt)

    def sequence(self, n_steps: int, n: int, start: int = 0) -> np.ndarray:
        return np.stack([self.normals(start + k, n) for k in range(n_steps)])

    def __repr__(self) -> str:
        return f"TrajectoryStream(seed={self.seed}, index={self.index})"


def derive_stream(seed: int, trajectory_index: int) -> TrajectoryStream:
    return TrajectoryStream(seed, trajectory_index)
