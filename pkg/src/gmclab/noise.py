"""Discrete space-time white noise on an unbounded spatial lattice.

The value of cell (i, j) is ``Z(seed, i, j) / sqrt(dt * dx^d)`` with Z a
standard normal obtained by hashing the cell address, so the lattice
never has to be materialized and has no boundary. Cell j is centred at
``j * dx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from gmclab import rng
from gmclab._backend import kernels
from gmclab.kernel import SUPPORT, Kernel


@dataclass(frozen=True)
class NoiseGrid:
    """Noise lattice parameters. ``amplitude = 0`` gives the zero field."""

    d: int
    dt: float
    dx: float
    seed: int
    horizon: float
    stream: int = rng.NOISE
    amplitude: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (self.dt > 0 and self.dx > 0 and self.horizon > 0):
            raise ValueError("dt, dx and horizon must be positive")
        if self.dx > SUPPORT / 4 + 1e-15:
            raise ValueError(f"dx={self.dx} must be <= 1/8 to resolve the mollifier")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def key(self) -> int:
        return rng.stream_key(self.seed, self.stream)

    @property
    def cell_scale(self) -> float:
        """Standard deviation of one cell value, (dt dx^d)^(-1/2)."""
        return 1.0 / math.sqrt(self.dt * self.dx ** self.d)

    def with_seed(self, seed: int) -> "NoiseGrid":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class FlowParams:
    """Ornstein-Uhlenbeck flow time ``r`` and the seed of the independent copy."""

    r: float
    eta_seed: int

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("flow time must be non-negative")


def eta_grid(g: NoiseGrid, eta_seed: int) -> NoiseGrid:
    """The independent copy eta on the same lattice (disjoint stream)."""
    return replace(g, seed=eta_seed, stream=rng.ETA)


@lru_cache(maxsize=64)
def stencil(d: int, dx: float, support: float = SUPPORT) -> np.ndarray:
    """Integer offsets o such that cell ``floor(x/dx) + o`` can meet B_support(x)."""
    m = int(math.ceil(support / dx)) + 1
    axes = [np.arange(-m, m + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    # distance from o*dx to the unit cell [0, dx)^d
    gap = np.maximum(np.maximum(-grid * dx - 0.0, grid * dx - dx), 0.0)
    keep = np.sum(gap * gap, axis=1) < support ** 2
    out = np.ascontiguousarray(grid[keep].astype(np.int64))
    out.setflags(write=False)
    return out


def _check_time(g: NoiseGrid, i: int) -> None:
    if not 0 <= i < g.n_steps:
        raise IndexError(f"time index {i} outside horizon [0, {g.n_steps})")


def cell_gaussian(g: NoiseGrid, i: int, j) -> float:
    """Value of the noise in cell (i, j); deterministic in (seed, i, j)."""
    _check_time(g, i)
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    if j.shape[-1] != g.d:
        raise ValueError(f"spatial index must have {g.d} components")
    z = kernels().normals(np.uint64(g.key), int(i), j.reshape(1, -1))[0]
    return float(g.amplitude * g.cell_scale * z)


def cell_gaussians(g: NoiseGrid, i: int, j: np.ndarray) -> np.ndarray:
    """Vectorized :func:`cell_gaussian` over rows of ``j`` (shape (M, d))."""
    _check_time(g, i)
    j = np.ascontiguousarray(np.asarray(j, dtype=np.int64).reshape(-1, g.d))
    return g.amplitude * g.cell_scale * kernels().normals(np.uint64(g.key), int(i), j)


def smoothed_noise(g: NoiseGrid, k: Kernel, i: int, x) -> float:
    """sum_j kappa(x - y_j) * cell(i, j) * dx^d."""
    _check_time(g, i)
    x = np.asarray(x, dtype=np.float64).reshape(1, g.d)
    val = _step_values(g, k, i, x)[0]
    return float(val)


def _step_values(g: NoiseGrid, k: Kernel, i: int, x: np.ndarray) -> np.ndarray:
    scale = g.amplitude * g.cell_scale * g.dx ** g.d
    if scale == 0.0:
        return np.zeros(x.shape[0])
    return kernels().step_increments(np.ascontiguousarray(x), np.uint64(g.key), int(i), g.dx,
                                     stencil(g.d, g.dx, k.support), k.kappa, k.h, scale)


def smoothed_noise_many(g: NoiseGrid, k: Kernel, i: int, x: np.ndarray) -> np.ndarray:
    """:func:`smoothed_noise` at every row of ``x`` (shape (N, d))."""
    _check_time(g, i)
    return _step_values(g, k, i, np.asarray(x, dtype=np.float64).reshape(-1, g.d))


def flowed_noise(g: NoiseGrid, f: FlowParams, k: Kernel, i: int, x) -> float:
    """OU-flowed smoothed field ``e^-r B + sqrt(1 - e^-2r) eta`` at (i, x)."""
    if f.r < 0:
        raise ValueError("flow time must be non-negative")
    base = smoothed_noise(g, k, i, x)
    if f.r == 0:
        return base
    a, b = flow_coefficients(f.r)
    return a * base + b * smoothed_noise(eta_grid(g, f.eta_seed), k, i, x)


def flow_coefficients(r: float) -> tuple[float, float]:
    """(e^-r, sqrt(1 - e^-2r))."""
    return math.exp(-r), math.sqrt(-math.expm1(-2.0 * r))


def path_increments(g: NoiseGrid, k: Kernel, positions: np.ndarray,
                    n_steps: int | None = None, reverse: bool = False) -> np.ndarray:
    """Per-step Hamiltonian increments ``dt * smoothed_noise(i, x_i)``.

    ``positions`` has shape (N, n + 1, d) and is read at left endpoints
    (Ito convention). With ``reverse=True`` step i reads noise time index
    ``n - 1 - i`` of an ``n``-step window ending at the horizon's start,
    i.e. the noise is run backwards in time.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[2] != g.d:
        raise ValueError("positions must have shape (N, n + 1, d)")
    n = positions.shape[1] - 1 if n_steps is None else int(n_steps)
    if n > positions.shape[1] - 1:
        raise ValueError("path horizon shorter than requested number of steps")
    if n > g.n_steps:
        raise ValueError(f"{n} steps exceed the noise horizon of {g.n_steps} steps")
    t_index = np.arange(n, dtype=np.int64)
    if reverse:
        t_index = t_index[::-1].copy()
    scale = g.amplitude * g.dt * g.cell_scale * g.dx ** g.d
    if scale == 0.0 or n == 0:
        return np.zeros((positions.shape[0], n))
    return kernels().increments(np.ascontiguousarray(positions), np.uint64(g.key), t_index,
                                g.dx, stencil(g.d, g.dx, k.support), k.kappa, k.h, scale)
