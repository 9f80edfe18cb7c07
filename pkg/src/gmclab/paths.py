"""Brownian paths on a fixed time grid, uniform-norm tubes and tube energies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gmclab import rng
from gmclab._backend import kernels


def n_steps_for(T: float, dt: float) -> int:
    """T / dt as an integer; raises when the ratio is not integral."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    n = T / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return int(round(n))


@dataclass(frozen=True, eq=False)
class Path:
    """A discretized trajectory; ``positions[k]`` is the point at time ``k * dt``."""

    positions: np.ndarray = field(repr=False)
    dt: float

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def shifted(self, v) -> "Path":
        return Path(self.positions + np.asarray(v, dtype=np.float64), self.dt)


def _x0(x0, d):
    if x0 is None:
        return np.zeros(d)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (d,):
        raise ValueError(f"starting point must have {d} coordinates")
    return x0


def sample_paths(n_paths: int, d: int, T: float, dt: float, x0=None, key: int = 0) -> np.ndarray:
    """Positions of ``n_paths`` Brownian paths, shape (n_paths, T/dt + 1, d).

    Path ``p`` depends only on (key, p), so subsets and reorderings of a
    batch reproduce the same trajectories.
    """
    n = n_steps_for(T, dt)
    return kernels().brownian_paths(np.uint64(key), int(n_paths), n, int(d), math.sqrt(dt), _x0(x0, d))


def sample_brownian(d: int, T: float, dt: float, x0=None, seed: int = 0, index: int = 0) -> Path:
    """One Brownian path; distinct ``index`` values give independent streams."""
    key = rng.stream_key(seed, rng.PATHS, index)
    return Path(sample_paths(1, d, T, dt, x0, key)[0], dt)


def _check_grid(p: Path, q: Path) -> None:
    if p.positions.shape != q.positions.shape or not math.isclose(p.dt, q.dt):
        raise ValueError("paths live on different grids")


def uniform_distance(p: Path, q: Path) -> float:
    """max over grid times of |p(t) - q(t)|."""
    _check_grid(p, q)
    diff = p.positions - q.positions
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=1))))


def in_tube(p: Path, phi: Path, r: float) -> bool:
    """Membership of ``p`` in the open uniform-norm tube N_r(phi)."""
    return uniform_distance(p, phi) < r


def sup_distance(positions: np.ndarray, phi: np.ndarray | None = None, upto: int | None = None) -> np.ndarray:
    """Per-path sup-norm distance to ``phi`` (default the zero path) over steps ``0..upto``."""
    x = positions if upto is None else positions[:, : upto + 1]
    if phi is not None:
        x = x - phi[None, : x.shape[1]]
    return np.sqrt(np.max(np.sum(x * x, axis=2), axis=1))


@dataclass
class TubeEstimate:
    T: float
    prob: float
    stderr: float
    survivors: int
    n: int

    @property
    def flagged(self) -> bool:
        """No survivors: the log-probability is undefined."""
        return self.survivors == 0

    @property
    def log_prob(self) -> float:
        return math.log(self.prob) if self.survivors > 0 else -math.inf

    @property
    def log_stderr(self) -> float:
        """Delta-method standard error of ``log_prob``."""
        return self.stderr / self.prob if self.survivors > 0 else math.inf

    @property
    def rate(self) -> float:
        """(1/T) log P, the empirical decay rate."""
        if self.T == 0:
            return 0.0
        return self.log_prob / self.T


def tube_survival_series(d: int, r: float, Ts, dt: float, n: int, seed: int = 0) -> list[TubeEstimate]:
    """Wiener probability of ``sup_{s<=T} |w_s| < r`` for every T in ``Ts``.

    One set of ``n`` paths is simulated up to max(Ts) and inspected at each
    T, so the estimates along the series are correlated.
    """
    if n < 1000:
        raise ValueError("tube_survival needs at least 1000 samples")
    if r <= 0:
        raise ValueError("radius must be positive")
    steps = [n_steps_for(T, dt) for T in Ts]
    n_max = max(steps) if steps else 0
    key = rng.stream_key(seed, rng.PATHS)
    exits = kernels().tube_exit_steps(np.uint64(key), int(n), n_max, int(d), math.sqrt(dt), float(r))
    out = []
    for T, m in zip(Ts, steps):
        surv = int(np.count_nonzero(exits > m))
        p = surv / n
        out.append(TubeEstimate(T=float(T), prob=p, stderr=math.sqrt(p * (1 - p) / n),
                                survivors=surv, n=int(n)))
    return out


def tube_survival(d: int, r: float, T: float, dt: float, n: int, seed: int = 0) -> TubeEstimate:
    """Single-horizon version of :func:`tube_survival_series`."""
    return tube_survival_series(d, r, [T], dt, n, seed)[0]


def _project(f, phi, half):
    dev = f - phi
    norm = np.sqrt(np.sum(dev * dev, axis=-1, keepdims=True))
    scale = np.where(norm > half, half / np.maximum(norm, 1e-300), 1.0)
    return phi + dev * scale


def _energy(f, dt):
    inc = np.diff(f, axis=-2)
    return np.sum(inc * inc, axis=(-2, -1)) / dt


def _tube_qp(phi: np.ndarray, r: float, dt: float, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch solver for the tube energy; ``phi`` has shape (B, m + 1, d).

    Minimizes sum |f_{k+1} - f_k|^2 / dt with pinned endpoints and
    |f_k - phi_k| <= r/2 by accelerated projected gradient with restarts.
    Returns the feasible minimizers and their energies.
    """
    half = r / 2.0
    m = phi.shape[1] - 1
    f = phi.copy()
    if m <= 1:
        return f, _energy(f, dt)
    inner_phi = phi[:, 1:-1]
    step = dt / 8.0
    x = f[:, 1:-1].copy()
    y = x.copy()
    t = np.ones(phi.shape[0])
    full = f.copy()
    e_hist = [_energy(f, dt)]
    window = 50
    for it in range(max_iter):
        full[:, 1:-1] = y
        grad = (2.0 / dt) * (2.0 * full[:, 1:-1] - full[:, :-2] - full[:, 2:])
        x_new = _project(y - step * grad, inner_phi, half)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # gradient restart when momentum points uphill
        restart = np.sum((y - x_new) * (x_new - x), axis=(1, 2)) > 0
        beta = np.where(restart, 0.0, (t - 1.0) / t_new)
        t_new = np.where(restart, 1.0, t_new)
        y = x_new + beta[:, None, None] * (x_new - x)
        x, t = x_new, t_new
        if (it + 1) % window == 0:
            f[:, 1:-1] = x
            e = _energy(f, dt)
            prev = e_hist[-1]
            e_hist.append(e)
            if np.all(np.abs(prev - e) <= tol * np.maximum(e, 1e-300)):
                break
    f[:, 1:-1] = x
    return f, _energy(f, dt)


def cameron_martin_energy(phi: Path, r: float, s: float, t: float, tol: float = 1e-6,
                          max_iter: int = 200_000) -> float:
    """Tube energy ``B_{s,t}(phi)``: least discrete Dirichlet energy of a path
    pinned to phi at s and t and staying within r/2 of phi in between.

    Returns the energy of the feasible minimizer found, an upper bound on
    the exact infimum.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    a = n_steps_for(s, phi.dt)
    b = n_steps_for(t, phi.dt)
    if not 0 <= a < b <= phi.n_steps:
        raise ValueError("need 0 <= s < t <= T on the path grid")
    seg = phi.positions[None, a: b + 1]
    _, e = _tube_qp(seg, r, phi.dt, tol, max_iter)
    return float(e[0])


def tube_energy_batch(positions: np.ndarray, r: float, dt: float, a: int, b: int,
                      tol: float = 1e-6, max_iter: int = 200_000) -> np.ndarray:
    """:func:`cameron_martin_energy` for every path in ``positions`` over steps [a, b]."""
    _, e = _tube_qp(np.ascontiguousarray(positions[:, a: b + 1]), r, dt, tol, max_iter)
    return e


@dataclass
class RhoEstimate:
    T: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    plateau: float
    trend: float

    def as_rows(self):
        return [{"T": float(T), "B_over_T": float(m), "stderr": float(s)}
                for T, m, s in zip(self.T, self.mean, self.stderr)]


def rho_estimate(d: int, r: float, T_max: float, dt: float, n: int, seed: int = 0,
                 doublings: int = 4, tol: float = 1e-6) -> RhoEstimate:
    """Monte Carlo sequence of E[B_{0,T}] / T at T = T_max / 2^k, k = doublings..0.

    ``plateau`` is the intercept of a least-squares fit of the means
    against 1/T and ``trend`` its slope; no closed form exists to compare with.
    """
    if doublings < 4:
        raise ValueError("T_max must span at least 4 doublings")
    Ts = np.array([T_max / 2 ** k for k in range(doublings, -1, -1)])
    steps = [n_steps_for(T, dt) for T in Ts]
    pos = sample_paths(n, d, T_max, dt, None, rng.stream_key(seed, rng.PATHS))
    means, ses = [], []
    for m in steps:
        e = tube_energy_batch(pos, r, dt, 0, m, tol) / (m * dt)
        means.append(float(np.mean(e)))
        ses.append(float(np.std(e, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    means, ses = np.array(means), np.array(ses)
    A = np.vstack([np.ones_like(Ts), 1.0 / Ts]).T
    coef, *_ = np.linalg.lstsq(A, means, rcond=None)
    return RhoEstimate(T=Ts, mean=means, stderr=ses, plateau=float(coef[0]), trend=float(coef[1]))
