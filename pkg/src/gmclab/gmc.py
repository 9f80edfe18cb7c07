"""The GMC measure on Wiener space as a self-normalized weighted path ensemble.

A path omega_i sampled from Wiener measure carries the log-weight
``gamma H_T(omega_i) - gamma^2 T V(0) / 2`` where H_T is the Ito
contraction of the mollified noise along the path. All partition
quantities are kept in log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gmclab import rng
from gmclab._backend import kernels
from gmclab.kernel import Kernel
from gmclab.noise import NoiseGrid, path_increments, smoothed_noise_many, stencil
from gmclab.paths import Path, n_steps_for, sample_paths

MIN_ESS = 30.0


def logsumexp(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + math.log(np.sum(np.exp(a - m))))


def normalize_log_weights(lw) -> tuple[np.ndarray, float, float]:
    """Max-shifted normalization.

    Returns (weights summing to one, log of the mean of exp(lw), ESS).
    """
    lw = np.asarray(lw, dtype=np.float64)
    m = np.max(lw)
    if not np.isfinite(m):
        raise FloatingPointError("all log-weights are -inf or non-finite")
    u = np.exp(lw - m)
    s = np.sum(u)
    w = u / s
    ess = 1.0 / float(np.sum(w * w))
    return w, float(m + math.log(s) - math.log(lw.shape[0])), ess


def hamiltonian(path: Path, g: NoiseGrid, k: Kernel, T: float | None = None) -> float:
    """H_T(omega) = sum_i dt * smoothed_noise(i, omega(t_i)) (left endpoints)."""
    if not math.isclose(path.dt, g.dt):
        raise ValueError("path and noise grids differ")
    T = path.T if T is None else T
    n = n_steps_for(T, g.dt)
    if n > path.n_steps:
        raise ValueError("path horizon shorter than T")
    if n > g.n_steps:
        raise ValueError("T exceeds the noise horizon")
    return float(np.sum(path_increments(g, k, path.positions[None, : n + 1], n)))


@dataclass(eq=False)
class GmcEnsemble:
    """N Wiener paths with their per-step Hamiltonian increments and weights."""

    gamma: float
    dt: float
    positions: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    noise: NoiseGrid = field(repr=False)
    kernel: Kernel = field(repr=False)
    log_weights: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    ess: float = field(init=False)
    log_partition: float = field(init=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        H = self.hamiltonians
        self.log_weights = self.gamma * H - 0.5 * self.gamma ** 2 * self.T * self.kernel.v0
        if self.gamma == 0:
            n = self.N
            self.weights = np.full(n, 1.0 / n)
            self.ess = float(n)
            self.log_partition = 0.0
        else:
            self.weights, self.log_partition, self.ess = normalize_log_weights(self.log_weights)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[2]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def hamiltonians(self) -> np.ndarray:
        return np.sum(self.increments, axis=1)

    @property
    def log_Z(self) -> float:
        """log of the unrenormalized partition function estimate."""
        return self.log_partition + 0.5 * self.gamma ** 2 * self.T * self.kernel.v0

    @property
    def partition(self) -> float:
        return math.exp(self.log_partition)

    @property
    def log_partition_stderr(self) -> float:
        """Delta-method standard error of ``log_partition``."""
        return math.sqrt(max(1.0 / self.ess - 1.0 / self.N, 0.0))

    @property
    def low_ess(self) -> bool:
        return self.ess < MIN_ESS

    def reweighted(self, gamma: float) -> "GmcEnsemble":
        """Same paths and noise at another inverse temperature."""
        return GmcEnsemble(gamma, self.dt, self.positions, self.increments, self.noise, self.kernel)

    def prefix(self, T: float) -> "GmcEnsemble":
        """The ensemble of the horizon-T measure built from the same paths."""
        m = n_steps_for(T, self.dt)
        if m > self.n_steps:
            raise ValueError("prefix longer than the ensemble")
        return GmcEnsemble(self.gamma, self.dt, self.positions[:, : m + 1], self.increments[:, :m],
                           self.noise, self.kernel)

    def prefix_weights(self) -> np.ndarray:
        """Weights of the horizon-t measure at every step t = 0 .. n - 1, shape (n, N)."""
        n, N = self.n_steps, self.N
        W = np.empty((n, N))
        W[0] = 1.0 / N
        if self.gamma == 0:
            W[:] = 1.0 / N
            return W
        cum = np.cumsum(self.increments, axis=1)
        for m in range(1, n):
            W[m] = normalize_log_weights(self.gamma * cum[:, m - 1])[0]
        return W

    def step_of(self, t: float) -> int:
        m = n_steps_for(t, self.dt)
        if m > self.n_steps:
            raise ValueError(f"time {t} beyond the ensemble horizon")
        return m


def ensemble_from_paths(gamma: float, positions: np.ndarray, g: NoiseGrid, k: Kernel,
                        n_steps: int | None = None) -> GmcEnsemble:
    """Weight the given paths (shape (N, n + 1, d)) by the noise ``g``."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[1] - 1 if n_steps is None else n_steps
    dH = path_increments(g, k, positions, n)
    return GmcEnsemble(gamma, g.dt, positions[:, : n + 1], dH, g, k)


def default_path_key(g: NoiseGrid) -> int:
    return rng.stream_key(g.seed, rng.PATHS)


def build_ensemble(gamma: float, T: float, n_paths: int, g: NoiseGrid, k: Kernel, x0=None,
                   path_key: int | None = None) -> GmcEnsemble:
    """Sample ``n_paths`` Brownian paths from ``x0`` and weight them by ``g``."""
    if n_paths < 100:
        raise ValueError("build_ensemble needs at least 100 paths")
    if path_key is None:
        path_key = default_path_key(g)
    pos = sample_paths(n_paths, g.d, T, g.dt, x0, path_key)
    return ensemble_from_paths(gamma, pos, g, k)


@dataclass
class ProbabilityEstimate:
    value: float
    stderr: float
    ess: float
    hits: int

    @property
    def low_confidence(self) -> bool:
        return self.ess < MIN_ESS

    @property
    def empty(self) -> bool:
        return self.hits == 0


def gmc_probability(e: GmcEnsemble, event) -> ProbabilityEstimate:
    """GMC mass of an event.

    ``event`` is a boolean mask over paths or a callable mapping the
    positions array (N, n + 1, d) to such a mask.
    """
    mask = np.asarray(event(e.positions) if callable(event) else event, dtype=bool)
    if mask.shape != (e.N,):
        raise ValueError("event mask must have one entry per path")
    w = e.weights
    p = math.fsum(w[mask])
    se = math.sqrt(float(np.sum(w * w * (mask - p) ** 2)))
    return ProbabilityEstimate(value=p, stderr=se, ess=e.ess, hits=int(mask.sum()))


def tube_event(r: float, phi: np.ndarray | None = None):
    """Event {sup_t |omega_t - phi_t| < r} for :func:`gmc_probability`."""
    def event(pos):
        x = pos if phi is None else pos - phi[None, : pos.shape[1]]
        return np.max(np.sum(x * x, axis=2), axis=1) < r * r
    return event


@dataclass(eq=False)
class EndpointMeasure:
    """Weighted point cloud {(omega_i(t), w_i)}."""

    t: float
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)


def endpoint_measure(e: GmcEnsemble, t: float, prefix: bool = False) -> EndpointMeasure:
    """Positions at time t with the ensemble weights (or the horizon-t weights)."""
    m = e.step_of(t)
    if prefix and m < e.n_steps:
        w = e.prefix(t).weights if m > 0 else np.full(e.N, 1.0 / e.N)
    else:
        w = e.weights
    return EndpointMeasure(t=t, points=e.positions[:, m, :], weights=w)


def pair_overlap(points: np.ndarray, weights: np.ndarray, k: Kernel) -> float:
    """sum_ij w_i w_j V(x_i - x_j) by exact double sum."""
    return float(kernels().pair_overlap(np.ascontiguousarray(points, dtype=np.float64),
                                        np.ascontiguousarray(weights, dtype=np.float64), k.v, k.h))


def sampled_pair_overlap(points: np.ndarray, weights: np.ndarray, k: Kernel, n_pairs: int,
                         key: int) -> tuple[float, float]:
    """Monte Carlo estimate of the pair overlap from ``n_pairs`` weighted pair draws."""
    from gmclab.kernel import eval_V

    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = rng.uniforms(key, 2 * n_pairs)
    i = np.minimum(np.searchsorted(cdf, u[:n_pairs], side="right"), len(cdf) - 1)
    j = np.minimum(np.searchsorted(cdf, u[n_pairs:], side="right"), len(cdf) - 1)
    vals = eval_V(k, points[i] - points[j])
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_pairs))


def endpoint_overlap(e: GmcEnsemble, t: float, method: str = "auto", n_pairs: int = 100_000,
                     max_exact: int = 2000) -> float:
    """Replica overlap sum_ij w_i w_j V(omega_i(t) - omega_j(t))."""
    m = e.step_of(t)
    x = e.positions[:, m, :]
    if method == "exact" or (method == "auto" and e.N <= max_exact):
        return pair_overlap(x, e.weights, e.kernel)
    key = rng.stream_key(e.noise.seed, rng.PAIRS, m)
    return sampled_pair_overlap(x, e.weights, e.kernel, n_pairs, key)[0]


def energy_F(gamma: float, m: EndpointMeasure, k: Kernel) -> float:
    """(gamma^2 / 2) * sum_ij w_i w_j V(x_i - x_j) for an endpoint measure."""
    return 0.5 * gamma ** 2 * pair_overlap(m.points, m.weights, k)


def field_overlaps(positions: np.ndarray, steps, W: np.ndarray, g: NoiseGrid, k: Kernel) -> np.ndarray:
    """Replica overlaps at ``steps`` through the mollified weight field.

    Uses sum_ij w_i w_j V = int (sum_i w_i kappa(y - x_i))^2 dy with the
    integral taken over noise cells, i.e. with the covariance the
    discrete noise actually has. ``W`` is (len(steps), N) or (N,).
    """
    steps = np.asarray(steps, dtype=np.int64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = np.broadcast_to(W, (steps.shape[0], W.shape[0]))
    return kernels().field_overlaps(np.ascontiguousarray(positions), steps, np.ascontiguousarray(W),
                                    g.dx, stencil(g.d, g.dx, k.support), k.kappa, k.h)


def overlap_series(e: GmcEnsemble, weights: np.ndarray | None = None) -> np.ndarray:
    """Replica overlap at every left endpoint t_0 .. t_{n-1} (field route)."""
    w = e.weights if weights is None else weights
    return field_overlaps(e.positions, np.arange(e.n_steps), w, e.noise, e.kernel)


def mean_replica_overlap(e: GmcEnsemble, weights: np.ndarray | None = None) -> float:
    """(1/T) int_0^T E^{(x)2}[V(omega_s - omega'_s)] ds."""
    return float(np.sum(overlap_series(e, weights)) * e.dt / e.T)


def free_energy(gamma: float, T: float, g: NoiseGrid, k: Kernel, n_paths: int, x0=None,
                path_key: int | None = None) -> float:
    """(1/T) log Z_T."""
    e = build_ensemble(gamma, T, n_paths, g, k, x0, path_key)
    return e.log_Z / e.T


def free_energy_of(e: GmcEnsemble, gamma: float) -> float:
    """(1/T) log Z_T at ``gamma`` on the ensemble's paths and noise."""
    if gamma == 0:
        return 0.0
    lse = logsumexp(gamma * e.hamiltonians) - math.log(e.N)
    return lse / e.T


@dataclass
class ItoCheck:
    A: float
    B: float
    martingale: float
    drift: float
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else 0.0


def ito_decomposition(e: GmcEnsemble, overlap: str = "exact") -> ItoCheck:
    """Compare (1/T) log Zhat_T with M_T/T - (1/T) int F_gamma(Q_t) dt.

    The martingale increment at step t is gamma * sum_i w_i(t) dH_i(t)
    with the horizon-t weights w(t) (Ito); Q_t is the endpoint law under
    those weights.
    """
    g, k, gamma = e.noise, e.kernel, e.gamma
    A = e.log_partition / e.T
    if gamma == 0:
        return ItoCheck(A=A, B=0.0, martingale=0.0, drift=0.0, residual=abs(A), scale=0.0)
    W = e.prefix_weights()
    mart = gamma * float(np.sum(W * e.increments.T))
    if overlap == "exact":
        ov = np.array([pair_overlap(e.positions[:, m, :], W[m], k) for m in range(e.n_steps)])
    else:
        ov = field_overlaps(e.positions, np.arange(e.n_steps), W, g, k)
    drift = 0.5 * gamma ** 2 * float(np.sum(ov)) * e.dt
    B = mart / e.T - drift / e.T
    return ItoCheck(A=A, B=B, martingale=mart / e.T, drift=drift / e.T, residual=abs(A - B),
                    scale=max(abs(A), 0.5 * gamma ** 2 * k.v0))


def ito_decomposition_check(gamma: float, T: float, g: NoiseGrid, k: Kernel, n_paths: int,
                            path_key: int | None = None) -> ItoCheck:
    return ito_decomposition(build_ensemble(gamma, T, n_paths, g, k, None, path_key))


def thickness(e: GmcEnsemble) -> float:
    """E^{M_T}[H_T / T]."""
    return float(np.dot(e.weights, e.hamiltonians) / e.T)


def thickness_series(e: GmcEnsemble, Ts) -> list[float]:
    """:func:`thickness` for the horizon-T measures at each T in ``Ts``."""
    return [thickness(e.prefix(T)) for T in Ts]


@dataclass
class ConcentrationCheck:
    frequency: float
    bound: float
    stderr: float
    u: float
    n: int

    @property
    def passed(self) -> bool:
        return self.frequency <= self.bound + 3 * self.stderr


def concentration_check(log_Z: np.ndarray, gamma: float, T: float, v0: float,
                        u: float | None = None) -> ConcentrationCheck:
    """Tail frequency of |log Z - mean| > u against 2 exp(-u^2 / (2 gamma^2 T V0))."""
    log_Z = np.asarray(log_Z, dtype=np.float64)
    if u is None:
        u = 2 * gamma * math.sqrt(T * v0)
    dev = np.abs(log_Z - log_Z.mean())
    freq = float(np.mean(dev > u))
    bound = 2.0 * math.exp(-u * u / (2 * gamma ** 2 * T * v0))
    se = math.sqrt(bound * (1 - min(bound, 1.0)) / len(log_Z)) if bound < 1 else 0.0
    return ConcentrationCheck(frequency=freq, bound=bound, stderr=se, u=u, n=len(log_Z))


def _systematic(w: np.ndarray, u0: float) -> np.ndarray:
    n = w.shape[0]
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, (np.arange(n) + u0) / n, side="right"), n - 1)


def tube_mass_smc(gamma: float, Ts, n_particles: int, g: NoiseGrid, k: Kernel, r: float | None,
                  phi: np.ndarray | None = None, x0=None, key: int | None = None,
                  with_ess: bool = False):
    """log Zhat_T(A) for the tube A = N_r(phi) at every T in ``Ts``.

    Sequential Monte Carlo over the time grid: each step multiplies the
    particle weights by the renormalized exponential of the Hamiltonian
    increment, kills particles that leave the tube, accumulates the log
    mean weight and resamples systematically. The running product is an
    unbiased estimate of E_0[1_A exp(gamma H_T - gamma^2 T V0 / 2)], which
    stays usable when A is far too rare for plain sampling. ``r=None``
    disables killing (estimates log Zhat_T itself). Returns -inf once all
    particles have died. With ``with_ess`` also returns the effective
    particle count of the incremental weights at each T.
    """
    d = g.d
    steps = [n_steps_for(T, g.dt) for T in Ts]
    n = max(steps)
    if n > g.n_steps:
        raise ValueError("horizon exceeds the noise grid")
    if key is None:
        key = default_path_key(g)
    x = np.zeros((n_particles, d)) if x0 is None else np.tile(np.asarray(x0, dtype=np.float64), (n_particles, 1))
    if phi is not None and phi.shape[0] < n + 1:
        raise ValueError("center path shorter than the horizon")
    sqrt_dt = math.sqrt(g.dt)
    idx = np.arange(n_particles)
    drift = 0.5 * gamma ** 2 * g.dt * k.v0
    ker = kernels()
    want = set(steps)
    out = np.full(len(steps), -np.inf)
    ess = np.zeros(len(steps))
    for j, m in enumerate(steps):
        if m == 0:
            out[j] = 0.0
            ess[j] = n_particles
    log_mass = 0.0
    key_u = rng.stream_key(key, rng.RESAMPLE)
    for i in range(n):
        if gamma != 0:
            lw = gamma * smoothed_noise_many(g, k, i, x) * g.dt - drift
        else:
            lw = np.zeros(n_particles)
        z = ker.normals(np.uint64(key), i, np.stack(np.broadcast_arrays(idx[:, None], np.arange(d)[None, :]), -1).reshape(-1, 2))
        x = x + sqrt_dt * z.reshape(n_particles, d)
        if r is not None:
            c = x if phi is None else x - phi[i + 1]
            lw = np.where(np.sum(c * c, axis=1) < r * r, lw, -np.inf)
        m = np.max(lw)
        if not np.isfinite(m):
            break
        u = np.exp(lw - m)
        log_mass += m + math.log(np.mean(u))
        if (i + 1) in want:
            for j, s in enumerate(steps):
                if s == i + 1:
                    out[j] = log_mass
                    ess[j] = float(np.sum(u)) ** 2 / float(np.sum(u * u))
        x = x[_systematic(u, float(rng.uniforms(rng.stream_key(key_u, i), 1)[0]))]
    return (out, ess) if with_ess else out


def gmc_tube_log_volume(gamma: float, Ts, n_particles: int, g: NoiseGrid, k: Kernel, r: float,
                        phi: np.ndarray | None = None, x0=None, key: int | None = None,
                        with_ess: bool = False):
    """log Mhat_T[N_r(phi)] = log Zhat_T(tube) - log Zhat_T at every T in ``Ts``."""
    if key is None:
        key = default_path_key(g)
    restricted, ess = tube_mass_smc(gamma, Ts, n_particles, g, k, r, phi, x0, key, with_ess=True)
    if gamma != 0:
        restricted = restricted - tube_mass_smc(gamma, Ts, n_particles, g, k, None, None, x0,
                                                rng.stream_key(key, 1))
    return (restricted, ess) if with_ess else restricted
