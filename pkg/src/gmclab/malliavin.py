"""Malliavin calculus of the free energy f_T = (1/T) log Z_T.

Every noise functional here is a function of the cell Gaussians, so
D is the gradient in those coordinates (rescaled to white-noise units)
and the OU generator is L = Laplacian - xi . grad. For f_T this gives

    D_{t,x} f_T = (gamma/T) E_T[kappa(x - omega_t)]
    L f_T       = gamma^2 V(0) - (gamma^2/T) int E_T^{(x)2}[V(omega_s - omega'_s)] ds - gamma f_T'

with the replica term evaluated through the discrete covariance of the
noise model, which makes E[L f_T] = 0 hold for the simulated functional.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gmclab import rng
from gmclab.gmc import GmcEnsemble, ensemble_from_paths, field_overlaps, normalize_log_weights
from gmclab.kernel import Kernel, eval_mollifier
from gmclab.noise import NoiseGrid, eta_grid, flow_coefficients, path_increments, stencil
from gmclab.paths import sample_paths


@dataclass(eq=False)
class GradientField:
    """Sparse D_{t,x} f_T: for every time index, the touched cells and values."""

    gamma: float
    T: float
    dt: float
    dx: float
    cells: list = field(repr=False)
    values: list = field(repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.values)

    def value(self, t_index: int, cell) -> float:
        cell = np.asarray(cell, dtype=np.int64).reshape(-1)
        hit = np.all(self.cells[t_index] == cell[None, :], axis=1)
        return float(self.values[t_index][hit].sum()) if hit.any() else 0.0

    def mass(self, t_index: int) -> float:
        """int D_{t,x} f_T dx at one time index."""
        d = self.cells[t_index].shape[1]
        return float(np.sum(self.values[t_index]) * self.dx ** d)


def _field_cells(x: np.ndarray, w: np.ndarray, dx: float, k: Kernel) -> tuple[np.ndarray, np.ndarray]:
    d = x.shape[1]
    off = stencil(d, dx, k.support)
    base = np.floor(x / dx).astype(np.int64)
    cells = base[:, None, :] + off[None, :, :]
    kap = eval_mollifier(k, x[:, None, :] - cells * dx) if d > 1 else \
        eval_mollifier(k, (x[:, None, :] - cells * dx)[..., 0])
    vals = (w[:, None] * kap).reshape(-1)
    cells = cells.reshape(-1, d)
    keep = vals != 0
    uniq, inv = np.unique(cells[keep], axis=0, return_inverse=True)
    return uniq, np.bincount(inv.reshape(-1), weights=vals[keep], minlength=uniq.shape[0])


def malliavin_gradient(e: GmcEnsemble, k: Kernel | None = None) -> GradientField:
    """(gamma/T) sum_i w_i kappa(y - omega_i(t)) on every cell centre y."""
    k = e.kernel if k is None else k
    cells, values = [], []
    pref = e.gamma / e.T
    for t in range(e.n_steps):
        c, v = _field_cells(e.positions[:, t, :], e.weights, e.noise.dx, k)
        cells.append(c)
        values.append(pref * v)
    return GradientField(e.gamma, e.T, e.dt, e.noise.dx, cells, values)


def gradient_norm_sq(f: GradientField) -> float:
    """||D f_T||^2 = sum over (t, cells) of value^2 dx^d dt."""
    total = 0.0
    for c, v in zip(f.cells, f.values):
        if v.size:
            total += float(np.sum(v * v)) * f.dx ** c.shape[1]
    return total * f.dt


def gradient_norm_sq_fast(e: GmcEnsemble) -> float:
    """Same quantity as :func:`gradient_norm_sq` via field overlaps (no cell lists)."""
    ov = field_overlaps(e.positions, np.arange(e.n_steps), e.weights, e.noise, e.kernel)
    return (e.gamma / e.T) ** 2 * float(np.sum(ov)) * e.dt


def fprime_estimate(e: GmcEnsemble, g: NoiseGrid | None = None, k: Kernel | None = None) -> float:
    """d f_T / d gamma = (1/T) sum_i w_i H_T(omega_i).

    The cell-wise form (1/T) sum_t dt sum_y E_T[kappa(y - omega_t)] B(t, y) dx^d
    is the same sum with the order of summation exchanged.
    """
    if g is not None and g is not e.noise:
        e = ensemble_from_paths(e.gamma, e.positions, g, k or e.kernel, e.n_steps)
    return float(np.dot(e.weights, e.hamiltonians) / e.T)


def ou_generator_estimate(e: GmcEnsemble, k: Kernel | None = None) -> float:
    """L f_T for the field the ensemble was weighted with."""
    if e.gamma == 0:
        return 0.0
    k = e.kernel if k is None else k
    ov = field_overlaps(e.positions, np.arange(e.n_steps), e.weights, e.noise, k)
    g2 = e.gamma ** 2
    return g2 * k.v0 - g2 / e.T * float(np.sum(ov)) * e.dt - e.gamma * fprime_estimate(e)


def _generator_from(H: np.ndarray, positions, gamma, T, dt, g, k):
    """(L f_T, ||D f_T||^2) for paths with Hamiltonians H under field g."""
    w = normalize_log_weights(gamma * H)[0]
    ov = field_overlaps(positions, np.arange(positions.shape[1] - 1), w, g, k)
    s = float(np.sum(ov)) * dt
    lf = gamma ** 2 * k.v0 - gamma ** 2 / T * s - gamma * float(np.dot(w, H)) / T
    return lf, (gamma / T) ** 2 * s


@dataclass
class FlowAverage:
    """(1/t) int_0^t L f_T(B_r) dr for one noise realization."""

    value: float
    grad_norm_sq: float
    generator: np.ndarray = field(repr=False)


def flow_average(gamma: float, T: float, t: float, g: NoiseGrid, k: Kernel, n_paths: int,
                 flow_steps: int = 20, path_key: int | None = None, markov: bool = True) -> FlowAverage:
    """Midpoint-rule flow average of L f_T along the OU flow of the noise.

    With ``markov=True`` the flow is sampled as an exact OU chain over the
    midpoints r_1 < ... < r_m: B_{r_k} = e^{-dr} B_{r_{k-1}} + sqrt(1 - e^{-2 dr}) eta_k
    with a fresh eta per step, so (B_r) is the stationary OU process. With
    ``markov=False`` one eta is shared: B_r = e^{-r} B + sqrt(1 - e^{-2r}) eta.
    Fields are linear in the noise, so only the Hamiltonians of B and of
    the etas are simulated. The paths are shared across flow times.
    """
    if flow_steps < 1:
        raise ValueError("need at least one flow step")
    if path_key is None:
        path_key = rng.stream_key(g.seed, rng.PATHS)
    pos = sample_paths(n_paths, g.d, T, g.dt, None, path_key)
    n = pos.shape[1] - 1
    H = path_increments(g, k, pos, n).sum(axis=1)
    dr = t / flow_steps
    mids = (np.arange(flow_steps) + 0.5) * dr
    n_eta = flow_steps if markov else 1
    etas = [path_increments(eta_grid(g, rng.stream_key(g.seed, rng.FLOW, j)), k, pos, n).sum(axis=1)
            for j in range(n_eta)]
    gen = np.empty(flow_steps)
    grad = np.empty(flow_steps)
    Hr = H
    prev = 0.0
    for j, r in enumerate(mids):
        if markov:
            a, b = flow_coefficients(r - prev)
            Hr = a * Hr + b * etas[j]
            prev = r
        else:
            a, b = flow_coefficients(r)
            Hr = a * H + b * etas[0]
        gen[j], grad[j] = _generator_from(Hr, pos, gamma, T, g.dt, g, k)
    return FlowAverage(value=float(np.mean(gen)), grad_norm_sq=float(np.mean(grad)), generator=gen)


@dataclass
class ChebyshevReport:
    gamma: float
    T: float
    t: float
    eps: float
    frequency: float
    bound: float
    stderr: float
    variance: float
    variance_bound: float
    variance_stderr: float
    generator_mean: float
    generator_stderr: float
    n: int
    values: np.ndarray = field(default=None, repr=False)
    grad_norms: np.ndarray = field(default=None, repr=False)

    @property
    def vacuous(self) -> bool:
        return self.bound >= 1.0

    @property
    def passed(self) -> bool:
        return self.vacuous or self.frequency <= self.bound + 3 * self.stderr

    @property
    def variance_passed(self) -> bool:
        return self.variance <= self.variance_bound + 3 * self.variance_stderr

    @property
    def mean_zero_passed(self) -> bool:
        return abs(self.generator_mean) <= 3 * self.generator_stderr

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "T": self.T, "t": self.t, "eps": self.eps,
                "frequency": self.frequency, "bound": self.bound, "variance": self.variance,
                "variance_bound": self.variance_bound, "pass": bool(self.passed and self.variance_passed)}


def eps_for_bound(bound: float, T: float, t: float, v0: float) -> float:
    """The eps with 8 V0 / (t T eps^2) = bound."""
    return math.sqrt(8 * v0 / (t * T * bound))


def chebyshev_flow_check(gamma: float, T: float, t: float, eps: float, K: int, d: int, dt: float,
                         dx: float, k: Kernel, n_paths: int, seed: int = 0, flow_steps: int = 20,
                         workers: int = 1, min_realizations: int = 200) -> ChebyshevReport:
    """Frequency of {flow average of L f_T > gamma eps / 2} against 8 V0 / (t T eps^2).

    Also reports the variance of the flow average with its Poincare bound
    (2/t) E||D f_T||^2 and the mean of L f_T.
    """
    if K < min_realizations:
        raise ValueError(f"need at least {min_realizations} realizations")
    if flow_steps < 20:
        raise ValueError("need at least 20 flow steps")

    def one(i):
        g = NoiseGrid(d, dt, dx, rng.stream_key(seed, i), T)
        return flow_average(gamma, T, t, g, k, n_paths, flow_steps)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        res = list(ex.map(one, range(K)))
    vals = np.array([r.value for r in res])
    grads = np.array([r.grad_norm_sq for r in res])
    gens = np.concatenate([r.generator[:1] for r in res])
    bound = 8 * k.v0 / (t * T * eps * eps)
    freq = float(np.mean(vals > gamma * eps / 2))
    p = min(max(bound, 0.0), 1.0)
    se = math.sqrt(p * (1 - p) / K)
    var = float(np.var(vals, ddof=1)) if gamma != 0 else 0.0
    dev2 = (vals - vals.mean()) ** 2
    var_se = float(np.std(dev2, ddof=1) / math.sqrt(K))
    vb = 2 / t * float(np.mean(grads))
    vb_se = 2 / t * float(np.std(grads, ddof=1) / math.sqrt(K))
    return ChebyshevReport(gamma=gamma, T=T, t=t, eps=eps, frequency=freq, bound=bound, stderr=se,
                           variance=var, variance_bound=vb, variance_stderr=math.hypot(var_se, vb_se),
                           generator_mean=float(np.mean(gens)),
                           generator_stderr=float(np.std(gens, ddof=1) / math.sqrt(K)), n=K,
                           values=vals, grad_norms=grads)
