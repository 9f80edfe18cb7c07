"""Localization diagnostics: path covariance, B_delta, greedy covers and I_{T,t}.

Overlaps are normalized by T V(0) so that thresholds do not depend on
the kernel; ``delta`` always refers to the normalized scale.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gmclab import rng
from gmclab._backend import kernels
from gmclab.gmc import (MIN_ESS, GmcEnsemble, build_ensemble, ensemble_from_paths, field_overlaps,
                        mean_replica_overlap, normalize_log_weights)
from gmclab.kernel import Kernel, eval_V
from gmclab.noise import NoiseGrid, eta_grid, flow_coefficients, path_increments
from gmclab.paths import Path, n_steps_for


def normalized_cov(p: Path, q: Path, k: Kernel, T: float | None = None) -> float:
    """(1/(T V0)) sum_{i < n} dt V(p(t_i) - q(t_i))."""
    if p.positions.shape != q.positions.shape or not math.isclose(p.dt, q.dt):
        raise ValueError("paths live on different grids")
    n = p.n_steps if T is None else n_steps_for(T, p.dt)
    if n > p.n_steps or n == 0:
        raise ValueError("T outside the path horizon")
    diff = p.positions[:n] - q.positions[:n]
    v = eval_V(k, diff if k.d > 1 else diff[:, 0])
    return float(np.sum(v) * p.dt / (n * p.dt * k.v0))


def cov_matrix(e: GmcEnsemble) -> np.ndarray:
    """Normalized covariances of all ensemble pairs (N x N)."""
    G = kernels().pair_gram(np.ascontiguousarray(e.positions), np.arange(e.n_steps, dtype=np.int64),
                            e.kernel.v, e.kernel.h, e.dt)
    return G / (e.T * e.kernel.v0)


def normalized_mean_overlap(e: GmcEnsemble) -> float:
    """(1/(T V0)) int E_T^{(x)2}[V(omega_s - omega'_s)] ds, clipped to [0, 1].

    Computed through the discretized covariance of the noise; its
    diagonal differs from V0 by a Riemann-sum error far below 1e-6.
    """
    return float(np.clip(mean_replica_overlap(e) / e.kernel.v0, 0.0, 1.0))


@dataclass
class BDeltaResult:
    delta: float
    frequency: float
    stderr: float
    overlaps: np.ndarray = field(repr=False)
    ess: np.ndarray = field(repr=False)
    n_low_ess: int = 0

    @property
    def n(self) -> int:
        return len(self.overlaps)

    @property
    def mean_overlap(self) -> float:
        return float(np.mean(self.overlaps))

    @property
    def mean_overlap_stderr(self) -> float:
        return float(np.std(self.overlaps, ddof=1) / math.sqrt(self.n)) if self.n > 1 else 0.0


def b_delta_from_overlaps(overlaps, ess, delta: float) -> BDeltaResult:
    overlaps = np.asarray(overlaps, dtype=np.float64)
    ess = np.asarray(ess, dtype=np.float64)
    hit = overlaps <= delta
    p = float(np.mean(hit))
    return BDeltaResult(delta=delta, frequency=p, stderr=math.sqrt(p * (1 - p) / len(hit)),
                        overlaps=overlaps, ess=ess, n_low_ess=int(np.sum(ess < MIN_ESS)))


def realization_overlaps(gammas, T: float, d: int, dt: float, dx: float, k: Kernel, n_paths: int,
                         seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized mean overlap and ESS at each gamma for one noise realization.

    All gammas reuse the same paths and noise, which makes monotonicity
    comparisons across gamma paired.
    """
    g = NoiseGrid(d, dt, dx, rng.stream_key(seed, index), T)
    e0 = build_ensemble(0.0, T, n_paths, g, k)
    ov, ess = [], []
    for gamma in gammas:
        e = e0.reweighted(gamma)
        ov.append(normalized_mean_overlap(e))
        ess.append(e.ess)
    return np.array(ov), np.array(ess)


def overlap_sweep(gammas, T: float, K: int, d: int, dt: float, dx: float, k: Kernel, n_paths: int,
                  seed: int = 0, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(overlaps, ess) arrays of shape (K, len(gammas))."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        res = list(ex.map(lambda i: realization_overlaps(gammas, T, d, dt, dx, k, n_paths, seed, i), range(K)))
    return np.stack([r[0] for r in res]), np.stack([r[1] for r in res])


def b_delta_probability(gamma: float, T: float, delta: float, K: int, N: int, d: int, dt: float,
                        dx: float, k: Kernel, seed: int = 0, workers: int = 1) -> BDeltaResult:
    """Frequency of B_delta = {normalized mean overlap <= delta} over K noise realizations."""
    if K < 100:
        raise ValueError("b_delta_probability needs at least 100 realizations")
    ov, ess = overlap_sweep([gamma], T, K, d, dt, dx, k, N, seed, workers)
    return b_delta_from_overlaps(ov[:, 0], ess[:, 0], delta)


def k_max(delta: float, eps: float, v0: float) -> int:
    return int(math.ceil(v0 * abs(math.log(eps / 2)) / delta ** 2)) + 1


@dataclass
class Cover:
    k: int
    references: list
    covered_mass: float
    masses: list = field(default_factory=list)
    k_max: int = 0
    reached: bool = False


def greedy_cover(C: np.ndarray, w: np.ndarray, delta: float, eps: float, kmax: int) -> Cover:
    """Greedy cover of the weight ``w`` by balls {j : C[i, j] >= delta}.

    Each round picks the uncovered index whose ball holds the most
    uncovered mass; ties go to the lowest index.
    """
    n = len(w)
    covered = np.zeros(n, dtype=bool)
    adj = C >= delta
    refs, masses = [], []
    mass = 0.0
    while mass < 1 - eps and len(refs) < kmax and not covered.all():
        gain = adj[:, ~covered] @ w[~covered]
        gain[covered] = -1.0
        i = int(np.argmax(gain))
        refs.append(i)
        covered |= adj[i]
        mass = math.fsum(w[covered])
        masses.append(mass)
    return Cover(k=len(refs), references=refs, covered_mass=mass, masses=masses, k_max=kmax,
                 reached=mass >= 1 - eps)


def localization_cover(e: GmcEnsemble, delta: float, eps: float) -> Cover:
    """Greedy k-path cover of the GMC mass at normalized overlap >= delta."""
    return greedy_cover(cov_matrix(e), e.weights, delta, eps, k_max(delta, eps, e.kernel.v0))


@dataclass
class FlowOverlap:
    value: float
    per_step: np.ndarray = field(repr=False)
    min_ess: float = 0.0

    @property
    def low_ess(self) -> bool:
        return self.min_ess < MIN_ESS


def flow_overlap_I(gamma: float, T: float, t: float, g: NoiseGrid, k: Kernel, flow_seed: int,
                   n_paths: int, flow_steps: int = 20, path_key: int | None = None) -> FlowOverlap:
    """I_{T,t} = (1/(tT)) int_0^t dr int_0^T ds E_T^{(x)2}[V(omega_s - omega'_s) Phi_T(eta_r)].

    Phi_T reweights the base GMC ensemble by exp(gamma H_T(omega, eta_r))
    for each replica and renormalizes, so the product measure times Phi is
    the product of the tilted measures. eta_r is realized in law as
    sqrt(1 - e^{-2r}) eta with one eta per call, and r runs over flow-step
    midpoints; ``flow_steps = 1`` with ``t = 0`` means r = 0 and eta_0 = 0.
    """
    if t < 0:
        raise ValueError("flow time must be non-negative")
    e = build_ensemble(gamma, T, n_paths, g, k, None, path_key)
    if t == 0:
        mids = np.zeros(1)
    else:
        mids = (np.arange(flow_steps) + 0.5) * (t / flow_steps)
    eta = path_increments(eta_grid(g, flow_seed), k, e.positions, e.n_steps).sum(axis=1)
    vals, ess = [], []
    for r in mids:
        b = flow_coefficients(r)[1]
        if b == 0:
            w, s = e.weights, e.ess
        else:
            w, _, _ = normalize_log_weights(e.log_weights + gamma * b * eta)
            s = 1.0 / float(np.sum(w * w))
        vals.append(mean_replica_overlap(e, w))
        ess.append(s)
    vals = np.array(vals)
    return FlowOverlap(value=float(np.mean(vals)), per_step=vals, min_ess=float(min(ess)))


def flowed_overlap_direct(gamma: float, T: float, t: float, g: NoiseGrid, k: Kernel, flow_seed: int,
                          n_paths: int, flow_steps: int = 20, path_key: int | None = None) -> float:
    """(1/t) int_0^t (1/T) int_0^T E^{(B_r)(x)2}[V(omega_s - omega'_s)] ds dr.

    The ensemble for each r is weighted by the flowed field
    e^{-r} B + sqrt(1 - e^{-2r}) eta, built point by point.
    """
    if path_key is None:
        path_key = rng.stream_key(g.seed, rng.PATHS)
    e = build_ensemble(gamma, T, n_paths, g, k, None, path_key)
    eta = ensemble_from_paths(gamma, e.positions, eta_grid(g, flow_seed), k, e.n_steps)
    mids = (np.arange(flow_steps) + 0.5) * (t / flow_steps) if t > 0 else np.zeros(1)
    vals = []
    for r in mids:
        a, b = flow_coefficients(r)
        inc = a * e.increments + b * eta.increments
        flowed = GmcEnsemble(gamma, e.dt, e.positions, inc, g, k)
        vals.append(mean_replica_overlap(flowed))
    return float(np.mean(vals))


@dataclass
class OverlapReport:
    gamma: float
    T: float
    delta: float
    mean_overlap: float
    b_delta: np.ndarray = field(repr=False)
    k: int = 0
    covered_mass: float = 0.0
    ess: float = 0.0

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "T": self.T, "delta": self.delta, "k": self.k,
                "covered_mass": self.covered_mass, "mean_overlap": self.mean_overlap, "ess": self.ess}
