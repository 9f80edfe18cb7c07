"""Feynman-Kac solution of the mollified multiplicative SHE in d >= 3.

u_eps(t, x) = E_x[exp(gamma_eps H~_{eps,t}(omega) - gamma_eps^2 t V_eps(0) / 2)]
with gamma_eps = gamma eps^{(d-2)/2}, kappa_eps(x) = eps^{-d} kappa(x / eps)
and H~ reading the noise backwards in time. The solver works on its own
grid (dt = eps^2 dtau, dx = eps dx0) with the rescaled kernel and never
calls into the GMC ensemble code, so comparing it with the partition
function Z_{gamma, t/eps^2}(x/eps) tests the scaling identity in law.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from gmclab import rng
from gmclab.gmc import build_ensemble, gmc_tube_log_volume, logsumexp
from gmclab.kernel import Kernel
from gmclab.noise import NoiseGrid, path_increments
from gmclab.paths import n_steps_for, sample_paths


def scaled_kernel(k: Kernel, eps: float) -> Kernel:
    """kappa_eps(x) = eps^{-d} kappa(x / eps); V_eps(0) = eps^{-d} V(0)."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    s = eps ** (-k.d)
    return replace(k, h=k.h * eps, radii=k.radii * eps, kappa=k.kappa * s, v_radii=k.v_radii * eps,
                   v=k.v * s, v0=k.v0 * s, support=k.support * eps)


def she_gamma(gamma: float, eps: float, d: int) -> float:
    return gamma * eps ** ((d - 2) / 2)


@dataclass
class SheSolution:
    eps: float
    t: float
    x: np.ndarray
    gamma: float
    u: float
    stderr: float
    log_u: float
    ess: float

    @property
    def low_ess(self) -> bool:
        return self.ess < 30


def _check(d, eps, t, dtau):
    if d < 3:
        raise ValueError("the SHE renormalization needs d >= 3")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    n_steps_for(t / eps ** 2, dtau)


def fk_solution(eps: float, t: float, x, gamma: float, d: int, n_paths: int, seed: int,
                k: Kernel, dtau: float = 0.05, dx0: float = 0.125, path_key: int | None = None) -> SheSolution:
    """Monte Carlo Feynman-Kac estimate of u_eps(t, x) for one noise realization ``seed``."""
    _check(d, eps, t, dtau)
    x = np.zeros(d) if x is None else np.asarray(x, dtype=np.float64).reshape(d)
    ke = scaled_kernel(k, eps)
    dt = eps ** 2 * dtau
    g = NoiseGrid(d, dt, eps * dx0, seed, t)
    n = g.n_steps
    if path_key is None:
        path_key = rng.stream_key(seed, rng.PATHS)
    pos = sample_paths(n_paths, d, n * dt, dt, x, path_key)
    H = path_increments(g, ke, pos, n, reverse=True).sum(axis=1)
    ge = she_gamma(gamma, eps, d)
    if ge == 0:
        return SheSolution(eps, t, x, gamma, 1.0, 0.0, 0.0, float(n_paths))
    lw = ge * H - 0.5 * ge ** 2 * t * ke.v0
    log_u = logsumexp(lw) - math.log(n_paths)
    u_i = np.exp(lw - log_u)
    w = u_i / u_i.sum()
    u = math.exp(log_u)
    return SheSolution(eps, t, x, gamma, u, u * float(np.std(u_i, ddof=1)) / math.sqrt(n_paths), log_u,
                       1.0 / float(np.sum(w * w)))


def partition_at(eps: float, t: float, x, gamma: float, d: int, n_paths: int, seed: int, k: Kernel,
                 dtau: float = 0.05, dx0: float = 0.125) -> float:
    """log Zhat_{gamma, t/eps^2}(x/eps) from the GMC module, on the base grid."""
    T = t / eps ** 2
    g = NoiseGrid(d, dtau, dx0, seed, n_steps_for(T, dtau) * dtau)
    x0 = None if x is None else np.asarray(x, dtype=np.float64) / eps
    e = build_ensemble(gamma, g.horizon, n_paths, g, k, x0)
    return e.log_partition


def _moments(a):
    a = np.asarray(a, dtype=np.float64)
    K = len(a)
    m = float(a.mean())
    v = float(a.var(ddof=1))
    m4 = float(np.mean((a - m) ** 4))
    return m, v, math.sqrt(v / K), math.sqrt(max(m4 - v * v, 0.0) / K)


@dataclass
class ScalingReport:
    eps: float
    t: float
    gamma: float
    mean_she: float
    mean_gmc: float
    var_she: float
    var_gmc: float
    z_mean: float
    z_var: float
    log_u: np.ndarray = field(repr=False)
    log_Z: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return abs(self.z_mean) < 3 and abs(self.z_var) < 3


def _z(a, b, sa, sb):
    s = math.hypot(sa, sb)
    return 0.0 if s == 0 else (a - b) / s


def scaling_identity_check(eps: float, t: float, x, gamma: float, d: int, K: int, n_paths: int,
                           k: Kernel, seed: int = 0, dtau: float = 0.05, dx0: float = 0.125,
                           workers: int = 1) -> ScalingReport:
    """Compare moments of log u_eps(t, x) and log Z_{gamma, t/eps^2}(x/eps) over K realizations.

    The two sides use independent seed families.
    """
    _check(d, eps, t, dtau)

    def she_side(i):
        return fk_solution(eps, t, x, gamma, d, n_paths, rng.stream_key(seed, 11, i), k, dtau, dx0).log_u

    def gmc_side(i):
        return partition_at(eps, t, x, gamma, d, n_paths, rng.stream_key(seed, 12, i), k, dtau, dx0)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        lu = np.array(list(ex.map(she_side, range(K))))
        lz = np.array(list(ex.map(gmc_side, range(K))))
    m1, v1, sm1, sv1 = _moments(lu)
    m2, v2, sm2, sv2 = _moments(lz)
    return ScalingReport(eps, t, gamma, m1, m2, v1, v2, _z(m1, m2, sm1, sm2), _z(v1, v2, sv1, sv2), lu, lz)


def she_tube_log_volume(eps_list, t: float, r: float, gamma: float, d: int, n_particles: int,
                        k: Kernel, seed: int = 0, dtau: float = 0.05, dx0: float = 0.125) -> np.ndarray:
    """eps^2 log Mbar_{gamma, eps, t}[rescaled tube] for each eps.

    By the scaling identity this is eps^2 log Mhat_{t/eps^2}[N_r(0)], which
    should approach a value <= -Theta t as eps decreases.
    """
    out = []
    for eps in eps_list:
        T = n_steps_for(t / eps ** 2, dtau) * dtau
        g = NoiseGrid(d, dtau, dx0, rng.stream_key(seed, 13), T)
        out.append(eps ** 2 * gmc_tube_log_volume(gamma, [T], n_particles, g, k, r)[0])
    return np.array(out)
