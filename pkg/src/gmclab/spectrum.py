"""Dirichlet eigenvalues of -1/2 Laplacian on balls, tube decay rates, rate fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


def bessel_j(nu: float, x: float) -> float:
    """J_nu(x) by its ascending power series (x > 0, nu >= -1/2).

    Terms are generated by the ratio recurrence and summed with
    :func:`math.fsum`; adequate for x below about 25.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    half = 0.5 * x
    term = math.exp(nu * math.log(half) - math.lgamma(nu + 1.0))
    terms = [term]
    q = -half * half
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + nu))
        terms.append(term)
        if abs(term) < 1e-18 * max(abs(t) for t in terms[-8:]) and k > half:
            break
        if k > 500:
            break
    return math.fsum(terms)


def bessel_first_zero(nu: float, tol: float = 1e-12) -> float:
    """First positive zero j_{nu,1} of J_nu for nu in [-1/2, 10], by bisection."""
    if not -0.5 <= nu <= 10.0:
        raise ValueError(f"order {nu} outside supported range [-1/2, 10]")
    lo = max(1e-3, nu)
    f_lo = bessel_j(nu, lo)
    step = 0.05
    hi = lo + step
    f_hi = bessel_j(nu, hi)
    while f_lo * f_hi > 0:
        lo, f_lo = hi, f_hi
        hi += step
        if hi > nu + 20:
            raise RuntimeError(f"could not bracket the first zero of J_{nu}")
        f_hi = bessel_j(nu, hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = bessel_j(nu, mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dirichlet_eigenvalue(d: int, r: float) -> float:
    """Principal eigenvalue of -1/2 Laplacian on the ball B_r in R^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if r <= 0:
        raise ValueError("radius must be positive")
    j = bessel_first_zero(d / 2.0 - 1.0)
    return j * j / (2.0 * r * r)


def fd_dirichlet_eigenvalue(d: int, r: float, nodes: int = 501) -> float:
    """Same eigenvalue from a finite-volume discretization of the radial operator.

    Uses ``nodes`` radial nodes on [0, r] with u(r) = 0 and the
    symmetric-flux form of -(1/2) rho^{1-d} (rho^{d-1} u')'.
    """
    from scipy.linalg import eigh_tridiagonal

    n = nodes - 1
    h = r / n
    rho = np.arange(n) * h  # unknowns u_0 .. u_{n-1}; u_n = 0
    right = (rho + 0.5 * h) ** (d - 1)
    left = np.where(rho > 0, (rho - 0.5 * h) ** (d - 1), 0.0)
    lo_edge = np.maximum(rho - 0.5 * h, 0.0)
    vol = ((rho + 0.5 * h) ** d - lo_edge ** d) / d
    diag = 0.5 * (left + right) / h
    off = -0.5 * right[:-1] / h
    s = 1.0 / np.sqrt(vol)
    dd = diag * s * s
    ee = off * s[:-1] * s[1:]
    w = eigh_tridiagonal(dd, ee, select="i", select_range=(0, 0), eigvals_only=True)
    return float(w[0])


def theta_rate(d: int, r: float, gamma: float, v0: float) -> tuple[float, float]:
    """Tube decay rate ``lambda_1(sqrt2 r)/4 - gamma^2 V0 / 2`` and the weaker
    bound ``lambda_1(sqrt2 r)/4 - gamma^2 V0`` used for positivity."""
    quarter = 0.25 * dirichlet_eigenvalue(d, math.sqrt(2.0) * r)
    return quarter - 0.5 * gamma ** 2 * v0, quarter - gamma ** 2 * v0


def critical_gamma(d: int, r: float, v0: float) -> float:
    """gamma at which ``lambda_1(sqrt2 r)/4 = gamma^2 V0``."""
    return math.sqrt(0.25 * dirichlet_eigenvalue(d, math.sqrt(2.0) * r) / v0)


@dataclass
class RateFit:
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    intercept: float
    n_points: int

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def decay_rate_fit(series, z: float = 1.959963984540054) -> RateFit:
    """Weighted least-squares slope of log-value against T.

    ``series`` is a sequence of (T, log_value, stderr). Weights are
    1/stderr^2; non-finite points are dropped. If any stderr is zero the
    fit falls back to ordinary least squares with residual-based errors.
    """
    pts = [(float(T), float(y), float(s)) for T, y, s in series]
    if len(pts) < 4:
        raise ValueError("need at least 4 points")
    pts = [p for p in pts if math.isfinite(p[1]) and math.isfinite(p[2])]
    if len(pts) < 2:
        raise ValueError("fewer than 2 usable points after dropping flagged estimates")
    T = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    s = np.array([p[2] for p in pts])
    if np.ptp(T) == 0:
        raise ValueError("degenerate series: all T equal")
    if np.all(s > 0):
        w = 1.0 / s ** 2
        Tm = np.sum(w * T) / np.sum(w)
        ym = np.sum(w * y) / np.sum(w)
        sxx = np.sum(w * (T - Tm) ** 2)
        slope = np.sum(w * (T - Tm) * (y - ym)) / sxx
        se = math.sqrt(1.0 / sxx)
    else:
        Tm, ym = T.mean(), y.mean()
        sxx = np.sum((T - Tm) ** 2)
        slope = np.sum((T - Tm) * (y - ym)) / sxx
        resid = y - ym - slope * (T - Tm)
        dof = max(len(T) - 2, 1)
        se = math.sqrt(np.sum(resid ** 2) / dof / sxx)
    intercept = ym - slope * Tm
    return RateFit(float(slope), float(se), float(slope - z * se), float(slope + z * se),
                   float(intercept), len(pts))


@dataclass
class RateReport:
    d: int
    r: float
    gamma: float
    lambda1_sqrt2r: float
    v0: float
    theta: float
    theta_lower: float
    fitted_rate: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    verdict: str | None = None

    def to_dict(self):
        return asdict(self)


def rate_report(d: int, r: float, gamma: float, v0: float, fit: RateFit | None = None,
                slack: float = 0.25) -> RateReport:
    """Theoretical rates, optionally compared with an empirical slope.

    The verdict is one-sided: the fitted slope must not exceed
    ``-(1 - slack) * theta``.
    """
    theta, lower = theta_rate(d, r, gamma, v0)
    rep = RateReport(d=d, r=r, gamma=gamma, lambda1_sqrt2r=dirichlet_eigenvalue(d, math.sqrt(2) * r),
                     v0=v0, theta=theta, theta_lower=lower)
    if fit is not None:
        rep.fitted_rate, rep.ci_low, rep.ci_high = fit.slope, fit.ci_low, fit.ci_high
        rep.verdict = "PASS" if fit.slope <= -theta + slack * abs(theta) else "FAIL"
    return rep
