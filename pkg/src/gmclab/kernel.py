"""Mollifier kappa and its self-convolution V = kappa * kappa.

kappa is the radial bump ``c_d exp(-1 / (1 - (2|x|)^2))`` on the ball of
radius 1/2, normalized to unit mass. Both kappa and V are stored as radial
tables and evaluated by linear interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SUPPORT = 0.5
MAX_SPACING = 1.0 / 16.0
# sub-grid refinement for the trapezoid quadratures (mass, V)
_REFINE = 8
_ANGLES = 257


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def bump_profile(rho):
    """Unnormalized radial bump, zero for rho >= 1/2."""
    rho = np.asarray(rho, dtype=np.float64)
    s = 1.0 - (2.0 * rho) ** 2
    out = np.zeros_like(rho)
    inside = s > 0
    out[inside] = np.exp(-1.0 / s[inside])
    return out


def _trapz(y, x, axis=-1):
    return np.trapezoid(y, x, axis=axis)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Immutable mollifier tables for dimension ``d``."""

    d: int
    h: float
    radii: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    v_radii: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    v0: float = 0.0
    norm_const: float = 1.0
    support: float = SUPPORT

    @property
    def kappa0(self) -> float:
        return float(self.kappa[0])


_DENSE = 1 << 16


def _mass_const(d: int, h: float) -> float:
    rho = np.linspace(0.0, SUPPORT, _DENSE + 1)
    mass = sphere_area(d) * _trapz(bump_profile(rho) * rho ** (d - 1), rho)
    return 1.0 / mass


def _convolution_table(d: int, c: float, h: float, v_radii: np.ndarray) -> np.ndarray:
    """V(s) = int kappa(y) kappa(s e_1 - y) dy at every radius s."""
    n_rho = int(round(SUPPORT / h)) * _REFINE + 1
    rho = np.linspace(0.0, SUPPORT, n_rho)
    k_rho = c * bump_profile(rho)
    out = np.empty(v_radii.shape[0])
    if d == 1:
        y = np.linspace(-SUPPORT, SUPPORT, 2 * n_rho - 1)
        ky = c * bump_profile(np.abs(y))
        for m, s in enumerate(v_radii):
            out[m] = _trapz(ky * c * bump_profile(np.abs(s - y)), y)
        return out
    phi = np.linspace(0.0, math.pi, _ANGLES)
    weight = np.sin(phi) ** (d - 2)
    area = sphere_area(d - 1)
    cos_phi = np.cos(phi)
    for m, s in enumerate(v_radii):
        dist = np.sqrt(np.maximum(s * s + rho[:, None] ** 2 - 2.0 * s * rho[:, None] * cos_phi, 0.0))
        inner = _trapz(c * bump_profile(dist) * weight, phi, axis=1)
        out[m] = area * _trapz(k_rho * rho ** (d - 1) * inner, rho)
    return out


@lru_cache(maxsize=32)
def build_mollifier(d: int, h: float = 1.0 / 128.0) -> Kernel:
    """Build the kernel tables in dimension ``d`` with radial spacing ``h``."""
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    if h > MAX_SPACING:
        raise ValueError(
            f"grid spacing {h} is too coarse: the bump on radius 1/2 needs "
            f"spacing <= 1/16 to be resolved")
    d = int(d)
    n = int(math.ceil(SUPPORT / h))
    h = SUPPORT / n
    c = _mass_const(d, h)
    radii = np.linspace(0.0, SUPPORT, n + 1)
    kappa = c * bump_profile(radii)
    kappa[-1] = 0.0
    v_radii = np.linspace(0.0, 2 * SUPPORT, 2 * n + 1)
    v = _convolution_table(d, c, h, v_radii)
    # V(0) is int kappa^2; use the same radial quadrature as the mass
    rho = np.linspace(0.0, SUPPORT, _DENSE + 1)
    v0 = sphere_area(d) * _trapz((c * bump_profile(rho)) ** 2 * rho ** (d - 1), rho)
    v[0] = v0
    v[-1] = 0.0
    v = np.minimum(np.maximum(v, 0.0), v0)
    for arr in (radii, kappa, v_radii, v):
        arr.setflags(write=False)
    return Kernel(d=d, h=h, radii=radii, kappa=kappa, v_radii=v_radii, v=v,
                  v0=float(v0), norm_const=float(c))


def _radius(x, d):
    x = np.asarray(x, dtype=np.float64)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return np.abs(x)
    return np.sqrt(np.sum(x * x, axis=-1))


def _interp(table, h, rho):
    u = np.asarray(rho, dtype=np.float64) / h
    k = np.floor(u).astype(np.int64)
    inside = k < table.shape[0] - 1
    kk = np.where(inside, k, 0)
    f = u - kk
    lo = table[kk]
    # this form cannot overshoot the larger node on a monotone table
    val = lo + (table[np.minimum(kk + 1, table.shape[0] - 1)] - lo) * f
    return np.where(inside, val, 0.0)


def eval_mollifier(k: Kernel, x):
    """kappa(x); ``x`` is a point or an array of points along the last axis."""
    out = _interp(k.kappa, k.h, _radius(x, k.d))
    return float(out) if np.ndim(out) == 0 else out


def eval_V(k: Kernel, x):
    """V(x) = (kappa * kappa)(x), zero for |x| >= 1."""
    out = _interp(k.v, k.h, _radius(x, k.d))
    return float(out) if np.ndim(out) == 0 else out


def dump_v_table(k: Kernel, path) -> None:
    """Write the V table as CSV with columns (radius, V)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["radius", "V"])
        for r, v in zip(k.v_radii, k.v):
            w.writerow([repr(float(r)), repr(float(v))])
