"""Pure-numpy kernels, selected with ``GMCLAB_DISABLE_NUMBA=1``.

Every function reproduces the counter-based streams of the numba backend
bit for bit at the integer level; floating results agree to rounding.
"""

import numpy as np

from gmclab._rngconst import (
    GOLDEN, M1, M2, S30, S27, S31, S11, INV53, A, B, C, D, P_LOW, P_HIGH,
)

_CHUNK = 1 << 20


def _mix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> S30)) * M1
        z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


def _ppf(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    lo = p < P_LOW
    hi = p > P_HIGH
    mid = ~(lo | hi)
    q = p[mid] - 0.5
    r = q * q
    out[mid] = (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q / (
        ((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    for mask, sign, tail in ((lo, 1.0, p[lo]), (hi, -1.0, 1.0 - p[hi])):
        q = np.sqrt(-2.0 * np.log(tail))
        out[mask] = sign * (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / (
            (((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    return out


def _time_hash(key, t):
    with np.errstate(over="ignore"):
        return _mix(np.uint64(key) + (np.uint64(t) + np.uint64(1)) * GOLDEN)


def _step(h, j):
    j = np.asarray(j, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix(h ^ (j * GOLDEN + M2))


def _to_normal(h):
    u = ((h >> S11).astype(np.float64) + 0.5) * INV53
    return _ppf(u)


def _kappa(table, h_tab, rho):
    u = rho / h_tab
    k = np.floor(u).astype(np.int64)
    inside = k < table.shape[0] - 1
    k = np.where(inside, k, 0)
    f = u - k
    val = table[k] * (1.0 - f) + table[np.minimum(k + 1, table.shape[0] - 1)] * f
    return np.where(inside, val, 0.0)


def normals(key, t, j):
    j = np.asarray(j, dtype=np.int64)
    h = np.full(j.shape[0], _time_hash(key, t), dtype=np.uint64)
    for c in range(j.shape[1]):
        h = _step(h, j[:, c])
    return _to_normal(h)


def brownian_paths(key, n_paths, n_steps, d, sqrt_dt, x0):
    pos = np.empty((n_paths, n_steps + 1, d))
    pos[:, 0, :] = np.asarray(x0, dtype=np.float64)
    p = np.arange(n_paths)
    for i in range(n_steps):
        hp = _step(_time_hash(key, i), p)
        for c in range(d):
            pos[:, i + 1, c] = pos[:, i, c] + sqrt_dt * _to_normal(_step(hp, c))
    return pos


def _smoothed(x, ht, dx, offsets, table, h_tab):
    n, d = x.shape
    out = np.zeros(n)
    per = max(1, _CHUNK // max(1, offsets.shape[0]))
    for s in range(0, n, per):
        xs = x[s:s + per]
        base = np.floor(xs / dx).astype(np.int64)
        cells = base[:, None, :] + offsets[None, :, :]
        diff = xs[:, None, :] - cells * dx
        r2 = np.einsum("nmc,nmc->nm", diff, diff)
        kap = np.where(r2 < 0.25, _kappa(table, h_tab, np.sqrt(r2)), 0.0)
        h = np.full(r2.shape, ht, dtype=np.uint64)
        for c in range(d):
            h = _step(h, cells[:, :, c])
        out[s:s + per] = np.sum(kap * _to_normal(h.ravel()).reshape(r2.shape), axis=1)
    return out


def increments(pos, key, t_index, dx, offsets, table, h_tab, scale):
    n = len(t_index)
    out = np.empty((pos.shape[0], n))
    for i in range(n):
        out[:, i] = scale * _smoothed(pos[:, i, :], _time_hash(key, int(t_index[i])),
                                      dx, offsets, table, h_tab)
    return out


def step_increments(x, key, t, dx, offsets, table, h_tab, scale):
    return scale * _smoothed(np.asarray(x, dtype=np.float64), _time_hash(key, t),
                             dx, offsets, table, h_tab)


def tube_exit_steps(key, n_paths, n_steps, d, sqrt_dt, r):
    out = np.full(n_paths, n_steps + 1, dtype=np.int64)
    x = np.zeros((n_paths, d))
    alive = np.arange(n_paths)
    for i in range(n_steps):
        if alive.size == 0:
            break
        hp = _step(_time_hash(key, i), alive)
        for c in range(d):
            x[alive, c] += sqrt_dt * _to_normal(_step(hp, c))
        gone = np.einsum("nc,nc->n", x[alive], x[alive]) >= r * r
        out[alive[gone]] = i + 1
        alive = alive[~gone]
    return out


def _field_sq_sum(x, w, dx, offsets, table, h_tab):
    keep = w != 0.0
    x, w = x[keep], w[keep]
    if x.shape[0] == 0:
        return 0.0
    base = np.floor(x / dx).astype(np.int64)
    cells = base[:, None, :] + offsets[None, :, :]
    diff = x[:, None, :] - cells * dx
    r2 = np.einsum("nmc,nmc->nm", diff, diff)
    vals = w[:, None] * np.where(r2 < 0.25, _kappa(table, h_tab, np.sqrt(r2)), 0.0)
    flat = cells.reshape(-1, x.shape[1])
    _, inv = np.unique(flat, axis=0, return_inverse=True)
    field = np.bincount(inv.ravel(), weights=vals.ravel())
    return float(np.dot(field, field))


def field_overlaps(pos, steps, W, dx, offsets, table, h_tab):
    cell_vol = dx ** pos.shape[2]
    return np.array([
        _field_sq_sum(pos[:, s, :], W[k], dx, offsets, table, h_tab) * cell_vol
        for k, s in enumerate(steps)
    ])


def pair_overlap(x, w, vtable, h_v):
    n = x.shape[0]
    total = 0.0
    per = max(1, _CHUNK // max(1, n))
    for s in range(0, n, per):
        diff = x[s:s + per, None, :] - x[None, :, :]
        rho = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
        V = _kappa(vtable, h_v, rho)
        total += float(w[s:s + per] @ V @ w)
    return total


def pair_gram(pos, steps, vtable, h_v, dt):
    n = pos.shape[0]
    G = np.zeros((n, n))
    for t in steps:
        x = pos[:, t, :]
        diff = x[:, None, :] - x[None, :, :]
        rho = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
        G += dt * _kappa(vtable, h_v, rho)
    return G
