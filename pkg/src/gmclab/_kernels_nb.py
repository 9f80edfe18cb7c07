"""Numba kernels. Signatures mirror :mod:`gmclab._kernels_np` exactly."""

import math

import numba as nb
import numpy as np

from gmclab._rngconst import (
    GOLDEN, M1, M2, S30, S27, S31, S11, INV53, A, B, C, D, P_LOW, P_HIGH,
)

_jit = nb.njit(cache=True, nogil=True)
_inline = nb.njit(cache=True, nogil=True, inline="always")

a1, a2, a3, a4, a5, a6 = A
b1, b2, b3, b4, b5 = B
c1, c2, c3, c4, c5, c6 = C
d1, d2, d3, d4 = D


@_inline
def _mix(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@_inline
def _ppf(p):
    if p < P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    if p > P_HIGH:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / (
        ((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0)


@_inline
def _time_hash(key, t):
    return _mix(key + (np.uint64(t) + np.uint64(1)) * GOLDEN)


@_inline
def _step(h, j):
    return _mix(h ^ (np.uint64(j) * GOLDEN + M2))


@_inline
def _to_normal(h):
    u = (np.float64(h >> S11) + 0.5) * INV53
    return _ppf(u)


@_inline
def _kappa(table, inv_h, rho):
    u = rho * inv_h
    k = int(u)
    if k >= table.shape[0] - 1:
        return 0.0
    f = u - k
    return table[k] * (1.0 - f) + table[k + 1] * f


@_jit
def normals(key, t, j):
    """Standard normals for cells ``j`` (shape (M, c), int64) at time index ``t``."""
    out = np.empty(j.shape[0])
    ht = _time_hash(np.uint64(key), t)
    for m in range(j.shape[0]):
        h = ht
        for c in range(j.shape[1]):
            h = _step(h, j[m, c])
        out[m] = _to_normal(h)
    return out


@_jit
def brownian_paths(key, n_paths, n_steps, d, sqrt_dt, x0):
    """Positions (n_paths, n_steps + 1, d); the increment of path p, step i,
    coordinate c is ``sqrt_dt * normal(key, i, (p, c))``."""
    key = np.uint64(key)
    pos = np.empty((n_paths, n_steps + 1, d))
    for p in range(n_paths):
        for c in range(d):
            pos[p, 0, c] = x0[c]
        for i in range(n_steps):
            ht = _time_hash(key, i)
            hp = _step(ht, p)
            for c in range(d):
                pos[p, i + 1, c] = pos[p, i, c] + sqrt_dt * _to_normal(_step(hp, c))
    return pos


@_inline
def _smoothed(x, ht, dx, inv_dx, offsets, table, inv_h, base, cell):
    d = x.shape[0]
    for c in range(d):
        base[c] = math.floor(x[c] * inv_dx)
    acc = 0.0
    for m in range(offsets.shape[0]):
        r2 = 0.0
        for c in range(d):
            cell[c] = base[c] + offsets[m, c]
            diff = x[c] - cell[c] * dx
            r2 += diff * diff
        if r2 >= 0.25:
            continue
        kap = _kappa(table, inv_h, math.sqrt(r2))
        if kap == 0.0:
            continue
        h = ht
        for c in range(d):
            h = _step(h, cell[c])
        acc += kap * _to_normal(h)
    return acc


@_jit
def increments(pos, key, t_index, dx, offsets, table, h_tab, scale):
    """``scale * sum_j kappa(x - y_j) Z(t, j)`` at the left endpoint of every step.

    ``pos`` has shape (N, n + 1, d); ``t_index[i]`` is the noise time index
    read by step ``i``. Returns shape (N, n).
    """
    key = np.uint64(key)
    n_paths = pos.shape[0]
    n = t_index.shape[0]
    d = pos.shape[2]
    inv_dx = 1.0 / dx
    inv_h = 1.0 / h_tab
    out = np.empty((n_paths, n))
    base = np.empty(d, np.int64)
    cell = np.empty(d, np.int64)
    for i in range(n):
        ht = _time_hash(key, t_index[i])
        for p in range(n_paths):
            out[p, i] = scale * _smoothed(pos[p, i], ht, dx, inv_dx, offsets,
                                          table, inv_h, base, cell)
    return out


@_jit
def step_increments(x, key, t, dx, offsets, table, h_tab, scale):
    """Single-time version of :func:`increments` for points ``x`` (N, d)."""
    key = np.uint64(key)
    d = x.shape[1]
    out = np.empty(x.shape[0])
    base = np.empty(d, np.int64)
    cell = np.empty(d, np.int64)
    ht = _time_hash(key, t)
    inv_dx = 1.0 / dx
    inv_h = 1.0 / h_tab
    for p in range(x.shape[0]):
        out[p] = scale * _smoothed(x[p], ht, dx, inv_dx, offsets, table, inv_h,
                                   base, cell)
    return out


@_jit
def tube_exit_steps(key, n_paths, n_steps, d, sqrt_dt, r):
    """First grid index at which |x| >= r for the paths of :func:`brownian_paths`
    started at the origin; ``n_steps + 1`` when the path never leaves."""
    key = np.uint64(key)
    r2 = r * r
    out = np.full(n_paths, n_steps + 1, np.int64)
    x = np.zeros(d)
    for p in range(n_paths):
        for c in range(d):
            x[c] = 0.0
        for i in range(n_steps):
            hp = _step(_time_hash(key, i), p)
            s = 0.0
            for c in range(d):
                x[c] += sqrt_dt * _to_normal(_step(hp, c))
                s += x[c] * x[c]
            if s >= r2:
                out[p] = i + 1
                break
    return out


@_jit
def _field_flat(x, w, dx, offsets, table, h_tab):
    """Weighted mollified field sum_i w_i kappa(y - x_i) on cells y.

    Returns (keys, values, box) with one entry per (point, cell)
    contribution; ``keys`` linearize cell indices inside the bounding box
    of ``box`` cells.
    """
    n, d = x.shape
    inv_dx = 1.0 / dx
    inv_h = 1.0 / h_tab
    lo = np.empty(d, np.int64)
    ext = np.empty(d, np.int64)
    margin = 1
    for o in range(offsets.shape[0]):
        for c in range(d):
            if abs(offsets[o, c]) + 1 > margin:
                margin = abs(offsets[o, c]) + 1
    for c in range(d):
        mn = x[0, c]
        mx = x[0, c]
        for p in range(n):
            if x[p, c] < mn:
                mn = x[p, c]
            if x[p, c] > mx:
                mx = x[p, c]
        lo[c] = math.floor(mn * inv_dx) - margin
        ext[c] = math.floor(mx * inv_dx) + margin - lo[c] + 1
    m = offsets.shape[0]
    keys = np.empty(n * m, np.int64)
    vals = np.empty(n * m)
    base = np.empty(d, np.int64)
    cnt = 0
    for p in range(n):
        if w[p] == 0.0:
            continue
        for c in range(d):
            base[c] = math.floor(x[p, c] * inv_dx)
        for o in range(m):
            r2 = 0.0
            lin = 0
            for c in range(d):
                cc = base[c] + offsets[o, c]
                diff = x[p, c] - cc * dx
                r2 += diff * diff
                lin = lin * ext[c] + (cc - lo[c])
            if r2 >= 0.25:
                continue
            kap = _kappa(table, inv_h, math.sqrt(r2))
            if kap == 0.0:
                continue
            keys[cnt] = lin
            vals[cnt] = w[p] * kap
            cnt += 1
    box = 1
    for c in range(d):
        box *= ext[c]
    return keys[:cnt], vals[:cnt], box


@_jit
def _sum_squares_by_key(keys, vals):
    if keys.shape[0] == 0:
        return 0.0
    order = np.argsort(keys, kind="mergesort")
    total = 0.0
    cur = keys[order[0]]
    acc = 0.0
    for q in range(order.shape[0]):
        k = keys[order[q]]
        if k != cur:
            total += acc * acc
            acc = 0.0
            cur = k
        acc += vals[order[q]]
    return total + acc * acc


@_jit
def field_overlaps(pos, steps, W, dx, offsets, table, h_tab):
    """``sum_y (sum_i W[s, i] kappa(y - x_i(steps[s])))**2 * dx**d`` per listed step.

    This equals the replica overlap sum_ij w_i w_j V_h(x_i, x_j) with the
    cell-discretized covariance V_h of the noise model.
    """
    d = pos.shape[2]
    cell_vol = dx ** d
    out = np.empty(steps.shape[0])
    for s in range(steps.shape[0]):
        keys, vals, box = _field_flat(pos[:, steps[s], :], W[s], dx, offsets, table, h_tab)
        if box <= 8 * keys.shape[0] + 4096:
            acc = np.zeros(box)
            for q in range(keys.shape[0]):
                acc[keys[q]] += vals[q]
            tot = 0.0
            for q in range(box):
                tot += acc[q] * acc[q]
            out[s] = tot * cell_vol
        else:
            out[s] = _sum_squares_by_key(keys, vals) * cell_vol
    return out


@_jit
def pair_overlap(x, w, vtable, h_v):
    """Exact ``sum_ij w_i w_j V(x_i - x_j)`` from the radial V table."""
    n, d = x.shape
    inv_h = 1.0 / h_v
    diag = 0.0
    for i in range(n):
        diag += w[i] * w[i]
    total = diag * vtable[0]
    for i in range(n):
        if w[i] == 0.0:
            continue
        acc = 0.0
        for j in range(i + 1, n):
            r2 = 0.0
            for c in range(d):
                diff = x[i, c] - x[j, c]
                r2 += diff * diff
            if r2 >= 1.0:
                continue
            acc += w[j] * _kappa(vtable, inv_h, math.sqrt(r2))
        total += 2.0 * w[i] * acc
    return total


@_jit
def pair_gram(pos, steps, vtable, h_v, dt):
    """Matrix ``G_ij = dt * sum_s V(x_i(s) - x_j(s))`` over the listed steps."""
    n = pos.shape[0]
    d = pos.shape[2]
    inv_h = 1.0 / h_v
    G = np.zeros((n, n))
    for s in range(steps.shape[0]):
        t = steps[s]
        for i in range(n):
            G[i, i] += dt * vtable[0]
            for j in range(i + 1, n):
                r2 = 0.0
                for c in range(d):
                    diff = pos[i, t, c] - pos[j, t, c]
                    r2 += diff * diff
                if r2 >= 1.0:
                    continue
                v = dt * _kappa(vtable, inv_h, math.sqrt(r2))
                G[i, j] += v
                G[j, i] += v
    return G
