import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmclab import gmc, rng
from gmclab.kernel import eval_V
from gmclab.noise import NoiseGrid, path_increments
from gmclab.paths import Path, sample_paths, tube_survival


def grid(seed, T=2.0, d=1, dt=0.02):
    return NoiseGrid(d, dt, 1 / 16 if d == 1 else 1 / 8, seed, T)


def test_hamiltonian_zero_noise(k1):
    g = NoiseGrid(1, 0.02, 1 / 16, 1, 1.0, amplitude=0.0)
    p = Path(np.zeros((51, 1)), 0.02)
    assert gmc.hamiltonian(p, g, k1) == 0.0


def test_hamiltonian_rejects_mismatch(k1):
    g = grid(1, T=1.0)
    with pytest.raises(ValueError):
        gmc.hamiltonian(Path(np.zeros((11, 1)), 0.1), g, k1)
    with pytest.raises(ValueError):
        gmc.hamiltonian(Path(np.zeros((101, 1)), 0.02), g, k1, T=2.0)


def test_hamiltonian_is_left_endpoint_sum(k1):
    g = grid(3)
    p = Path(sample_paths(1, 1, 2.0, 0.02, key=5)[0], 0.02)
    from gmclab.noise import smoothed_noise
    direct = sum(g.dt * smoothed_noise(g, k1, i, p.positions[i]) for i in range(p.n_steps))
    assert gmc.hamiltonian(p, g, k1) == pytest.approx(direct, rel=1e-12)
    # the value at the right endpoint is never read
    q = p.positions.copy()
    q[-1] += 10.0
    assert gmc.hamiltonian(Path(q, 0.02), g, k1) == gmc.hamiltonian(p, g, k1)


def test_hamiltonian_variance_and_covariance(k1):
    T, dt, n = 1.0, 0.02, 4000
    a = np.zeros((1, 51, 1))
    b = np.full((1, 51, 1), 0.3)
    Ha, Hb = [], []
    for s in range(n):
        g = NoiseGrid(1, dt, 1 / 16, rng.stream_key(9, s), T)
        pos = np.concatenate([a, b])
        H = path_increments(g, k1, pos).sum(axis=1)
        Ha.append(H[0])
        Hb.append(H[1])
    Ha, Hb = np.array(Ha), np.array(Hb)
    assert Ha.var() == pytest.approx(T * k1.v0, rel=0.07)
    assert np.cov(Ha, Hb)[0, 1] == pytest.approx(T * eval_V(k1, 0.3), rel=0.1)


def test_ensemble_requires_enough_paths(k1):
    with pytest.raises(ValueError):
        gmc.build_ensemble(0.5, 1.0, 50, grid(1), k1)


def test_zero_coupling_is_wiener(k1):
    e = gmc.build_ensemble(0.0, 2.0, 300, grid(1), k1)
    assert np.all(e.weights == 1 / 300)
    assert e.partition == 1.0 and e.log_Z == 0.0
    assert e.ess == 300


def test_weight_invariants(k1):
    e = gmc.build_ensemble(1.5, 2.0, 400, grid(2), k1)
    assert math.fsum(e.weights) == pytest.approx(1.0, abs=1e-14)
    assert np.all(e.weights >= 0)
    assert 1 <= e.ess <= e.N


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-1e3, 1e3))
def test_weights_invariant_under_constant_shift(lw, c):
    w1, m1, _ = gmc.normalize_log_weights(np.array(lw))
    w2, m2, _ = gmc.normalize_log_weights(np.array(lw) + c)
    assert np.allclose(w1, w2, rtol=1e-10, atol=1e-300)
    assert m2 - m1 == pytest.approx(c, abs=1e-9 * max(1.0, abs(c)))


def test_normalization_survives_huge_log_weights():
    w, lm, ess = gmc.normalize_log_weights(np.array([1e4, 1e4 - 1.0, -1e4]))
    assert math.isfinite(lm) and w[0] > w[1] > 0 and w[2] == 0


def test_partition_has_unit_mean(k1):
    vals = []
    for s in range(200):
        e = gmc.build_ensemble(0.3, 1.0, 100, grid(rng.stream_key(4, s), T=1.0), k1)
        vals.append(e.partition)
    vals = np.array(vals)
    assert abs(vals.mean() - 1) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_log_partition_stderr_bootstrap(k1):
    g = grid(6)
    e = gmc.build_ensemble(0.3, 2.0, 2000, g, k1)
    big = gmc.build_ensemble(0.3, 2.0, 4000, g, k1)
    # bootstrap oracle on the same noise realization
    r = np.random.default_rng(0)
    u = np.exp(e.log_weights - e.log_weights.max())
    boot = [math.log(np.mean(u[r.integers(0, e.N, e.N)])) for _ in range(400)]
    assert np.std(boot) == pytest.approx(e.log_partition_stderr, rel=0.25)
    assert abs(big.log_partition - e.log_partition) < e.log_partition_stderr


def test_probability_basics(k1):
    e = gmc.build_ensemble(1.0, 2.0, 500, grid(7), k1)
    assert gmc.gmc_probability(e, np.ones(e.N, bool)).value == pytest.approx(1.0, abs=1e-14)
    tube = gmc.tube_event(1.0)
    p = gmc.gmc_probability(e, tube).value
    q = gmc.gmc_probability(e, lambda pos: ~tube(pos)).value
    assert p + q == pytest.approx(1.0, abs=1e-14)
    empty = gmc.gmc_probability(e, np.zeros(e.N, bool))
    assert empty.empty and empty.value == 0.0
    hot = gmc.build_ensemble(6.0, 2.0, 500, grid(7), k1)
    assert gmc.gmc_probability(hot, tube).low_confidence


def test_probability_at_zero_coupling_is_wiener(k1):
    e = gmc.build_ensemble(0.0, 2.0, 5000, grid(8), k1)
    p = gmc.gmc_probability(e, gmc.tube_event(1.0))
    w = tube_survival(1, 1.0, 2.0, 0.02, 5000, seed=123)
    assert abs(p.value - w.prob) < 3 * math.hypot(p.stderr, w.stderr)


def test_endpoint_overlap_cases(k1):
    g = grid(2, T=4.0)
    pos = np.repeat(sample_paths(1, 1, 4.0, 0.02, key=1), 150, axis=0)
    same = gmc.ensemble_from_paths(0.7, pos, g, k1)
    assert gmc.endpoint_overlap(same, 3.0) == pytest.approx(k1.v0, rel=1e-12)
    e = gmc.build_ensemble(0.0, 4.0, 300, grid(2, T=4.0, d=3, dt=0.05), gmc_k3())
    assert gmc.endpoint_overlap(e, 4.0) < 0.05 * e.kernel.v0


def gmc_k3():
    from gmclab.kernel import build_mollifier
    return build_mollifier(3)


def test_endpoint_overlap_exact_vs_pairs(k1):
    e = gmc.build_ensemble(1.0, 1.0, 100, grid(5, T=1.0), k1)
    sub = gmc.EndpointMeasure(1.0, e.positions[:50, -1], e.weights[:50] / e.weights[:50].sum())
    exact = gmc.pair_overlap(sub.points, sub.weights, k1)
    brute = sum(sub.weights[i] * sub.weights[j] * eval_V(k1, sub.points[i] - sub.points[j])
                for i in range(50) for j in range(50))
    assert exact == pytest.approx(float(brute), rel=1e-12)
    m, se = gmc.sampled_pair_overlap(sub.points, sub.weights, k1, 100_000, 11)
    assert abs(m - exact) < 3 * se


def test_field_route_matches_exact_overlap(k1, k3):
    for k, T, dt in ((k1, 2.0, 0.02), (k3, 1.0, 0.05)):
        g = NoiseGrid(k.d, dt, 1 / 16 if k.d == 1 else 1 / 8, 3, T)
        e = gmc.build_ensemble(1.0, T, 200, g, k)
        m = e.n_steps
        a = gmc.field_overlaps(e.positions, [m // 2, m], e.weights, g, k)
        b = [gmc.pair_overlap(e.positions[:, s], e.weights, k) for s in (m // 2, m)]
        assert np.allclose(a, b, rtol=2e-3)


def test_energy_functional(k1, k3):
    one = gmc.EndpointMeasure(0.0, np.zeros((1, 1)), np.ones(1))
    assert gmc.energy_F(0.8, one, k1) == pytest.approx(0.32 * k1.v0)
    r = np.random.default_rng(1)
    pts = r.normal(scale=0.4, size=(40, 3))
    w = r.dirichlet(np.ones(40))
    m = gmc.EndpointMeasure(0.0, pts, w)
    moved = gmc.EndpointMeasure(0.0, pts + np.array([3.0, -1.0, 7.5]), w)
    assert gmc.energy_F(1.3, m, k3) == pytest.approx(gmc.energy_F(1.3, moved, k3), rel=1e-12)
    e = gmc.build_ensemble(0.9, 2.0, 200, grid(1), k1)
    mt = gmc.endpoint_measure(e, 2.0)
    assert gmc.energy_F(0.9, mt, k1) == pytest.approx(0.5 * 0.81 * gmc.endpoint_overlap(e, 2.0), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 3), st.integers(0, 10 ** 6))
def test_energy_bounded(n, gamma, seed):
    from gmclab.kernel import build_mollifier
    k = build_mollifier(2)
    r = np.random.default_rng(seed)
    m = gmc.EndpointMeasure(0.0, r.normal(scale=0.3, size=(n, 2)), r.dirichlet(np.ones(n)))
    assert gmc.energy_F(gamma, m, k) <= 0.5 * gamma ** 2 * k.v0 * (1 + 1e-12)


def test_free_energy_zero_coupling(k1):
    assert gmc.free_energy(0.0, 2.0, grid(1), k1, 200) == 0.0


def test_free_energy_convex_in_gamma(k1):
    e = gmc.build_ensemble(0.0, 2.0, 500, grid(3), k1)
    gs = np.linspace(0, 3, 31)
    f = np.array([gmc.free_energy_of(e, x) for x in gs])
    assert np.all(np.diff(f, 2) >= -1e-12)


@pytest.mark.slow
def test_free_energy_weak_disorder_d3(k3):
    gamma, T = 0.3, 8.0
    vals = [gmc.free_energy(gamma, T, NoiseGrid(3, 0.05, 1 / 8, rng.stream_key(2, s), T), k3, 1000)
            for s in range(24)]
    assert np.mean(vals) == pytest.approx(0.5 * gamma ** 2 * k3.v0, rel=0.1)


def test_ito_zero_coupling(k1):
    c = gmc.ito_decomposition_check(0.0, 1.0, grid(1, T=1.0), k1, 200)
    assert c.residual == 0.0


def ito_oracle(e, k):
    """Step-by-step loops: telescoped log Zhat and the martingale/drift split."""
    gamma, dt, v0 = e.gamma, e.dt, k.v0
    N, n = e.N, e.n_steps
    logw = np.zeros(N)
    log_z = 0.0
    mart = drift = 0.0
    for m in range(n):
        w = np.exp(logw - logw.max())
        w /= w.sum()
        dH = e.increments[:, m]
        log_z += math.log(np.sum(w * np.exp(gamma * dH - 0.5 * gamma ** 2 * dt * v0)))
        mart += gamma * np.sum(w * dH)
        x = e.positions[:, m]
        F = sum(w[i] * w[j] * eval_V(k, x[i] - x[j]) for i in range(N) for j in range(N))
        drift += dt * 0.5 * gamma ** 2 * F
        logw += gamma * dH
    T = n * dt
    return log_z / T, (mart - drift) / T


def test_ito_matches_telescoping_oracle(k1):
    g = NoiseGrid(1, 0.02, 1 / 16, 5, 0.2)
    e = gmc.build_ensemble(0.8, 0.2, 100, g, k1)
    c = gmc.ito_decomposition(e)
    A, B = ito_oracle(e, k1)
    assert c.A == pytest.approx(A, abs=1e-12)
    assert c.B == pytest.approx(B, rel=1e-10)


def test_ito_residual_small_on_average(k1):
    # one realization's residual is a zero-mean fluctuation of order sqrt(dt)
    rel = [gmc.ito_decomposition_check(0.3, 1.0, grid(rng.stream_key(4, s), T=1.0), k1, 500).relative
           for s in range(10)]
    assert np.mean(rel) < 0.05


def test_thickness_and_prefix(k1):
    e = gmc.build_ensemble(0.5, 2.0, 300, grid(2), k1)
    pre = e.prefix(1.0)
    direct = gmc.ensemble_from_paths(0.5, e.positions[:, :51], e.noise, k1)
    assert np.allclose(pre.weights, direct.weights, rtol=1e-12)
    assert gmc.thickness_series(e, [1.0, 2.0])[1] == pytest.approx(gmc.thickness(e))
    W = e.prefix_weights()
    assert np.allclose(W[50], pre.weights, rtol=1e-12)
    assert np.all(W[0] == 1 / 300)


def test_concentration_check_bound():
    vals = np.random.default_rng(0).normal(scale=0.5, size=300)
    c = gmc.concentration_check(vals, 0.5, 4.0, 1.35)
    assert c.bound == pytest.approx(2 * math.exp(-2))
    assert c.passed


def test_smc_zero_coupling(k1):
    g = grid(1, T=4.0)
    free = gmc.tube_mass_smc(0.0, [1.0, 2.0], 1000, g, k1, None)
    assert np.all(free == 0.0)
    lv = gmc.gmc_tube_log_volume(0.0, [1.0, 2.0, 3.0, 4.0], 20_000, g, k1, 1.0)
    ref = tube_survival(1, 1.0, 4.0, 0.02, 100_000, seed=5)
    assert lv[-1] == pytest.approx(ref.log_prob, abs=4 * ref.log_stderr + 0.05)


def test_smc_partition_unbiased(k1):
    vals = [math.exp(gmc.tube_mass_smc(0.5, [2.0], 300, grid(rng.stream_key(8, s)), k1, None)[0])
            for s in range(200)]
    vals = np.array(vals)
    assert abs(vals.mean() - 1) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_smc_kills_everything_in_tiny_tube(k1):
    lv = gmc.tube_mass_smc(0.0, [1.0], 100, grid(1), k1, 1e-6)
    assert lv[0] == -math.inf
