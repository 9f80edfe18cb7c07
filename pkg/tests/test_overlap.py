import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmclab import gmc, overlap as ov
from gmclab.kernel import eval_V
from gmclab.noise import NoiseGrid
from gmclab.paths import Path, sample_brownian, sample_paths


def grid(seed, T=2.0):
    return NoiseGrid(1, 0.02, 1 / 16, seed, T)


def test_cov_diagonal_and_far(k1):
    p = sample_brownian(1, 2.0, 0.02, seed=1)
    assert ov.normalized_cov(p, p, k1) == pytest.approx(1.0, abs=1e-14)
    assert ov.normalized_cov(p, p.shifted([5.0]), k1) == 0.0
    with pytest.raises(ValueError):
        ov.normalized_cov(p, sample_brownian(1, 1.0, 0.02), k1)


def test_cov_brute_force(k3):
    p = sample_brownian(3, 1.0, 0.05, seed=1)
    q = sample_brownian(3, 1.0, 0.05, seed=2)
    q = q.shifted(p.positions[5] - q.positions[5])
    brute = 0.0
    for i in range(20):
        brute += 0.05 * eval_V(k3, p.positions[i] - q.positions[i])
    assert ov.normalized_cov(p, q, k3) == pytest.approx(brute / (1.0 * k3.v0), rel=1e-13)
    assert ov.normalized_cov(p, q, k3) > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_cov_symmetric_and_bounded(a, b):
    from gmclab.kernel import build_mollifier
    k = build_mollifier(2)
    p = sample_brownian(2, 1.0, 0.05, seed=a)
    q = sample_brownian(2, 1.0, 0.05, seed=b)
    c = ov.normalized_cov(p, q, k)
    assert c == ov.normalized_cov(q, p, k)
    assert 0 <= c <= 1 + 1e-12


def test_cov_matrix_matches_pairs(k1):
    e = gmc.build_ensemble(0.0, 1.0, 100, grid(1, T=1.0), k1)
    C = ov.cov_matrix(e)
    for i, j in ((0, 1), (5, 50), (7, 7)):
        p, q = Path(e.positions[i], 0.02), Path(e.positions[j], 0.02)
        assert C[i, j] == pytest.approx(ov.normalized_cov(p, q, k1), rel=1e-10)


def test_mean_overlap_in_unit_interval(k1):
    for gamma in (0.0, 1.0, 5.0, 30.0):
        e = gmc.build_ensemble(gamma, 2.0, 200, grid(3), k1)
        assert 0 <= ov.normalized_mean_overlap(e) <= 1


def test_b_delta_trivial_cases(k1):
    r = ov.b_delta_probability(0.0, 1.0, 1.0, 100, 100, 1, 0.05, 1 / 16, k1, seed=2)
    assert r.frequency == 1.0
    z = ov.b_delta_from_overlaps(r.overlaps, r.ess, 0.0)
    assert z.frequency == 0.0
    with pytest.raises(ValueError):
        ov.b_delta_probability(0.0, 1.0, 1.0, 50, 100, 1, 0.05, 1 / 16, k1)


def test_cover_identical_paths(k1):
    pos = np.repeat(sample_paths(1, 1, 1.0, 0.02, key=4), 120, axis=0)
    e = gmc.ensemble_from_paths(1.0, pos, grid(1, T=1.0), k1)
    c = ov.localization_cover(e, 0.5, 0.1)
    assert c.k == 1 and c.covered_mass == pytest.approx(1.0)


def test_cover_delocalized_reported(k1):
    e = gmc.build_ensemble(0.0, 8.0, 300, NoiseGrid(1, 0.05, 1 / 16, 2, 8.0), k1)
    c = ov.localization_cover(e, 0.9, 0.05)
    assert not c.reached
    assert c.k == c.k_max or c.covered_mass < 0.95


def exhaustive_best(C, w, delta, k):
    adj = C >= delta
    best = 0.0
    for combo in itertools.combinations(range(len(w)), k):
        best = max(best, float(w[np.any(adj[list(combo)], axis=0)].sum()))
    return best


@pytest.mark.parametrize("seed", range(4))
def test_greedy_against_exhaustive_search(seed):
    r = np.random.default_rng(seed)
    n = 12
    X = r.normal(size=(n, 2))
    C = np.exp(-np.sum((X[:, None] - X[None]) ** 2, axis=2))
    w = r.dirichlet(np.ones(n))
    cov = ov.greedy_cover(C, w, 0.5, 0.0, 4)
    for k, m in enumerate(cov.masses, start=1):
        opt = exhaustive_best(C, w, 0.5, k)
        assert m <= opt + 1e-12
        assert m >= (1 - (1 - 1 / k) ** k) * opt - 1e-12
    assert cov.masses[0] == pytest.approx(exhaustive_best(C, w, 0.5, 1))


def test_tiny_delta_disjoint_paths():
    w = np.array([0.1, 0.4, 0.2, 0.3])
    C = np.eye(4)
    cov = ov.greedy_cover(C, w, 1e-9, 0.5, 1)
    assert cov.references == [1] and cov.covered_mass == pytest.approx(0.4)


def test_greedy_ties_go_to_lowest_index():
    cov = ov.greedy_cover(np.eye(3), np.full(3, 1 / 3), 0.5, 0.0, 3)
    assert cov.references == [0, 1, 2]


def test_cover_mass_monotone(k1):
    e = gmc.build_ensemble(2.0, 2.0, 300, grid(6), k1)
    C = ov.cov_matrix(e)
    deltas = [0.8, 0.5, 0.3, 0.1, 0.01]
    first = []
    for d in deltas:
        c = ov.greedy_cover(C, e.weights, d, 0.01, 50)
        assert all(b >= a for a, b in zip(c.masses, c.masses[1:]))
        first.append(c.masses[0])
    assert all(b >= a for a, b in zip(first, first[1:]))


def test_k_max_formula():
    assert ov.k_max(0.5, 0.1, 1.35) == math.ceil(1.35 * abs(math.log(0.05)) / 0.25) + 1


def test_flow_overlap_zero_flow_is_plain_overlap(k1):
    g = grid(4)
    res = ov.flow_overlap_I(1.0, 2.0, 0.0, g, k1, 99, 200, flow_steps=1)
    e = gmc.build_ensemble(1.0, 2.0, 200, g, k1)
    assert res.value == gmc.mean_replica_overlap(e)
    assert ov.flowed_overlap_direct(1.0, 2.0, 0.0, g, k1, 99, 200) == res.value


def test_phi_self_normalized(k1):
    g = grid(4)
    e = gmc.build_ensemble(1.0, 2.0, 200, g, k1)
    from gmclab.noise import eta_grid, flow_coefficients, path_increments
    eta = path_increments(eta_grid(g, 7), k1, e.positions).sum(axis=1)
    b = flow_coefficients(0.3)[1]
    # Phi = exp(gamma b (eta_i + eta_j)) / Zhat(eta)^2 with Zhat = E_T[exp(gamma b eta)]
    z = np.sum(e.weights * np.exp(1.0 * b * eta))
    phi = np.exp(b * (eta[:, None] + eta[None, :])) / z ** 2
    assert np.sum(e.weights[:, None] * e.weights[None, :] * phi) == pytest.approx(1.0, abs=1e-12)


def test_report_dict():
    rep = ov.OverlapReport(1.0, 2.0, 0.1, 0.3, np.array([True]), k=2, covered_mass=0.9, ess=40.0)
    assert set(rep.as_dict()) == {"gamma", "T", "delta", "k", "covered_mass", "mean_overlap", "ess"}
