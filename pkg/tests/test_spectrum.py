import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from gmclab import spectrum as sp


def test_bessel_closed_form_zeros():
    assert sp.bessel_first_zero(0.5) == pytest.approx(math.pi, abs=1e-10)
    assert sp.bessel_first_zero(-0.5) == pytest.approx(math.pi / 2, abs=1e-10)


def test_bessel_j0_zero():
    assert sp.bessel_first_zero(0.0) == pytest.approx(2.404825557695773, abs=1e-9)


@pytest.mark.parametrize("nu", [-0.5, 0.0, 0.5, 1.0, 1.5, 3.0, 7.5, 10.0])
def test_bessel_series_and_zeros_against_scipy(nu):
    for x in (0.3, 2.0, 7.0):
        assert sp.bessel_j(nu, x) == pytest.approx(special.jv(nu, x), rel=1e-10, abs=1e-13)
    z = sp.bessel_first_zero(nu)
    assert abs(special.jv(nu, z)) < 1e-10


def test_bessel_out_of_range():
    with pytest.raises(ValueError):
        sp.bessel_first_zero(11.0)


def test_eigenvalue_examples():
    assert sp.dirichlet_eigenvalue(1, 1.0) == pytest.approx(math.pi ** 2 / 8, rel=1e-12)
    assert sp.dirichlet_eigenvalue(3, 1.0) == pytest.approx(math.pi ** 2 / 2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(0.01, 100))
def test_eigenvalue_scaling(d, r):
    assert sp.dirichlet_eigenvalue(d, 2 * r) == pytest.approx(sp.dirichlet_eigenvalue(d, r) / 4, rel=1e-14)
    assert sp.dirichlet_eigenvalue(d, r) > 0


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_fd_eigensolver_agrees(d):
    lam = sp.dirichlet_eigenvalue(d, 1.0)
    assert sp.fd_dirichlet_eigenvalue(d, 1.0) == pytest.approx(lam, rel=1e-4)


def test_theta_parts():
    v0 = 3.95
    th, lo = sp.theta_rate(3, 1.0, 0.0, v0)
    assert th == pytest.approx(0.25 * sp.dirichlet_eigenvalue(3, math.sqrt(2)))
    th, lo = sp.theta_rate(3, 1.0, 0.2, v0)
    assert th == 0.25 * sp.dirichlet_eigenvalue(3, math.sqrt(2)) - 0.5 * 0.04 * v0
    assert lo == 0.25 * sp.dirichlet_eigenvalue(3, math.sqrt(2)) - 0.04 * v0
    gs = np.linspace(0, 2, 21)
    assert np.all(np.diff([sp.theta_rate(3, 1.0, g, v0)[0] for g in gs]) < 0)
    assert sp.theta_rate(3, 0.05, 1.0, v0)[0] > 0


def test_critical_gamma_brackets_sign_change():
    v0 = 3.95
    gc = sp.critical_gamma(3, 1.0, v0)
    assert sp.theta_rate(3, 1.0, gc * (1 - 1e-9), v0)[1] > 0
    assert sp.theta_rate(3, 1.0, gc * (1 + 1e-9), v0)[1] < 0


def test_fit_exact_line():
    T = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    fit = sp.decay_rate_fit([(t, -2 * t + 0.3, 0.1) for t in T])
    assert fit.slope == pytest.approx(-2, abs=1e-12)
    assert fit.intercept == pytest.approx(0.3, abs=1e-12)
    assert sp.decay_rate_fit([(t, 1.5, 0.0) for t in T]).slope == pytest.approx(0.0, abs=1e-14)


def test_fit_rejections():
    with pytest.raises(ValueError):
        sp.decay_rate_fit([(1, 0, 1), (2, 0, 1), (3, 0, 1)])
    with pytest.raises(ValueError):
        sp.decay_rate_fit([(2, 0, 1), (2, 1, 1), (2, 2, 1), (2, 3, 1)])


def test_fit_drops_flagged_points():
    series = [(1, -2, 0.1), (2, -4, 0.1), (3, -6, 0.1), (4, -math.inf, math.inf), (5, -10, 0.1)]
    fit = sp.decay_rate_fit(series)
    assert fit.n_points == 4 and fit.slope == pytest.approx(-2)


def test_fit_interval_calibration():
    r = np.random.default_rng(42)
    T = np.array([2.0, 4.0, 6.0, 8.0])
    s = np.array([0.1, 0.2, 0.3, 0.4])
    hits = sum(sp.decay_rate_fit(list(zip(T, -2 * T + r.normal(0, s), s))).covers(-2) for _ in range(100))
    assert hits >= 90


def test_rate_report_verdict():
    fit = sp.decay_rate_fit([(t, -5 * t, 0.1) for t in (2, 4, 6, 8)])
    rep = sp.rate_report(3, 1.0, 0.2, 3.95, fit)
    assert rep.verdict == "PASS" and rep.fitted_rate == pytest.approx(-5)
    bad = sp.rate_report(3, 1.0, 0.2, 3.95, sp.decay_rate_fit([(t, -0.1 * t, 0.1) for t in (2, 4, 6, 8)]))
    assert bad.verdict == "FAIL"
