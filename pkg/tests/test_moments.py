"""Moment hierarchies: integration, stationary routes, limit checks."""

from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from freejacobi.combinatorics import catalan
from freejacobi.moments import (
    DerivPoly,
    IntegrationError,
    JacobiParams,
    MomentVector,
    complement_moments,
    deriv_poly,
    integrate_moments,
    integrate_w_moments,
    large_k_limit_check,
    moments_at,
    mp_limit_check,
    stationary_cdf,
    stationary_density,
    stationary_moments_derivative_poly,
    stationary_moments_catalan,
    tk_trace,
)


def test_params_validation():
    with pytest.raises(ValueError):
        JacobiParams(theta=Fraction(3, 2), lam=1, n_max=2, init=(1, 1, 1))
    with pytest.raises(ValueError):
        JacobiParams(theta=Fraction(1, 2), lam=1, n_max=2, init=(0.5, 1, 1))
    with pytest.raises(ValueError):
        JacobiParams(theta=Fraction(1, 2), lam=1, n_max=2, init=(1, 1))
    p = JacobiParams.for_k(3, 2)
    assert p.theta == Fraction(1, 3) and p.lam == 1 and p.k == 3


def test_first_moment_closed_form():
    # The n=1 equation is linear: m_1(t) = theta + (1-theta) e^{-t}.
    for k in (2, 3, 5):
        params = JacobiParams.for_k(k, 3)
        vec = moments_at(params, [0.25, 1.0, 3.0])
        for t in (0.25, 1.0, 3.0):
            want = 1 / k + (1 - 1 / k) * math.exp(-t)
            assert abs(vec.at(t)[1] - want) < 1e-11


def test_moment_values_stay_in_unit_interval():
    vec = integrate_moments(JacobiParams.for_k(3, 8), 4.0)
    assert vec.range_violation() < 1e-12


def test_rescaled_radial_hierarchy_residual():
    res = integrate_w_moments(2, 4, 2.0)
    assert res.rescaled_residual < 1e-9
    # s_1(t) = k(1 + (k-1) e^{-t}) exactly.
    k = 2
    for i, t in enumerate(res.s.t_grid):
        want = k * (1 + (k - 1) * math.exp(-t))
        assert abs(res.s.values[i, 1] - want) < 1e-9


def test_radial_and_compressed_routes_coincide():
    k, n_max = 3, 6
    t_end = 2.0
    w = integrate_w_moments(k, n_max, t_end)
    m = integrate_moments(JacobiParams.for_k(k, n_max), t_end)
    assert np.max(np.abs(w.r.values - m.values)) < 1e-9


def test_stationary_catalan_frozen():
    # k=2 gives the arcsine moments binom(2n,n)/4^n.
    stat2 = stationary_moments_catalan(2, 6)
    for n in range(7):
        assert stat2[n] == Fraction(math.comb(2 * n, n), 4**n)
    stat3 = stationary_moments_catalan(3, 2)
    assert stat3[1] == Fraction(1, 3) and stat3[2] == Fraction(5, 27)


def test_stationary_difference_law():
    for k in (2, 3, 7):
        stat = stationary_moments_catalan(k, 9)
        for n in range(9):
            want = Fraction((k - 1) ** (n + 1) * catalan(n), k ** (2 * n + 1))
            assert stat[n] - stat[n + 1] == want


def test_deriv_poly_frozen():
    assert deriv_poly(0).coeffs == (1,)
    assert deriv_poly(1).coeffs == (2, 1)
    assert deriv_poly(2).coeffs == (8, 9, 3)
    assert deriv_poly(3).coeffs == (48, 87, 60, 15)


def test_deriv_poly_against_numeric_derivative():
    # Numeric oracle: the n-th derivative of g(z) = z^n/(1+sqrt z) by
    # high-order central differences at a generic point.
    n, z0 = 3, 0.7

    def g(z):
        return z**n / (1 + math.sqrt(z))

    def d3(h):
        # Classical 5-point central stencil for f''', O(h^2).
        return (g(z0 + 2 * h) - 2 * g(z0 + h) + 2 * g(z0 - h) - g(z0 - 2 * h)) / (2 * h**3)

    # One Richardson step lifts the stencil to O(h^4).
    approx = (4 * d3(5e-3) - d3(1e-2)) / 3
    x = math.sqrt(z0)
    exact = deriv_poly(n)(x) / (2**n * (1 + x) ** (n + 1))
    assert abs(approx - exact) < 1e-7


def test_stationary_routes_agree_exactly():
    for k in (2, 3, 4):
        assert stationary_moments_derivative_poly(k, 8) == stationary_moments_catalan(k, 8)


def test_stationary_satisfies_fixed_point():
    # The stationary vector must be a zero of the moment vector field.
    for k in (2, 5):
        stat = stationary_moments_catalan(k, 8)
        th = Fraction(1, k)
        for n in range(1, 9):
            conv = sum(
                stat[n - j - 1] * (stat[j] - stat[j + 1]) for j in range(n - 1)
            )
            assert -n * stat[n] + n * th * stat[n - 1] + n * th * conv == 0


def test_integration_relaxes_to_stationary():
    vec = moments_at(JacobiParams.for_k(3, 6), [40.0])
    stat = stationary_moments_catalan(3, 6)
    got = vec.at(40.0)
    for n in range(7):
        assert abs(got[n] - float(stat[n])) < 1e-8


def test_tk_trace_binet_vs_recurrence():
    for k in (2, 3, 4, 7):
        seq = [tk_trace(k, n) for n in range(21)]
        assert seq[0] == 1 and seq[1] == 0 and seq[2] == k - 1
        for n in range(19):
            assert seq[n + 2] == (k - 2) * seq[n + 1] + (k - 1) * seq[n]


def test_complement_is_identity_at_k2():
    m = integrate_moments(JacobiParams.for_k(2, 4), 1.0)
    comp = complement_moments(m)
    assert np.max(np.abs(comp.values - m.values)) < 1e-14


def test_complement_matches_direct_integration():
    k, n_max = 3, 5
    m = integrate_moments(JacobiParams.for_k(k, n_max), 1.5)
    comp = complement_moments(m)
    direct = integrate_moments(
        JacobiParams(theta=Fraction(k - 1, k), lam=Fraction(1), n_max=n_max,
                     init=(1.0,) * (n_max + 1), k=k),
        1.5,
    )
    assert np.max(np.abs(comp.values - direct.values)) < 1e-9
    assert comp.params.theta == Fraction(k - 1, k)


def test_large_k_limit():
    gaps = large_k_limit_check(0.5, 2, [10, 100, 1000])
    assert gaps[10] > gaps[100] > gaps[1000]
    # n=1 gap is exactly (1 - e^{-t})/k.
    gaps1 = large_k_limit_check(0.5, 1, [100])
    assert abs(gaps1[100] - (1 - math.exp(-0.5)) / 100) < 1e-12


def test_mp_limit_identity():
    out = mp_limit_check(12)
    assert out["identity_exact"]
    # k^n m_n(infinity) - Catalan(n) vanishes like -binom(2n, n-2)/k at
    # fixed n; the n = 0, 1 gaps are exactly zero.
    for k in (10, 100, 1000):
        assert out["table"][k][0] == 0.0
        assert out["table"][k][1] == 0.0
    for n in range(2, 9):
        lim = -math.comb(2 * n, n - 2)
        errs = [abs(out["table"][k][n] * k - lim) for k in (10, 100, 1000)]
        assert errs[0] >= errs[1] >= errs[2]
        assert errs[2] <= 0.02 * abs(lim) + 1e-12


def test_stationary_density_mass_and_mean():
    for k in (2, 3, 5):
        top = 4 * (k - 1) / k**2
        # Substitute x = top*sin^2(phi) to tame the edge singularities and
        # use midpoint nodes so the open support endpoints are never hit
        # (at k = 2 the density blows up at x = 1).
        n = 200000
        h = (np.pi / 2) / n
        phi = (np.arange(n) + 0.5) * h
        x = top * np.sin(phi) ** 2
        w = stationary_density(k, x) * 2 * top * np.sin(phi) * np.cos(phi) * h
        assert abs(w.sum() - 1) < 1e-9
        assert abs((w * x).sum() - 1 / k) < 1e-9


def test_stationary_cdf_matches_density_integral():
    k = 3
    top = 4 * (k - 1) / k**2
    # Integrate in the phi substitution where the integrand is smooth,
    # then compare against the closed form on the mapped x grid.
    phi = np.linspace(1e-6, np.pi / 2 - 1e-6, 20001)
    xs = top * np.sin(phi) ** 2
    f = stationary_density(k, xs) * 2 * top * np.sin(phi) * np.cos(phi)
    num_cdf = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) / 2 * np.diff(phi))])
    got = stationary_cdf(k, xs)
    assert got[0] < 1e-5
    assert abs(got[-1] - 1) < 1e-5
    assert np.max(np.abs(got - (got[0] + num_cdf))) < 1e-7
    assert float(stationary_cdf(k, top)) == 1.0
    assert float(stationary_cdf(k, 0.0)) == 0.0


def test_moment_vector_serialization(tmp_path):
    vec = integrate_moments(JacobiParams.for_k(3, 3), 0.5, dt_out=0.25)
    jpath = tmp_path / "m.json"
    vec.to_json(jpath)
    back = MomentVector.from_json_dict(json.load(open(jpath)))
    assert np.array_equal(back.values, vec.values)
    assert back.params.theta == vec.params.theta
    cpath = tmp_path / "m.csv"
    vec.to_csv(cpath)
    lines = open(cpath).read().splitlines()
    assert lines[0] == "t,m_0,m_1,m_2,m_3"
    assert len(lines) == vec.t_grid.size + 1
    assert float(lines[1].split(",")[1]) == 1.0


def test_integrator_guards():
    with pytest.raises(ValueError):
        integrate_moments(JacobiParams.for_k(3, 2), -1.0)
    with pytest.raises(ValueError):
        moments_at(JacobiParams.for_k(3, 2), [])
