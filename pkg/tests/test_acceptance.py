"""Acceptance suite: the toolkit's headline identities at their stated
tolerances, one numbered pass/fail line per criterion.

The lines print unbuffered past pytest's capture so a plain ``pytest -v``
shows the verdicts inline; each test still fails normally on violation.
"""

import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from freejacobi.combinatorics import (
    catalan,
    cumulants_from_moments,
    projection_cumulants,
)
from freejacobi.moments import (
    JacobiParams,
    complement_moments,
    integrate_moments,
    integrate_w_moments,
    large_k_limit_check,
    moments_at,
    mp_limit_check,
    stationary_moments_derivative_poly,
    stationary_moments_catalan,
)
from freejacobi.series import (
    characteristic_trace,
    extract_rho_moments,
    k2_characteristic,
    laguerre_eval,
    pde0_residual,
    rho0_from_closed_form,
    rho0_from_traces,
    w_sequence,
)
from freejacobi.simulation import (
    SimConfig,
    compressed_moment_study,
    w_moment_study,
)
from freejacobi.words import (
    jacobi_power_tables,
    knj_closed_form,
    knj_from_table,
    stationary_from_words,
)

SEED = 20260814


@pytest.fixture
def announce(capsys):
    def _announce(num: int, ok: bool, name: str, detail: str) -> None:
        with capsys.disabled():
            flag = "PASS" if ok else "FAIL"
            print(f"[ACCEPTANCE {num:02d}] {flag} {name}: {detail}",
                  flush=True)

    return _announce


def test_acceptance_01_triangle_closed_form(announce):
    started = time.perf_counter()
    tables = jacobi_power_tables(20)
    mismatches = 0
    for table in tables:
        knj = knj_from_table(table)
        for j in range(table.n + 1):
            if knj[j] != knj_closed_form(table.n, j):
                mismatches += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 30.0
    announce(1, ok, "word triangle equals (k-1)^(n-j) binom(2n,n-j), n<=20",
             f"{mismatches} mismatches, {elapsed:.1f}s (budget 30s)")
    assert mismatches == 0
    assert elapsed < 30.0


def test_acceptance_02_stationary_two_routes_and_words(announce):
    started = time.perf_counter()
    tables = jacobi_power_tables(12)
    mismatches = 0
    for k in range(2, 8):
        cat = stationary_moments_catalan(k, 12)
        app = stationary_moments_derivative_poly(k, 12)
        for n in range(13):
            if cat[n] != app[n]:
                mismatches += 1
        for n in range(1, 13):
            word = Fraction(tables[n - 1].m(k), k ** (2 * n - 1))
            if cat[n] != word or word != stationary_from_words(n, k):
                mismatches += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 10.0
    announce(2, ok, "stationary moments: catalan = derivative-poly = words, "
             "k=2..7, n<=12", f"{mismatches} mismatches, {elapsed:.1f}s "
             "(budget 10s)")
    assert mismatches == 0
    assert elapsed < 10.0


def test_acceptance_03_catalan_difference_law(announce):
    mismatches = 0
    for k in range(2, 8):
        stat = stationary_moments_catalan(k, 13)
        for n in range(13):
            expected = Fraction((k - 1) ** (n + 1) * catalan(n),
                                k ** (2 * n + 1))
            if stat[n] - stat[n + 1] != expected:
                mismatches += 1
    ok = mismatches == 0
    announce(3, ok, "m_n - m_(n+1) = (k-1)^(n+1) C_n / k^(2n+1), n<=12, k<=7",
             f"{mismatches} mismatches (exact)")
    assert ok


def test_acceptance_04_raw_and_rescaled_routes_coincide(announce):
    started = time.perf_counter()
    worst = 0.0
    for k in (2, 3, 5):
        res = integrate_w_moments(k, 10, 10.0, dt_out=0.05, tol=1e-12)
        direct = integrate_moments(JacobiParams.for_k(k, 10), 10.0,
                                   dt_out=0.05, tol=1e-12)
        worst = max(worst, float(np.max(np.abs(res.r.values - direct.values))))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-9 and elapsed < 60.0
    announce(4, ok, "raw vs rescaled moment hierarchy, t in [0,10], n<=10, "
             "k in {2,3,5}", f"max gap {worst:.2e} (budget 1e-9), "
             f"{elapsed:.1f}s (budget 60s)")
    assert worst < 1e-9
    assert elapsed < 60.0


def test_acceptance_05_first_moment_closed_form(announce):
    worst = 0.0
    for k in (2, 3, 5):
        vec = integrate_moments(JacobiParams.for_k(k, 1), 10.0,
                                dt_out=0.05, tol=1e-12)
        target = 1.0 / k + (1.0 - 1.0 / k) * np.exp(-vec.t_grid)
        worst = max(worst, float(np.max(np.abs(vec.values[:, 1] - target))))
    ok = worst < 1e-10
    announce(5, ok, "m_1(t) = 1/k + (1-1/k) exp(-t)",
             f"max gap {worst:.2e} (budget 1e-10)")
    assert ok


def test_acceptance_06_k2_inversion_matches_laguerre_series(announce):
    started = time.perf_counter()
    times = (0.1, 0.5, 1.0, 2.0)
    vec = moments_at(JacobiParams.for_k(2, 8), times, tol=1e-12)
    rhos = extract_rho_moments(vec, 2)
    worst = 0.0
    for t, rho in zip(vec.t_grid, rhos):
        if float(t) == 0.0:
            continue
        w = w_sequence(rho, 2)
        for j in range(1, 9):
            target = math.exp(-j * float(t)) * laguerre_eval(
                j - 1, 1.0, 2.0 * j * float(t)) / j
            worst = max(worst, abs(float(w[j]) - target))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-7 and elapsed < 60.0
    announce(6, ok, "k=2 triangular inversion vs laguerre word traces, "
             "j<=8, t in {0.1,0.5,1,2}", f"max gap {worst:.2e} "
             f"(budget 1e-7), {elapsed:.1f}s (budget 60s)")
    assert worst < 1e-7
    assert elapsed < 60.0


def test_acceptance_07_transport_equation_residual(announce):
    dt = 1e-3
    worst = 0.0
    for k in (2, 3, 4):
        for center in (0.5, 1.0, 2.0):
            times = [center + i * dt for i in (-2, -1, 0, 1, 2)]
            vec = moments_at(JacobiParams.for_k(k, 8), times, tol=1e-12)
            snaps = extract_rho_moments(vec, k)[1:]
            worst = max(worst, float(np.max(pde0_residual(snaps, dt, k))))
    ok = worst < 1e-5
    announce(7, ok, "transport equation coefficient residual, order 8, "
             "k in {2,3,4}, t in {0.5,1,2}",
             f"max residual {worst:.2e} (budget 1e-5)")
    assert ok


def test_acceptance_08_characteristic_conservation(announce):
    worst_drift = 0.0
    worst_curve = 0.0
    for k in (2, 3):
        vec = integrate_moments(JacobiParams.for_k(k, 24), 0.5,
                                dt_out=0.00125, tol=1e-12)
        for z0 in (0.05, 0.1j):
            state = characteristic_trace(k, z0, 0.5, vec)
            assert not state.branch_crossed
            worst_drift = max(worst_drift, state.drift)
            if k == 2:
                worst_curve = max(worst_curve, max(
                    abs(z - k2_characteristic(complex(z0), t))
                    for t, z in zip(state.t_grid, state.z_path())))
    ok = worst_drift < 1e-6 and worst_curve < 1e-8
    announce(8, ok, "conserved quantity along characteristics, k in {2,3}, "
             "z0 in {0.05, 0.1i}, t<=0.5",
             f"max drift {worst_drift:.2e} (budget 1e-6), k=2 curve gap "
             f"{worst_curve:.2e} (budget 1e-8)")
    assert worst_drift < 1e-6
    assert worst_curve < 1e-8


def test_acceptance_09_large_k_exponential_collapse(announce):
    k_list = (100, 1000, 10000)
    stable = True
    exact_gap = 0.0
    worst_ratio = 1.0
    for t in (0.5, 1.0):
        for n in range(1, 5):
            gaps = large_k_limit_check(t, n, k_list, tol=1e-12)
            fitted = [gaps[k] * k for k in k_list]
            ratio = max(fitted) / min(fitted)
            worst_ratio = max(worst_ratio, ratio)
            if ratio > 2.0:
                stable = False
            if n == 1:
                for k in k_list:
                    exact_gap = max(exact_gap, abs(
                        gaps[k] - (1 - math.exp(-t)) / k))
    ok = stable and exact_gap < 1e-12
    announce(9, ok, "|r_n - exp(-nt)| <= C/k with C stable across "
             "k in {1e2,1e3,1e4}, n<=4",
             f"worst fitted-C ratio {worst_ratio:.3f} (budget 2), n=1 exact "
             f"gap {exact_gap:.2e} (budget 1e-12)")
    assert stable
    assert exact_gap < 1e-12


def test_acceptance_10_catalan_factorial_identity(announce):
    result = mp_limit_check(12)
    mismatches = 0 if result["identity_exact"] else 1
    for n in range(13):
        poch = Fraction(1)
        for i in range(n):
            poch *= Fraction(1, 2) + i
        if Fraction(4**n) * poch / math.factorial(n + 1) != catalan(n):
            mismatches += 1
    ok = mismatches == 0
    announce(10, ok, "4^n (1/2)_n / (n+1)! = C_n, n<=12",
             f"{mismatches} mismatches (exact)")
    assert ok


def test_acceptance_11_projection_cumulants_dual_route(announce):
    mismatches = 0
    for alpha in (Fraction(1, 2), Fraction(1, 3), Fraction(2, 5)):
        table = projection_cumulants(alpha, 12)
        oracle = cumulants_from_moments([Fraction(1)] + [alpha] * 12, 12)
        for n in range(1, 13):
            if table[n] != oracle[n]:
                mismatches += 1
    half = projection_cumulants(Fraction(1, 2), 12)
    for j in range(1, 7):
        if half[2 * j] != Fraction((-1) ** (j - 1) * catalan(j - 1), 4**j):
            mismatches += 1
        if 2 * j + 1 >= 3 and 2 * j + 1 <= 12 and half[2 * j + 1] != 0:
            mismatches += 1
    ok = mismatches == 0
    announce(11, ok, "projection cumulants: legendre formula vs "
             "moebius inversion, alpha in {1/2,1/3,2/5}, n<=12",
             f"{mismatches} mismatches (exact, incl. alpha=1/2 closed form)")
    assert ok


def test_acceptance_12_monte_carlo_agreement(announce):
    budget = 600.0 * 4 / min(4, os.cpu_count() or 1)
    started = time.perf_counter()
    cfg = SimConfig(N=200, k=3, t_end=1.0, dt=1e-3, trajectories=50,
                    seed=SEED)
    study = w_moment_study(cfg, n_max=3)
    ode = integrate_w_moments(3, 3, 1.0, t_grid=[0.0, 1.0],
                              tol=1e-12).r.at(1.0)[1:]
    ratios = [abs(study["r_mean"][j] - float(ode[j])) / study["r_se"][j]
              for j in range(3)]
    trace_ratio = (abs(study["trace_u_mean"] - math.exp(-0.5))
                   / study["trace_u_se"])

    cfg2 = SimConfig(N=201, k=3, t_end=1.0, dt=1e-3, trajectories=50,
                     seed=SEED)
    cstudy = compressed_moment_study(cfg2, Fraction(1, 3), Fraction(1, 3),
                                     n_max=3)
    assert cstudy["rank_p"] == 67
    c_ode = moments_at(JacobiParams.for_k(3, 3), [1.0], tol=1e-12).at(1.0)[1:]
    c_ratios = [abs(cstudy["m_mean"][j] - float(c_ode[j])) / cstudy["m_se"][j]
                for j in range(3)]
    elapsed = time.perf_counter() - started
    worst = max(ratios + [trace_ratio] + c_ratios)
    ok = worst <= 3.0 and elapsed < budget
    announce(12, ok, "monte carlo N=200/201, 50 trajectories, t=1 vs ODE "
             "and exp(-t/2), 3 standard errors",
             f"worst gap/SE {worst:.2f} (budget 3), {elapsed:.0f}s "
             f"(budget {budget:.0f}s)")
    assert worst <= 3.0
    assert elapsed < budget


def test_acceptance_13_complement_projection_duality(announce):
    worst = 0.0
    for k in (3, 4):
        base = integrate_moments(JacobiParams.for_k(k, 6), 5.0,
                                 dt_out=0.1, tol=1e-12)
        transformed = complement_moments(base)
        direct = integrate_moments(
            JacobiParams(theta=Fraction(k - 1, k), lam=Fraction(1),
                         n_max=6, init=(1.0,) * 7, k=k),
            5.0, dt_out=0.1, tol=1e-12)
        worst = max(worst, float(np.max(np.abs(
            transformed.values - direct.values))))
    ok = worst < 1e-8
    announce(13, ok, "complement trace duality vs direct integration, "
             "k in {3,4}, n<=6", f"max gap {worst:.2e} (budget 1e-8)")
    assert ok


def test_acceptance_14_initial_series_two_routes(announce):
    mismatches = 0
    for k in range(2, 7):
        closed = rho0_from_closed_form(k, 12)
        traces = rho0_from_traces(k, 12)
        for a, b in zip(closed.coeffs, traces.coeffs):
            if a != b:
                mismatches += 1
    ok = mismatches == 0
    announce(14, ok, "initial series: trace recurrence vs rational taylor "
             "coefficients, n<=12, k=2..6", f"{mismatches} mismatches (exact)")
    assert ok
