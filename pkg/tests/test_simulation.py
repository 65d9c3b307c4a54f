import csv
import math
from fractions import Fraction

import numpy as np
import pytest

from freejacobi.moments import (
    JacobiParams,
    complement_moments,
    integrate_w_moments,
    moments_at,
)
from freejacobi.simulation import (
    SimConfig,
    SpectralSample,
    _gue,
    build_density_matrix,
    compressed_moment_study,
    empirical_moments,
    evolve_ubm,
    radial_part,
    samples_to_csv,
    simulate_compressed_jacobi,
    stationary_spectrum_check,
    ubm_endpoint,
    w_moment_study,
)


def test_config_guards():
    good = dict(N=12, k=3, t_end=1.0, dt=0.01, trajectories=2, seed=1)
    SimConfig(**good)
    with pytest.raises(ValueError):
        SimConfig(**{**good, "N": 0})
    with pytest.raises(ValueError):
        SimConfig(**{**good, "k": 1})
    with pytest.raises(ValueError):
        SimConfig(**{**good, "dt": 0.0})
    with pytest.raises(ValueError):
        SimConfig(**{**good, "trajectories": 0})
    with pytest.raises(ValueError):
        SimConfig(**{**good, "observables": ("spectra",)})
    with pytest.raises(ValueError):
        SimConfig(**{**good, "N": 13, "observables": ("compressed_jacobi",)})


def test_config_steps():
    cfg = SimConfig(N=4, k=2, t_end=1.0, dt=1e-3, trajectories=1, seed=0)
    assert cfg.steps == 1000


def test_gue_increment_statistics():
    rng = np.random.default_rng(42)
    N = 40
    h = _gue(N, rng)
    assert np.max(np.abs(h - h.conj().T)) == 0.0
    # Entry covariance 1/N, averaged over many draws.
    draws = np.array([_gue(N, rng) for _ in range(200)])
    off_var = np.var(draws[:, 0, 1])
    diag_var = np.var(draws[:, 2, 2].real)
    assert abs(off_var - 1 / N) < 0.3 / N
    assert abs(diag_var - 1 / N) < 0.4 / N
    assert np.max(np.abs(draws[:, 2, 2].imag)) == 0.0


def test_evolve_zero_steps_is_identity():
    rng = np.random.default_rng(0)
    path = list(evolve_ubm(8, 0.01, 0, rng))
    assert len(path) == 1
    t, u = path[0]
    assert t == 0.0
    assert np.array_equal(u, np.eye(8))


def test_evolve_unitarity_along_path():
    # Crosses one polar re-projection checkpoint.
    rng = np.random.default_rng(3)
    eye = np.eye(16)
    for t, u in evolve_ubm(16, 1e-3, 120, rng):
        assert np.max(np.abs(u.conj().T @ u - eye)) < 1e-8
    assert abs(t - 0.12) < 1e-12


def test_endpoint_matches_path_tail():
    u1 = ubm_endpoint(10, 0.01, 25, np.random.default_rng(11))
    for _, u2 in evolve_ubm(10, 0.01, 25, np.random.default_rng(11)):
        pass
    assert np.array_equal(u1, u2)


def test_evolve_rejects_bad_dt():
    with pytest.raises(ValueError):
        list(evolve_ubm(4, 0.0, 10, np.random.default_rng(0)))


def test_density_matrix_at_t0():
    us = [np.eye(6, dtype=complex)] * 3
    w = build_density_matrix(us)
    assert np.allclose(w, np.eye(6) / 6)
    assert np.allclose(radial_part(us), np.eye(6))


def test_density_matrix_properties():
    rng = np.random.default_rng(17)
    us = [ubm_endpoint(20, 0.01, 30, rng) for _ in range(3)]
    w = build_density_matrix(us)
    assert abs(np.trace(w).real - 1.0) < 1e-12
    vals = np.linalg.eigvalsh(w)
    assert vals.min() > -1e-10
    # Radial part spectrum never exceeds 1: ||sum of 3 unitaries|| <= 3.
    rvals = np.linalg.eigvalsh(radial_part(us))
    assert rvals.max() < 1.0 + 1e-6


def test_empirical_moments_basics():
    assert empirical_moments(np.eye(5), 4) == [1.0, 1.0, 1.0, 1.0]
    m = empirical_moments(np.diag([0.5, 0.5]), 3)
    assert np.allclose(m, [0.5, 0.25, 0.125])
    rng = np.random.default_rng(2)
    a = rng.standard_normal((6, 6))
    h = (a + a.T) / 2
    got = empirical_moments(h, 3)
    want = [np.trace(np.linalg.matrix_power(h, j)).real / 6 for j in (1, 2, 3)]
    assert np.allclose(got, want, atol=1e-12)
    with pytest.raises(ValueError):
        empirical_moments(np.eye(3), 13)


def test_compressed_t0_is_projection():
    cfg = SimConfig(N=24, k=3, t_end=0.0, dt=0.01, trajectories=2, seed=4,
                    observables=("compressed_jacobi",))
    for sample in simulate_compressed_jacobi(cfg, Fraction(1, 3), Fraction(1, 3)):
        assert sample.kind == "compressed"
        assert np.allclose(sample.eigenvalues, 1.0)


def test_projection_rank_guard():
    cfg = SimConfig(N=24, k=3, t_end=0.1, dt=0.01, trajectories=1, seed=4)
    with pytest.raises(ValueError):
        list(simulate_compressed_jacobi(cfg, Fraction(1, 5), Fraction(1, 3)))


def test_sample_validation_guards():
    base = dict(N=4, k=2, t=1.0, trajectory=0, seed=0)
    with pytest.raises(ValueError):
        SpectralSample(np.array([0.5, 0.1]), kind="radial", **base).validate()
    with pytest.raises(ValueError):
        SpectralSample(np.array([0.1, 0.5]), kind="spectrum", **base).validate()
    with pytest.raises(ValueError):
        SpectralSample(np.array([0.2, 0.3]), kind="density_matrix",
                       **base).validate()
    with pytest.raises(ValueError):
        SpectralSample(np.array([0.5, 1.5]), kind="radial", **base).validate()
    SpectralSample(np.array([0.4, 0.6]), kind="density_matrix", **base).validate()


def test_w_study_against_ode():
    # Radial moments, unitary trace, and Gram trace all inside 3 standard
    # errors of their large-N oracles.
    cfg = SimConfig(N=60, k=3, t_end=0.3, dt=0.01, trajectories=8, seed=99)
    out = w_moment_study(cfg, n_max=3, threads=1)
    r_ode = integrate_w_moments(3, 3, 0.3, tol=1e-10).r.at(0.3)[1:]
    for j in range(3):
        assert abs(out["r_mean"][j] - r_ode[j]) < 3 * out["r_se"][j]
    assert abs(out["trace_u_mean"] - math.exp(-0.15)) < 3 * out["trace_u_se"]
    gram_want = 3 * (1 + 2 * math.exp(-0.3))
    assert abs(out["gram_mean"] - gram_want) < 3 * out["gram_se"]
    assert len(out["samples"]["trace_u"]) == 8 * 3


def test_compressed_study_against_ode():
    cfg = SimConfig(N=60, k=3, t_end=0.4, dt=0.01, trajectories=12,
                    seed=20260814, observables=("compressed_jacobi",))
    out = compressed_moment_study(cfg, Fraction(1, 3), Fraction(1, 3),
                                  n_max=3, threads=1)
    assert out["rank_p"] == out["rank_q"] == 20
    m_ode = moments_at(JacobiParams.for_k(3, 3), [0.4], tol=1e-10).at(0.4)[1:]
    for j in range(3):
        assert abs(out["m_mean"][j] - m_ode[j]) < 3 * out["m_se"][j]


def test_complement_projection_against_transform():
    # Rank-2N/3 compression vs the complement transform of the rank-N/3
    # moment flow.
    vec = moments_at(JacobiParams.for_k(3, 3), [0.4], tol=1e-10)
    comp = complement_moments(vec).at(0.4)[1:]
    cfg = SimConfig(N=60, k=3, t_end=0.4, dt=0.01, trajectories=8, seed=21,
                    observables=("complement",))
    out = compressed_moment_study(cfg, Fraction(2, 3), Fraction(2, 3),
                                  n_max=3, threads=1)
    for j in range(3):
        assert abs(out["m_mean"][j] - comp[j]) < 3 * out["m_se"][j]


def test_reproducibility_bit_identical():
    cfg = SimConfig(N=24, k=2, t_end=0.1, dt=0.01, trajectories=3, seed=5,
                    observables=("compressed_jacobi",))
    runs = [
        [s.eigenvalues for s in simulate_compressed_jacobi(
            cfg, Fraction(1, 2), Fraction(1, 2))]
        for _ in range(2)
    ]
    assert all(np.array_equal(a, b) for a, b in zip(*runs))
    # Thread count must not change the aggregate.
    o1 = compressed_moment_study(cfg, Fraction(1, 2), Fraction(1, 2), threads=1)
    o2 = compressed_moment_study(cfg, Fraction(1, 2), Fraction(1, 2), threads=2)
    assert o1["samples"] == o2["samples"]


def test_samples_to_csv(tmp_path):
    cfg = SimConfig(N=12, k=2, t_end=0.05, dt=0.01, trajectories=2, seed=9,
                    observables=("compressed_jacobi",))
    samples = list(simulate_compressed_jacobi(cfg, Fraction(1, 2), Fraction(1, 2)))
    path = tmp_path / "eigs.csv"
    samples_to_csv(samples, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "trajectory", "N", "k", "seed", "kind", "eigenvalue"]
    assert len(rows) == 1 + 2 * 6
    assert float(rows[1][6]) == samples[0].eigenvalues[0]
    assert rows[1][5] == "compressed"


def test_stationary_spectrum_distribution():
    # Deep in the stationary regime the pooled radial spectrum follows
    # the closed-form law; Kolmogorov distance under 0.05.
    out = stationary_spectrum_check(20260814, trajectories=3, threads=1)
    assert out["ks_distance"] < 0.05
    assert out["min_eigenvalue"] > -1e-10
    assert out["max_eigenvalue"] < out["support_edge"] + 0.02
    assert out["n_eigenvalues"] == 900
