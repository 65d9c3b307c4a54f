"""Finite-N Monte Carlo for sums and compressions of unitary Brownian motions.

Time normalization: one step multiplies U by exp(i*sqrt(dt)*G) with G a
GUE-normalized Hermitian Gaussian (entry covariance 1/N).  Because
E[exp(i*sqrt(dt)*G)] = (1 - dt/2 + O(dt^2)) I, the Ito drift -U/2 dt of
the unitary Brownian motion emerges from the increment average and no
explicit drift term is added.  With this convention tr(U_t)/N converges
to e^{-t/2} as N grows, which is the scaling under which the large-N
limit is the free unitary Brownian motion; no further time rescaling is
applied anywhere.

Trajectories are seeded independently through SeedSequence((seed, id)),
so results are bit-identical regardless of scheduling order.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, List, Sequence

import numpy as np

from .moments import stationary_cdf

OBSERVABLES = ("density_matrix", "w_moments", "compressed_jacobi", "complement")

# Checkpoint spacing for polar re-unitarization along a path.
_REPROJECT_EVERY = 100
_UNITARITY_TOL = 1e-8


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run description.

    dt should be well below t_end (dt <= t_end/100 is the intended
    regime; this is not enforced).  N must be divisible by k when the
    compressed or complement observables are requested so the rank-N/k
    projections are exact."""

    N: int
    k: int
    t_end: float
    dt: float
    trajectories: int
    seed: int
    observables: tuple = ("w_moments",)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.t_end < 0 or self.dt <= 0:
            raise ValueError("need t_end >= 0 and dt > 0")
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")
        bad = set(self.observables) - set(OBSERVABLES)
        if bad:
            raise ValueError(f"unknown observables: {sorted(bad)}")
        needs_rank = {"compressed_jacobi", "complement"} & set(self.observables)
        if needs_rank and self.N % self.k != 0:
            raise ValueError("N must be divisible by k for projection ranks")

    @property
    def steps(self) -> int:
        return round(self.t_end / self.dt)


@dataclass
class SpectralSample:
    """Sorted eigenvalues of one observable matrix with its provenance."""

    eigenvalues: np.ndarray
    N: int
    k: int
    t: float
    trajectory: int
    seed: int
    kind: str

    def validate(self) -> None:
        vals = self.eigenvalues
        if np.any(np.diff(vals) < 0):
            raise ValueError("eigenvalues must be sorted")
        if self.kind == "density_matrix":
            if vals.min() < -1e-10 or abs(vals.sum() - 1.0) > 1e-10:
                raise ValueError("density matrix spectrum violates state bounds")
        elif self.kind == "radial":
            # ||sum of k unitaries||^2 <= k^2, so the normalized radial
            # part never exceeds 1 up to float error.
            if vals.min() < -1e-10 or vals.max() > 1.0 + 1e-6:
                raise ValueError("radial spectrum outside [0, 1]")
        elif self.kind == "compressed":
            if vals.min() < -1e-10 or vals.max() > 1.0 + 1e-10:
                raise ValueError("compressed spectrum outside [0, 1]")
        else:
            raise ValueError(f"unknown sample kind {self.kind!r}")


def _gue(N: int, rng: np.random.Generator) -> np.ndarray:
    # Entry covariance 1/N: real N(0,1/N) diagonal, complex variance 1/N
    # above it.
    a = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return (a + a.conj().T) / (2.0 * math.sqrt(N))


def _unitary_exp(h: np.ndarray) -> np.ndarray:
    # exp(i h) for Hermitian h via eigendecomposition; unitary up to
    # float error by construction.
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)) @ v.conj().T


def _polar_unitary(u: np.ndarray) -> np.ndarray:
    # Polar factor u (u*u)^(-1/2) via the Hermitian eigensolver.  The
    # input is always within float error of unitary, so u*u is a tiny
    # perturbation of the identity and the inverse square root is well
    # conditioned.  (The SVD route hits sporadic LAPACK gesdd
    # non-convergence on long runs.)
    s, v = np.linalg.eigh(u.conj().T @ u)
    return u @ ((v * (s ** -0.5)) @ v.conj().T)


def _check_unitary(u: np.ndarray) -> None:
    dev = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
    if dev > _UNITARITY_TOL:
        raise RuntimeError(f"unitarity lost: deviation {dev:.2e}")


def evolve_ubm(N: int, dt: float, steps: int, rng: np.random.Generator
               ) -> Iterator[tuple]:
    """Yield (t, U_t) along one unitary Brownian path, starting at the
    identity, with polar re-projection and a unitarity audit every
    _REPROJECT_EVERY steps and at the end."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.eye(N, dtype=complex)
    yield 0.0, u
    for s in range(1, steps + 1):
        u = u @ _unitary_exp(math.sqrt(dt) * _gue(N, rng))
        if s % _REPROJECT_EVERY == 0:
            u = _polar_unitary(u)
            _check_unitary(u)
        yield s * dt, u
    _check_unitary(u)


def ubm_endpoint(N: int, dt: float, steps: int, rng: np.random.Generator
                 ) -> np.ndarray:
    for _, u in evolve_ubm(N, dt, steps, rng):
        pass
    return u


def build_density_matrix(unitaries: Sequence[np.ndarray]) -> np.ndarray:
    """GG*/tr(GG*) for G the sum of the given unitaries."""
    g = np.sum(unitaries, axis=0)
    w = g @ g.conj().T
    tr = float(np.trace(w).real)
    if tr <= 0:
        raise RuntimeError("zero-trace Gram matrix; abort trajectory")
    return w / tr


def radial_part(unitaries: Sequence[np.ndarray]) -> np.ndarray:
    """GG*/k^2, the radial part normalized to spectrum inside [0, 1]."""
    g = np.sum(unitaries, axis=0)
    return (g @ g.conj().T) / len(unitaries) ** 2


def empirical_moments(matrix: np.ndarray, n_max: int) -> List[float]:
    """Normalized traces tr(M^j)/dim for j = 1..n_max, one
    eigendecomposition and then powers of the spectrum."""
    if n_max > 12:
        raise ValueError("n_max beyond 12 is outside the validated range")
    vals = np.linalg.eigvalsh(matrix)
    return [float(np.mean(vals ** j)) for j in range(1, n_max + 1)]


def _trajectory_rng(seed: int, trajectory: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, trajectory)))


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    return max(1, os.cpu_count() or 1)


def _map_trajectories(fn, n_traj: int, threads: int | None) -> list:
    workers = min(_resolve_threads(threads), n_traj)
    if workers == 1:
        return [fn(j) for j in range(n_traj)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_traj)))


def _mean_se(samples: np.ndarray) -> tuple:
    mean = samples.mean(axis=0)
    if samples.shape[0] > 1:
        se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    else:
        se = np.full_like(np.asarray(mean, dtype=float), np.inf)
    return mean, se


def w_moment_study(cfg: SimConfig, n_max: int = 3, threads: int | None = None
                   ) -> dict:
    """Simulate k independent paths per trajectory and aggregate the
    radial-part moments r_n = tr((GG*/k^2)^n)/N, the per-path unitary
    traces Re tr(U)/N, and the Gram trace tr(GG*)/N."""

    def one(trajectory: int) -> dict:
        rng = _trajectory_rng(cfg.seed, trajectory)
        us = [ubm_endpoint(cfg.N, cfg.dt, cfg.steps, rng)
              for _ in range(cfg.k)]
        g = np.sum(us, axis=0)
        w = g @ g.conj().T
        gram = float(np.trace(w).real) / cfg.N
        vals = np.sort(np.linalg.eigvalsh(w / cfg.k ** 2))
        sample = SpectralSample(eigenvalues=vals, N=cfg.N, k=cfg.k,
                                t=cfg.t_end, trajectory=trajectory,
                                seed=cfg.seed, kind="radial")
        sample.validate()
        dens = SpectralSample(eigenvalues=np.sort(vals / vals.sum()),
                              N=cfg.N, k=cfg.k, t=cfg.t_end,
                              trajectory=trajectory, seed=cfg.seed,
                              kind="density_matrix")
        dens.validate()
        return {
            "r": [float(np.mean(vals ** j)) for j in range(1, n_max + 1)],
            "trace_u": [float(np.trace(u).real) / cfg.N for u in us],
            "gram": gram,
        }

    rows = _map_trajectories(one, cfg.trajectories, threads)
    r = np.array([row["r"] for row in rows])
    trace_u = np.array([tr for row in rows for tr in row["trace_u"]])
    gram = np.array([row["gram"] for row in rows])
    r_mean, r_se = _mean_se(r)
    tu_mean, tu_se = _mean_se(trace_u)
    g_mean, g_se = _mean_se(gram)
    return {
        "t": cfg.t_end,
        "trajectories": cfg.trajectories,
        "r_mean": [float(x) for x in np.atleast_1d(r_mean)],
        "r_se": [float(x) for x in np.atleast_1d(r_se)],
        "trace_u_mean": float(tu_mean),
        "trace_u_se": float(tu_se),
        "gram_mean": float(g_mean),
        "gram_se": float(g_se),
        "samples": {
            "r": r.tolist(),
            "trace_u": trace_u.tolist(),
            "gram": gram.tolist(),
        },
    }


def _projection_rank(frac: Fraction, N: int) -> int:
    rank = Fraction(frac) * N
    if rank.denominator != 1 or not 0 < rank <= N:
        raise ValueError(f"projection rank {frac}*{N} is not a valid integer")
    return int(rank)


def _compressed_sample(cfg: SimConfig, rp: int, rq: int, trajectory: int
                       ) -> SpectralSample:
    rng = _trajectory_rng(cfg.seed, trajectory)
    u = ubm_endpoint(cfg.N, cfg.dt, cfg.steps, rng)
    # P, Q are the diagonal projections on the first rp (rq) coordinates;
    # the compression PUQU*P restricted to range(P) is VV* with the
    # corner block V = U[:rp, :rq].
    v = u[:rp, :rq]
    vals = np.sort(np.linalg.eigvalsh(v @ v.conj().T))
    sample = SpectralSample(eigenvalues=vals, N=cfg.N, k=cfg.k, t=cfg.t_end,
                            trajectory=trajectory, seed=cfg.seed,
                            kind="compressed")
    sample.validate()
    return sample


def simulate_compressed_jacobi(cfg: SimConfig, p: Fraction, q: Fraction
                               ) -> Iterator[SpectralSample]:
    """Stream one compressed-Jacobi spectral sample per trajectory."""
    rp, rq = _projection_rank(p, cfg.N), _projection_rank(q, cfg.N)
    for trajectory in range(cfg.trajectories):
        yield _compressed_sample(cfg, rp, rq, trajectory)


def compressed_moment_study(cfg: SimConfig, p: Fraction, q: Fraction,
                            n_max: int = 3, threads: int | None = None
                            ) -> dict:
    """Empirical compressed moments tr(J^n)/rank(P) with standard errors."""
    rp, rq = _projection_rank(p, cfg.N), _projection_rank(q, cfg.N)

    def one(trajectory: int) -> list:
        vals = _compressed_sample(cfg, rp, rq, trajectory).eigenvalues
        return [float(np.mean(vals ** j)) for j in range(1, n_max + 1)]

    rows = np.array(_map_trajectories(one, cfg.trajectories, threads))
    mean, se = _mean_se(rows)
    return {
        "t": cfg.t_end,
        "trajectories": cfg.trajectories,
        "rank_p": rp,
        "rank_q": rq,
        "m_mean": [float(x) for x in np.atleast_1d(mean)],
        "m_se": [float(x) for x in np.atleast_1d(se)],
        "samples": rows.tolist(),
    }


def stationary_spectrum_check(seed: int, N: int = 300, k: int = 3,
                              t_end: float = 20.0, dt: float = 0.05,
                              trajectories: int = 6,
                              threads: int | None = None) -> dict:
    """Pool radial-part eigenvalues deep in the stationary regime and
    compare their empirical distribution to the closed-form CDF."""
    cfg = SimConfig(N=N, k=k, t_end=t_end, dt=dt, trajectories=trajectories,
                    seed=seed)

    def one(trajectory: int) -> np.ndarray:
        rng = _trajectory_rng(cfg.seed, trajectory)
        us = [ubm_endpoint(cfg.N, cfg.dt, cfg.steps, rng) for _ in range(k)]
        vals = np.sort(np.linalg.eigvalsh(radial_part(us)))
        sample = SpectralSample(eigenvalues=vals, N=N, k=k, t=t_end,
                                trajectory=trajectory, seed=seed, kind="radial")
        sample.validate()
        return vals

    pooled = np.sort(np.concatenate(_map_trajectories(one, trajectories, threads)))
    n = pooled.size
    cdf = stationary_cdf(k, np.clip(pooled, 0.0, None))
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    ks = float(max(np.max(np.abs(upper - cdf)), np.max(np.abs(lower - cdf))))
    return {
        "ks_distance": ks,
        "n_eigenvalues": int(n),
        "max_eigenvalue": float(pooled.max()),
        "min_eigenvalue": float(pooled.min()),
        "support_edge": 4 * (k - 1) / k ** 2,
    }


def samples_to_csv(samples: Sequence[SpectralSample], path) -> None:
    """One row per eigenvalue with full provenance metadata."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "trajectory", "N", "k", "seed", "kind",
                         "eigenvalue"])
        for s in samples:
            for v in s.eigenvalues:
                writer.writerow([repr(float(s.t)), s.trajectory, s.N, s.k,
                                 s.seed, s.kind, repr(float(v))])
