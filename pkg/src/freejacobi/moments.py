"""Moment dynamics of the compressed unitary process and its radial part.

Three coupled moment hierarchies are integrated or summed exactly here:

* the normalized moments m_n(t) of the process P u_t Q u_t* P in the algebra
  compressed by P (trace of P equals lambda * theta, trace of Q equals theta);
* the raw moments s_n(t) of the radial part W_t = G_t G_t* of a sum of k
  free unitary Brownian motions, and their rescaling r_n = s_n / k^(2n);
* the stationary moments, by a Catalan telescoping sum and independently by
  a closed form built from derivative numerator polynomials.

All stationary quantities are exact rationals; time-dependent quantities are
integrated with a fixed-step classical Runge-Kutta scheme whose step is
halved until two successive runs agree componentwise (Richardson control).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .combinatorics import catalan

_DERIV_LIMIT = 40
_MAX_SUBSTEP_FACTOR = 1 << 14


class IntegrationError(RuntimeError):
    """Raised when the step-halving ladder cannot reach tolerance or the
    state stops being finite."""


@dataclass(frozen=True)
class JacobiParams:
    """Parameters of the compressed-process moment hierarchy.

    theta is the trace of Q, lam*theta the trace of P (both in (0,1]);
    init holds m_0..m_{n_max} at t=0 with m_0 = 1. k is kept when the
    parameters came from the k-unitary setting (theta = 1/k, lam = 1).
    """

    theta: Fraction | float
    lam: Fraction | float
    n_max: int
    init: Tuple[float, ...]
    k: int | None = None

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0,1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0,1]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if len(self.init) != self.n_max + 1:
            raise ValueError("init must have length n_max + 1")
        if self.init[0] != 1:
            raise ValueError("init[0] must equal 1")

    @classmethod
    def for_k(cls, k: int, n_max: int, init: Sequence[float] | None = None
              ) -> "JacobiParams":
        """P = Q of trace 1/k: theta = 1/k, lam = 1, default start at m_n = 1."""
        if k < 2:
            raise ValueError("k must be >= 2")
        if init is None:
            init = (1.0,) * (n_max + 1)
        return cls(theta=Fraction(1, k), lam=Fraction(1), n_max=n_max,
                   init=tuple(float(v) for v in init), k=k)

    def to_json_dict(self) -> dict:
        def enc(v):
            return str(v) if isinstance(v, Fraction) else v
        return {
            "theta": enc(self.theta),
            "lam": enc(self.lam),
            "n_max": self.n_max,
            "init": list(self.init),
            "k": self.k,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "JacobiParams":
        def dec(v):
            return Fraction(v) if isinstance(v, str) else v
        return cls(theta=dec(d["theta"]), lam=dec(d["lam"]), n_max=d["n_max"],
                   init=tuple(d["init"]), k=d.get("k"))


@dataclass
class MomentVector:
    """Moments on a time grid: values[i, n] is the n-th moment at t_grid[i]."""

    params: JacobiParams
    t_grid: np.ndarray
    values: np.ndarray
    tag: str = "m"

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not on the grid")
        return self.values[i]

    def range_violation(self) -> float:
        """How far the values stray outside [0,1] (0.0 when they do not)."""
        return float(max(0.0, self.values.max() - 1.0, -self.values.min()))

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["t"] + [f"{self.tag}_{n}" for n in range(self.params.n_max + 1)])
            for t, row in zip(self.t_grid, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def to_json_dict(self) -> dict:
        return {
            "tag": self.tag,
            "params": self.params.to_json_dict(),
            "t": [float(t) for t in self.t_grid],
            "values": [[float(v) for v in row] for row in self.values],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json_dict(cls, d: dict) -> "MomentVector":
        return cls(
            params=JacobiParams.from_json_dict(d["params"]),
            t_grid=np.asarray(d["t"], dtype=float),
            values=np.asarray(d["values"], dtype=float),
            tag=d["tag"],
        )


def _moment_rhs(theta: float, lam: float) -> Callable[[np.ndarray], np.ndarray]:
    """d/dt m_n = -n m_n + n theta m_{n-1}
                 + n lam theta sum_{j=0}^{n-2} m_{n-j-1} (m_j - m_{j+1})."""

    def rhs(y: np.ndarray) -> np.ndarray:
        n_max = y.size - 1
        dm = np.zeros_like(y)
        narr = np.arange(1, n_max + 1, dtype=float)
        dm[1:] = -narr * y[1:] + narr * theta * y[:-1]
        if n_max >= 2:
            conv = np.convolve(y[:-1] - y[1:], y[1:])
            dm[2:] += narr[1:] * lam * theta * conv[: n_max - 1]
        return dm

    return rhs


def _w_rhs(k: float) -> Callable[[np.ndarray], np.ndarray]:
    """d/dt s_n = -n s_n + n k s_{n-1}
                 + n k sum_{j=0}^{n-2} s_{n-j-1} s_j
                 - (n/k) sum_{j=0}^{n-2} s_{n-j-1} s_{j+1}."""

    def rhs(s: np.ndarray) -> np.ndarray:
        n_max = s.size - 1
        ds = np.zeros_like(s)
        narr = np.arange(1, n_max + 1, dtype=float)
        ds[1:] = -narr * s[1:] + narr * k * s[:-1]
        if n_max >= 2:
            a = np.convolve(s, s[1:])[: n_max - 1]
            b = np.convolve(s[1:], s[1:])[: n_max - 1]
            ds[2:] += narr[1:] * (k * a - b / k)
        return ds

    return rhs


def _rk4_path(rhs, y0: np.ndarray, t_grid: np.ndarray, substeps: np.ndarray
              ) -> np.ndarray:
    out = np.empty((t_grid.size, y0.size))
    out[0] = y = y0.copy()
    for i in range(t_grid.size - 1):
        h = (t_grid[i + 1] - t_grid[i]) / substeps[i]
        for _ in range(substeps[i]):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    return out


def _integrate(rhs, y0: np.ndarray, t_grid: np.ndarray, tol: float,
               dt_hint: float) -> np.ndarray:
    """Fixed-step RK4 with Richardson control: halve the step until two
    successive runs agree within tol per component (relative to the scale
    set by the initial value)."""
    scale = np.maximum(1.0, np.abs(y0))
    lengths = np.diff(t_grid)
    if np.any(lengths <= 0):
        raise ValueError("t_grid must be strictly increasing")
    substeps = np.maximum(1, np.ceil(lengths / dt_hint).astype(int))
    coarse = _rk4_path(rhs, y0, t_grid, substeps)
    factor = 2
    while factor <= _MAX_SUBSTEP_FACTOR:
        fine = _rk4_path(rhs, y0, t_grid, substeps * factor)
        if not np.all(np.isfinite(fine)):
            raise IntegrationError("non-finite state during integration")
        diff = np.max(np.abs(fine - coarse) / scale)
        if diff < tol:
            return fine
        coarse = fine
        factor *= 2
    raise IntegrationError(f"tolerance {tol} not reached at minimum step")


def integrate_moments(params: JacobiParams, t_end: float, *,
                      dt_out: float = 0.05, tol: float = 1e-10,
                      dt_hint: float = 1e-2) -> MomentVector:
    """Integrate the compressed-process hierarchy on a uniform output grid."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n_out = max(1, round(t_end / dt_out))
    t_grid = np.linspace(0.0, t_end, n_out + 1)
    return _integrate_on_grid(params, t_grid, tol, dt_hint)


def moments_at(params: JacobiParams, times: Sequence[float], *,
               tol: float = 1e-10, dt_hint: float = 1e-2) -> MomentVector:
    """Integrate with output exactly at the requested (sorted) times."""
    times = sorted({float(t) for t in times})
    if not times or times[0] < 0:
        raise ValueError("times must be nonnegative")
    t_grid = np.asarray(([0.0] if times[0] > 0 else []) + times)
    return _integrate_on_grid(params, t_grid, tol, dt_hint)


def _integrate_on_grid(params, t_grid, tol, dt_hint) -> MomentVector:
    rhs = _moment_rhs(float(params.theta), float(params.lam))
    y0 = np.asarray(params.init, dtype=float)
    values = _integrate(rhs, y0, t_grid, tol, dt_hint)
    return MomentVector(params=params, t_grid=t_grid, values=values, tag="m")


@dataclass
class WMomentResult:
    """Radial-part moments: raw s_n, rescaled r_n = s_n / k^(2n), and the
    worst residual of the rescaled values in their own hierarchy."""

    s: MomentVector
    r: MomentVector
    rescaled_residual: float


def integrate_w_moments(k: int, n_max: int, t_end: float, *,
                        dt_out: float = 0.05, tol: float = 1e-10,
                        dt_hint: float = 1e-2,
                        t_grid: Sequence[float] | None = None) -> WMomentResult:
    """Integrate the raw radial-part hierarchy from s_n(0) = k^(2n) and check
    that r_n = s_n / k^(2n) satisfies the rescaled hierarchy

        d/dt r_n = -n r_n + (n/k) r_{n-1}
                   + (n/k) sum_{j=0}^{n-2} r_{n-j-1} (r_j - r_{j+1}).
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if t_grid is None:
        n_out = max(1, round(t_end / dt_out))
        t_grid = np.linspace(0.0, t_end, n_out + 1)
    else:
        t_grid = np.asarray(t_grid, dtype=float)
    kf = float(k)
    powers = kf ** (2 * np.arange(n_max + 1))
    s0 = powers.copy()
    s_values = _integrate(_w_rhs(kf), s0, t_grid, tol, dt_hint)

    sp = JacobiParams.for_k(k, n_max)
    s_params = JacobiParams(theta=sp.theta, lam=sp.lam, n_max=n_max,
                            init=tuple(powers), k=k)
    s_vec = MomentVector(params=s_params, t_grid=t_grid, values=s_values, tag="s")
    r_values = s_values / powers
    r_vec = MomentVector(params=sp, t_grid=t_grid, values=r_values, tag="r")

    # The rescaled values must satisfy the r-hierarchy: compare the rescaled
    # raw vector field against the r-form vector field along the path.
    r_rhs = _moment_rhs(1.0 / kf, 1.0)
    s_rhs = _w_rhs(kf)
    residual = 0.0
    for srow, rrow in zip(s_values, r_values):
        residual = max(residual, float(np.max(np.abs(
            s_rhs(srow) / powers - r_rhs(rrow)))))
    return WMomentResult(s=s_vec, r=r_vec, rescaled_residual=residual)


def stationary_moments_catalan(k: int, n_max: int) -> List[Fraction]:
    """Stationary moments by the telescoping Catalan sum:
    m_n = 1 - sum_{j=0}^{n-1} (k-1)^(j+1) Catalan(j) / k^(2j+1)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    out = [Fraction(1)]
    acc = Fraction(0)
    for j in range(n_max):
        acc += Fraction((k - 1) ** (j + 1) * catalan(j), k ** (2 * j + 1))
        out.append(1 - acc)
    return out


@dataclass(frozen=True)
class DerivPoly:
    """Numerator polynomial of the n-th derivative of z^n / (1 + sqrt(z)):

        d^n/dz^n [ z^n / (1+sqrt(z)) ] = P_n(sqrt(z)) / (2^n (1+sqrt(z))^(n+1))

    coeffs ascending in x = sqrt(z), integer."""

    n: int
    coeffs: Tuple[int, ...]

    def __call__(self, x):
        acc = 0 * x
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc


def deriv_poly(n: int) -> DerivPoly:
    """Compute the derivative numerator polynomial symbolically in x=sqrt(z),
    using d/dz = (1/(2x)) d/dx on N(x)/(1+x)^m representations."""
    if not 0 <= n <= _DERIV_LIMIT:
        raise ValueError(f"deriv_poly supports 0 <= n <= {_DERIV_LIMIT}")
    num: Dict[int, Fraction] = {2 * n: Fraction(1)}
    m = 1
    for _ in range(n):
        # d/dx of num/(1+x)^m = (num'(1+x) - m num) / (1+x)^(m+1)
        nxt: Dict[int, Fraction] = {}
        for e, c in num.items():
            if e:
                nxt[e - 1] = nxt.get(e - 1, Fraction(0)) + e * c
                nxt[e] = nxt.get(e, Fraction(0)) + e * c
            nxt[e] = nxt.get(e, Fraction(0)) - m * c
        # then multiply by 1/(2x)
        num = {e - 1: c / 2 for e, c in nxt.items() if c}
        if any(e < 0 for e in num):
            raise ArithmeticError("nonpolynomial remainder in derivative chain")
        m += 1
    scale = 2**n
    coeffs = [0] * (max(num, default=0) + 1)
    for e, c in num.items():
        v = c * scale
        if v.denominator != 1:
            raise ArithmeticError("nonintegral coefficient in derivative chain")
        coeffs[e] = int(v)
    return DerivPoly(n=n, coeffs=tuple(coeffs))


def stationary_moments_derivative_poly(k: int, n_max: int) -> List[Fraction]:
    """Stationary moments by the derivative-polynomial closed form:

    m_n = 2 (k-1)^(n+1) / k^(2n+1) *
          ( binom(2n,n) - (k-2) k^n P_n((k-2)/k) / (2 n! (k-1)^(n+1)) ).
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    out = []
    x = Fraction(k - 2, k)
    for n in range(n_max + 1):
        p = deriv_poly(n)
        lead = Fraction(2 * (k - 1) ** (n + 1), k ** (2 * n + 1))
        inner = Fraction(math.comb(2 * n, n)) - Fraction(
            (k - 2) * k**n, 2 * math.factorial(n) * (k - 1) ** (n + 1)
        ) * p(x)
        out.append(lead * inner)
    return out


def tk_trace(k: int, n: int) -> Fraction:
    """Trace of the n-th power of (k P - 1), P a trace-1/k projection:
    h_n = ((k-1)^n + (-1)^n (k-1)) / k."""
    if k < 2 or n < 0:
        raise ValueError("need k >= 2 and n >= 0")
    return Fraction((k - 1) ** n + (-1) ** n * (k - 1), k)


def complement_moments(m: MomentVector) -> MomentVector:
    """Moments of the process built from the complementary projection 1-P
    (trace (k-1)/k), obtained from the trace duality

        m_n^c(t) = (m_n(t) + k - 2) / (k - 1).
    """
    k = m.params.k
    if k is None or k < 2:
        raise ValueError("complement transform needs the k-unitary setting")
    values = (m.values + (k - 2)) / (k - 1)
    params = JacobiParams(theta=Fraction(k - 1, k), lam=Fraction(1),
                          n_max=m.params.n_max, init=tuple(values[0]), k=k)
    return MomentVector(params=params, t_grid=m.t_grid.copy(),
                        values=values, tag="m")


def large_k_limit_check(t: float, n: int, k_list: Sequence[int], *,
                        tol: float = 1e-12) -> Dict[int, float]:
    """Gap |r_n(t) - e^{-nt}| for each k; the rescaled moments collapse onto
    exponentials as k grows."""
    out: Dict[int, float] = {}
    for k in k_list:
        params = JacobiParams.for_k(k, max(n, 1))
        vec = moments_at(params, [t], tol=tol)
        out[k] = float(abs(vec.at(t)[n] - math.exp(-n * t)))
    return out


def mp_limit_check(n_max: int) -> dict:
    """The k -> infinity stationary limit is the squared-singular-value law
    with Catalan moments: check 4^n (1/2)_n / (n+1)! = Catalan(n) exactly and
    tabulate k^n m_n(infinity) against Catalan(n) for growing k."""
    identity = True
    for n in range(n_max + 1):
        poch = Fraction(1)
        for i in range(n):
            poch *= Fraction(1, 2) + i
        lhs = Fraction(4**n) * poch / math.factorial(n + 1)
        if lhs != catalan(n):
            identity = False
    table: Dict[int, List[float]] = {}
    for k in (10, 100, 1000):
        stat = stationary_moments_catalan(k, n_max)
        table[k] = [float(Fraction(k**n) * stat[n] - catalan(n))
                    for n in range(n_max + 1)]
    return {"identity_exact": identity, "table": table}


def stationary_density(k: int, x):
    """Density of the stationary rescaled radial-part law on
    [0, 4(k-1)/k^2]: sqrt(4(k-1)x - k^2 x^2) / (2 pi x (1-x))."""
    x = np.asarray(x, dtype=float)
    top = 4 * (k - 1) / k**2
    inside = (x > 0) & (x < top) & (x < 1)
    out = np.zeros_like(x)
    xs = x[inside]
    out[inside] = np.sqrt(4 * (k - 1) * xs - k**2 * xs**2) / (
        2 * np.pi * xs * (1 - xs))
    return out


def stationary_cdf(k: int, x):
    """Closed-form distribution function of the stationary law: with
    X = 4(k-1)/k^2, q = (k-2)/k and phi = arcsin(sqrt(x/X)),

        F(x) = (k/pi) (phi - q arctan(q tan(phi))).
    """
    x = np.asarray(x, dtype=float)
    top = 4 * (k - 1) / k**2
    q = (k - 2) / k
    xc = np.clip(x, 0.0, top)
    phi = np.arcsin(np.sqrt(xc / top))
    with np.errstate(over="ignore"):
        val = (k / np.pi) * (phi - q * np.arctan(q * np.tan(phi)))
    val = np.where(x >= top, 1.0, val)
    return np.where(x <= 0, 0.0, val)
