"""Truncated power series engine for the spectral generating functions.

The moment vector of the compressed process determines, through a
unit-diagonal triangular system, the trace sequence w_j(t) of the
auxiliary unitary word, and from it three generating functions: the
moment generating function M_t, the correction series rho_t and, for
k = 2, the Laguerre series eta_t.  This module supplies exact and
floating truncated-series arithmetic, the transfer maps between these
objects, finite-difference residual checks for the limiting transport
equation, and a characteristic-curve integrator with a conserved
quantity monitor.
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Sequence

import numpy as np

from .moments import MomentVector, stationary_moments_catalan, tk_trace

# Default ceiling on the magnitude of the last retained term of a series
# evaluation; larger tails mean the truncation order cannot support the
# requested point.
TAIL_TOL = 1e-8


def _is_exact(c) -> bool:
    return isinstance(c, (int, Fraction))


@dataclass(frozen=True)
class TruncatedSeries:
    """Power series truncated at a fixed order.

    coeffs[n] is the coefficient of z^n.  All arithmetic is closed at
    the common truncation order: products and compositions discard the
    (correctly unknowable) higher terms.  Coefficients are either all
    rational (int or Fraction, exact mode) or floating point.
    """

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if len(self.coeffs) == 0:
            raise ValueError("need at least the constant coefficient")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def kind(self) -> str:
        return "rational" if all(_is_exact(c) for c in self.coeffs) else "float"

    @classmethod
    def zero(cls, order: int, exact: bool = True) -> "TruncatedSeries":
        fill = Fraction(0) if exact else 0.0
        return cls((fill,) * (order + 1))

    @classmethod
    def identity(cls, order: int, exact: bool = True) -> "TruncatedSeries":
        # The series of z itself.
        if order < 1:
            raise ValueError("order must be at least 1")
        fill = Fraction(0) if exact else 0.0
        one = Fraction(1) if exact else 1.0
        return cls((fill, one) + (fill,) * (order - 1))

    def _common_order(self, other: "TruncatedSeries") -> int:
        return min(self.order, other.order)

    def __add__(self, other):
        if isinstance(other, TruncatedSeries):
            n = self._common_order(other)
            return TruncatedSeries(
                tuple(self.coeffs[i] + other.coeffs[i] for i in range(n + 1)))
        c = list(self.coeffs)
        c[0] = c[0] + other
        return TruncatedSeries(tuple(c))

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return TruncatedSeries(tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        if isinstance(other, TruncatedSeries):
            n = self._common_order(other)
            return TruncatedSeries(
                tuple(self.coeffs[i] - other.coeffs[i] for i in range(n + 1)))
        return self.__add__(-other)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if isinstance(other, TruncatedSeries):
            n = self._common_order(other)
            out = []
            for i in range(n + 1):
                out.append(sum(self.coeffs[j] * other.coeffs[i - j]
                               for j in range(i + 1)))
            return TruncatedSeries(tuple(out))
        return TruncatedSeries(tuple(c * other for c in self.coeffs))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, scalar):
        if isinstance(scalar, TruncatedSeries):
            return self * scalar.reciprocal()
        if _is_exact(scalar) and self.kind == "rational":
            return TruncatedSeries(tuple(Fraction(c) / scalar for c in self.coeffs))
        return TruncatedSeries(tuple(c / scalar for c in self.coeffs))

    def reciprocal(self) -> "TruncatedSeries":
        c0 = self.coeffs[0]
        if c0 == 0:
            raise ValueError("reciprocal needs a nonzero constant term")
        inv0 = Fraction(1) / c0 if _is_exact(c0) else 1.0 / c0
        out = [inv0]
        for n in range(1, self.order + 1):
            acc = sum(self.coeffs[j] * out[n - j] for j in range(1, n + 1))
            out.append(-inv0 * acc)
        return TruncatedSeries(tuple(out))

    def sqrt(self) -> "TruncatedSeries":
        c0 = self.coeffs[0]
        if _is_exact(c0):
            c0 = Fraction(c0)
            rn, rd = math.isqrt(c0.numerator), math.isqrt(c0.denominator)
            if rn * rn != c0.numerator or rd * rd != c0.denominator:
                raise ValueError("constant term is not a rational square")
            s0 = Fraction(rn, rd)
        else:
            if not c0 > 0:
                raise ValueError("constant term must be positive")
            s0 = math.sqrt(c0)
        out = [s0]
        for n in range(1, self.order + 1):
            acc = sum(out[j] * out[n - j] for j in range(1, n))
            out.append((self.coeffs[n] - acc) / (2 * s0))
        return TruncatedSeries(tuple(out))

    def compose(self, inner: "TruncatedSeries") -> "TruncatedSeries":
        if inner.coeffs[0] != 0:
            raise ValueError("inner series must have zero constant term")
        n = min(self.order, inner.order)
        acc = TruncatedSeries.zero(n, exact=self.kind == "rational"
                                   and inner.kind == "rational")
        for c in reversed(self.coeffs[:n + 1]):
            acc = acc * inner + c
        return acc

    def derivative(self) -> "TruncatedSeries":
        if self.order == 0:
            return TruncatedSeries((0 * self.coeffs[0],))
        return TruncatedSeries(tuple(n * self.coeffs[n]
                                     for n in range(1, self.order + 1)))

    def z_ddz(self) -> "TruncatedSeries":
        # z d/dz acts diagonally on coefficients.
        return TruncatedSeries(tuple(n * c for n, c in enumerate(self.coeffs)))

    def scale_argument(self, a) -> "TruncatedSeries":
        # z -> a*z.
        out, p = [], 1
        for c in self.coeffs:
            out.append(c * p)
            p = p * a
        return TruncatedSeries(tuple(out))

    def truncate(self, order: int) -> "TruncatedSeries":
        if order > self.order:
            raise ValueError("cannot extend a truncated series")
        return TruncatedSeries(self.coeffs[:order + 1])

    def evaluate(self, z, tail_tol: float | None = None):
        """Horner evaluation; optionally require the last retained term
        to be negligible so the truncation order supports the point."""
        if tail_tol is not None:
            tail = abs(complex(self.coeffs[-1]) * complex(z) ** self.order)
            if not tail < tail_tol:
                raise ValueError(
                    f"tail term {tail:.3e} at order {self.order} exceeds "
                    f"{tail_tol:.1e}; point too far out for this truncation")
        acc = self.coeffs[-1]
        for c in reversed(self.coeffs[:-1]):
            acc = acc * z + c
        return acc

    def as_float(self) -> "TruncatedSeries":
        return TruncatedSeries(tuple(float(c) for c in self.coeffs))

    def to_json_dict(self) -> dict:
        if self.kind == "rational":
            coeffs = [str(Fraction(c)) for c in self.coeffs]
        else:
            coeffs = [float(c) for c in self.coeffs]
        return {"kind": self.kind, "coeffs": coeffs}

    @classmethod
    def from_json_dict(cls, d: dict) -> "TruncatedSeries":
        if d["kind"] == "rational":
            return cls(tuple(Fraction(c) for c in d["coeffs"]))
        return cls(tuple(float(c) for c in d["coeffs"]))


def geometric_series(order: int) -> TruncatedSeries:
    """1/(1-z) truncated, exact."""
    return TruncatedSeries((Fraction(1),) * (order + 1))


def alpha_map(z):
    """(1 - sqrt(1-z))/(1 + sqrt(1-z)), principal branch.

    Maps 0 to 0 and the cut plane C minus [1, oo) into the unit disk."""
    if isinstance(z, complex) and z.imag != 0:
        s = cmath.sqrt(1 - z)
    else:
        x = z.real if isinstance(z, complex) else z
        if x >= 1:
            raise ValueError("alpha_map hits the branch cut [1, oo)")
        s = math.sqrt(1 - x)
    return (1 - s) / (1 + s)


def alpha_inv(z):
    """4z/(1+z)^2, the inverse of alpha_map."""
    return 4 * z / (1 + z) ** 2


def alpha_inv_series(order: int) -> TruncatedSeries:
    """Exact expansion of 4z/(1+z)^2."""
    one_plus_z = TruncatedSeries(
        (Fraction(1), Fraction(1)) + (Fraction(0),) * (order - 1))
    inv = one_plus_z.reciprocal()
    return 4 * TruncatedSeries.identity(order) * inv * inv


def stationary_mgf(k: int, order: int) -> TruncatedSeries:
    """Exact series of (2 - k + sqrt(k^2 - 4(k-1)z)) / (2(1-z)).

    Coefficient n is the stationary moment m_n(infinity)."""
    if k < 2:
        raise ValueError("k must be at least 2")
    radicand = TruncatedSeries(
        (Fraction(k * k), Fraction(-4 * (k - 1))) + (Fraction(0),) * (order - 1))
    root = radicand.sqrt()
    return (root + (2 - k)) * geometric_series(order) * Fraction(1, 2)


def binomial_transfer(a: TruncatedSeries) -> TruncatedSeries:
    """b_n = sum_j binom(2n, n-j) a_j."""
    out = []
    for n in range(a.order + 1):
        out.append(sum(math.comb(2 * n, n - j) * a.coeffs[j]
                       for j in range(n + 1)))
    return TruncatedSeries(tuple(out))


def binomial_transfer_inverse(b: TruncatedSeries) -> TruncatedSeries:
    """Back-substitution through the unit-diagonal triangular system."""
    out: list = []
    for n in range(b.order + 1):
        acc = sum(math.comb(2 * n, n - j) * out[j] for j in range(n))
        out.append(b.coeffs[n] - acc)
    return TruncatedSeries(tuple(out))


def rho_from_moment_row(row: Sequence, k: int,
                        stationary: Sequence[Fraction] | None = None
                        ) -> TruncatedSeries:
    """Recover rho_t from one row m_0..m_N of moments.

    The scaled gaps b_n = k^(2n-1)(m_n - m_n(inf))/(k-1)^n are the
    binomial transfer of the rho coefficients w_n/(k-1)^n, so one
    triangular inversion yields the series.  Exact when the row is
    exact."""
    n_max = len(row) - 1
    if stationary is None:
        stationary = stationary_moments_catalan(k, n_max)
    exact = all(_is_exact(c) for c in row)
    b = [Fraction(0) if exact else 0.0]
    for n in range(1, n_max + 1):
        gap = row[n] - stationary[n]
        if exact:
            b.append(Fraction(k) ** (2 * n - 1) * gap / Fraction(k - 1) ** n)
        else:
            b.append(float(k) ** (2 * n - 1) * gap / float(k - 1) ** n)
    return binomial_transfer_inverse(TruncatedSeries(tuple(b)))


def moment_row_from_rho(rho: TruncatedSeries, k: int,
                        stationary: Sequence[Fraction] | None = None) -> list:
    """Forward map: moments m_0..m_N from a rho series."""
    n_max = rho.order
    if stationary is None:
        stationary = stationary_moments_catalan(k, n_max)
    b = binomial_transfer(rho)
    exact = rho.kind == "rational"
    row = [stationary[0] if exact else float(stationary[0])]
    for n in range(1, n_max + 1):
        scale = (Fraction(k - 1) ** n / Fraction(k) ** (2 * n - 1) if exact
                 else float(k - 1) ** n / float(k) ** (2 * n - 1))
        base = stationary[n] if exact else float(stationary[n])
        row.append(base + scale * b.coeffs[n])
    return row


def w_sequence(rho: TruncatedSeries, k: int) -> list:
    """Unitary-word traces w_j = (k-1)^j * coefficient j of rho."""
    return [c * (k - 1) ** j for j, c in enumerate(rho.coeffs)]


def extract_rho_moments(m: MomentVector, k: int) -> List[TruncatedSeries]:
    """rho_t at every grid time of an integrated moment vector."""
    if m.params.theta != Fraction(1, k) or m.params.lam != 1:
        raise ValueError("moment vector is not the theta=1/k, lambda=1 process")
    stationary = stationary_moments_catalan(k, m.params.n_max)
    return [rho_from_moment_row(row, k, stationary) for row in m.values]


def rho0_from_closed_form(k: int, order: int) -> TruncatedSeries:
    """Taylor coefficients of (k-1)z(1-z) / ((k-1-z)(1+z-kz)), exact."""
    num = TruncatedSeries(
        (Fraction(0), Fraction(k - 1), Fraction(-(k - 1)))
        + (Fraction(0),) * (order - 2))
    d1 = TruncatedSeries(
        (Fraction(k - 1), Fraction(-1)) + (Fraction(0),) * (order - 1))
    d2 = TruncatedSeries(
        (Fraction(1), Fraction(1 - k)) + (Fraction(0),) * (order - 1))
    return num * (d1 * d2).reciprocal()


def rho0_from_traces(k: int, order: int) -> TruncatedSeries:
    """Same series assembled from the closed-form traces h_{2n}/(k-1)^n."""
    coeffs = [Fraction(0)]
    for n in range(1, order + 1):
        coeffs.append(tk_trace(k, 2 * n) / Fraction(k - 1) ** n)
    return TruncatedSeries(tuple(coeffs))


def laguerre_eval(m: int, alpha: float, x: float) -> float:
    """Generalized Laguerre polynomial by the three-term recurrence."""
    if m < 0:
        raise ValueError("degree must be nonnegative")
    prev = 1.0
    if m == 0:
        return prev
    cur = 1.0 + alpha - x
    for i in range(1, m):
        prev, cur = cur, ((2 * i + 1 + alpha - x) * cur - (i + alpha) * prev) / (i + 1)
    return cur


def eta_t2(t: float, order: int) -> TruncatedSeries:
    """Laguerre series with coefficient n equal to L_{n-1}^{(1)}(2nt)/n."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    coeffs = [0.0]
    for n in range(1, order + 1):
        coeffs.append(laguerre_eval(n - 1, 1.0, 2.0 * n * t) / n)
    return TruncatedSeries(tuple(coeffs))


def transport_prefactor(k: int, order: int) -> TruncatedSeries:
    """Series of (4(k-1) - k^2 a(z)) / (4(k-1)(1 - a(z))) with
    a = alpha_inv, the rational factor multiplying rho^2 in the
    transport equation."""
    a = alpha_inv_series(order)
    num = 4 * (k - 1) - Fraction(k * k) * a
    den = 4 * (k - 1) * (1 - a)
    return num * den.reciprocal()


def transport_prefactor_direct(k: int, order: int) -> TruncatedSeries:
    """Simplified form ((k-1)(1+z)^2 - k^2 z) / ((k-1)(1-z)^2)."""
    num = TruncatedSeries(
        (Fraction(k - 1), Fraction(2 * (k - 1) - k * k), Fraction(k - 1))
        + (Fraction(0),) * (order - 2))
    den = TruncatedSeries(
        (Fraction(k - 1), Fraction(-2 * (k - 1)), Fraction(k - 1))
        + (Fraction(0),) * (order - 2))
    return num * den.reciprocal()


def _central_residual(snapshots: Sequence[TruncatedSeries], dt: float,
                      rhs: Callable[[TruncatedSeries], TruncatedSeries],
                      drop: int = 2) -> np.ndarray:
    """Worst per-coefficient gap between a central time difference of the
    snapshots and rhs(snapshot).  With five or more snapshots the
    fourth-order five-point stencil is used (and only indices with full
    stencil support are scored); with three, the plain three-point one."""
    if len(snapshots) < 3:
        raise ValueError("need at least three equally spaced snapshots")
    if dt <= 0:
        raise ValueError("snapshot spacing must be positive")
    order = snapshots[0].order
    if any(s.order != order for s in snapshots):
        raise ValueError("snapshots must share one truncation order")
    wide = len(snapshots) >= 5
    keep = order - drop + 1
    worst = np.zeros(keep)
    idx = range(2, len(snapshots) - 2) if wide else range(1, len(snapshots) - 1)
    for i in idx:
        if wide:
            ddt = (snapshots[i - 2] - snapshots[i + 2]
                   + 8.0 * (snapshots[i + 1] - snapshots[i - 1])) * (1.0 / (12.0 * dt))
        else:
            ddt = (snapshots[i + 1] - snapshots[i - 1]) * (1.0 / (2.0 * dt))
        resid = ddt - rhs(snapshots[i])
        vals = np.abs(np.array([float(c) for c in resid.coeffs[:keep]]))
        worst = np.maximum(worst, vals)
    return worst


def pde0_residual(snapshots: Sequence[TruncatedSeries], dt: float, k: int
                  ) -> np.ndarray:
    """Max residual per coefficient of d/dt rho = -z d/dz [rho + phi rho^2].

    The time derivative is a central difference over the given equally
    spaced snapshots; everything else is exact series arithmetic.  The
    top two coefficients are dropped: their accuracy is limited by the
    amplification of moment error through the triangular inversion, not
    by the equation."""
    phi = transport_prefactor(k, snapshots[0].order)

    def rhs(rho: TruncatedSeries) -> TruncatedSeries:
        return -((rho + phi * rho * rho).z_ddz())

    return _central_residual(snapshots, dt, rhs)


def pde1_residual(snapshots: Sequence[TruncatedSeries], dt: float, k: int
                  ) -> np.ndarray:
    """Residual of d/dt M = -(z/k) d/dz [(k-2)M + (1-z)M^2] on moment
    generating function snapshots."""
    order = snapshots[0].order
    one_minus_z = TruncatedSeries(
        (Fraction(1), Fraction(-1)) + (Fraction(0),) * (order - 1))

    def rhs(mser: TruncatedSeries) -> TruncatedSeries:
        inner = (k - 2) * mser + one_minus_z * mser * mser
        return inner.z_ddz() * Fraction(-1, k)

    return _central_residual(snapshots, dt, rhs)


def pde2_residual(snapshots: Sequence[TruncatedSeries], dt: float
                  ) -> np.ndarray:
    """Residual of the k=2 reduction d/dt eta = -z d/dz [eta^2]."""

    def rhs(eta: TruncatedSeries) -> TruncatedSeries:
        return -((eta * eta).z_ddz())

    return _central_residual(snapshots, dt, rhs)


def lambda_tilde(k: int, y):
    """(k^2 - (k-2)^2 y^2)/4, the quadratic weight on the y side."""
    return (k * k - (k - 2) ** 2 * y * y) / 4


def involution(y):
    """(y+1)/(y-1); its own inverse, exchanging the z and y coordinates."""
    return (y + 1) / (y - 1)


def k2_characteristic(z0: complex, t: float) -> complex:
    """Explicit k = 2 characteristic curve z0 * exp(t(1+z0)/(1-z0))."""
    return z0 * cmath.exp(t * (1 + z0) / (1 - z0))


@dataclass
class CharacteristicState:
    """Characteristic path with its conserved-quantity audit trail.

    y_path and f_path sample the curve at the output grid; drift is the
    largest observed |lambda_tilde(y)f^2 + f - g0|.  branch_crossed is
    set (and the trace truncated) if 1 + 4 g0 lambda_tilde(y) crosses
    the negative real axis, where the principal square root underlying
    the conserved quantity would jump sheets."""

    k: int
    y0: complex
    g0: complex
    t_grid: List[float]
    y_path: List[complex]
    f_path: List[complex]
    drift: float
    branch_crossed: bool

    def z_path(self) -> List[complex]:
        return [involution(y) for y in self.y_path]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "re_y", "im_y", "re_f", "im_f", "drift"])
            for t, y, f in zip(self.t_grid, self.y_path, self.f_path):
                g = lambda_tilde(self.k, y) * f * f + f
                writer.writerow([repr(t), repr(y.real), repr(y.imag),
                                 repr(f.real), repr(f.imag),
                                 repr(abs(g - self.g0))])


def _crosses_negative_axis(q1: complex, q2: complex) -> bool:
    # Straight segment from q1 to q2 crossing the cut (-oo, 0].
    if q1.imag == 0 and q1.real <= 0:
        return True
    if q1.imag * q2.imag >= 0:
        return False
    s = q1.imag / (q1.imag - q2.imag)
    return q1.real + s * (q2.real - q1.real) <= 0


def characteristic_trace(k: int, z0: complex, t_end: float, m: MomentVector
                         ) -> CharacteristicState:
    """Integrate the y-side characteristic ODE against rho snapshots.

    y' = (1-y^2)/2 * (1 + 2 lambda_tilde(y) f),  f = rho_t(z(y))/(k-1),

    with RK4 stages reading rho at exactly aligned snapshot times: the
    moment vector must be sampled at half the step size, so stage times
    t, t+h/2, t+h land on grid points and no time interpolation is ever
    done.  The conserved combination lambda_tilde(y)f^2 + f is recorded
    along the way."""
    t_grid = np.asarray(m.t_grid, dtype=float)
    deltas = np.diff(t_grid)
    if deltas.size < 2 or np.max(np.abs(deltas - deltas[0])) > 1e-12:
        raise ValueError("moment vector must be on a uniform grid")
    delta = float(deltas[0])
    h = 2.0 * delta
    n_steps = int(round(t_end / h))
    if abs(n_steps * h - t_end) > 1e-9 or n_steps < 1:
        raise ValueError("t_end must be an even number of grid intervals")
    if 2 * n_steps > deltas.size:
        raise ValueError("moment vector does not reach t_end")

    snaps = extract_rho_moments(m, k)

    def f_at(idx: int, y: complex) -> complex:
        z = involution(y)
        return snaps[idx].evaluate(z, tail_tol=TAIL_TOL) / (k - 1)

    def slope(idx: int, y: complex) -> complex:
        return (1 - y * y) / 2 * (1 + 2 * lambda_tilde(k, y) * f_at(idx, y))

    y = complex(involution(complex(z0)))
    f0 = snaps[0].evaluate(complex(z0), tail_tol=TAIL_TOL) / (k - 1)
    g0 = lambda_tilde(k, y) * f0 * f0 + f0
    q_prev = 1 + 4 * g0 * lambda_tilde(k, y)

    times, ys, fs = [0.0], [y], [f0]
    drift, crossed = 0.0, False
    for i in range(n_steps):
        base = 2 * i
        k1 = slope(base, y)
        k2 = slope(base + 1, y + 0.5 * h * k1)
        k3 = slope(base + 1, y + 0.5 * h * k2)
        k4 = slope(base + 2, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

        f = f_at(base + 2, y)
        g = lambda_tilde(k, y) * f * f + f
        drift = max(drift, abs(g - g0))
        times.append((i + 1) * h)
        ys.append(y)
        fs.append(f)

        q = 1 + 4 * g0 * lambda_tilde(k, y)
        if _crosses_negative_axis(q_prev, q):
            crossed = True
            break
        q_prev = q

    return CharacteristicState(k=k, y0=ys[0], g0=g0, t_grid=times,
                               y_path=ys, f_path=fs, drift=drift,
                               branch_crossed=crossed)


def mgf_relation_check(m: MomentVector, k: int, z_samples: Sequence[complex]
                       ) -> float:
    """Largest gap between the moment generating function evaluated from
    the integrated moments and its stationary-plus-correction form

        M_inf(z) + k^2/sqrt(k^2 - 4(k-1)z) * rho_t(alpha(4(k-1)z/k^2)),

    over all grid times and sample points."""
    rhos = extract_rho_moments(m, k)
    worst = 0.0
    for row, rho in zip(m.values, rhos):
        mser = TruncatedSeries(tuple(float(c) for c in row))
        for z in z_samples:
            z = complex(z)
            lhs = mser.evaluate(z, tail_tol=TAIL_TOL)
            root = cmath.sqrt(k * k - 4 * (k - 1) * z)
            m_inf = (2 - k + root) / (2 * (1 - z))
            arg = alpha_map(4 * (k - 1) * z / (k * k))
            rhs = m_inf + k * k / root * rho.evaluate(arg, tail_tol=TAIL_TOL)
            worst = max(worst, abs(lhs - rhs))
    return worst
