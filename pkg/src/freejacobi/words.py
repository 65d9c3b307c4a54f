"""Exact reduction engine for words in two symbols a, b subject to
x^2 = (k-2) x + (k-1) 1, with k a formal integer parameter.

Both symbols are traces of the form (sum of k unitaries) conjugates shifted
by -1; they satisfy the same quadratic, and every word in them reduces to a
combination of the five families

    1,  (ab)^j (j>=1),  (ba)^j (j>=1),  (ab)^j a (j>=0),  (ba)^j b (j>=0).

The engine works in the free Z[k]-module on those families (their linear
independence in the abstract quadratic algebra is assumed), reduces products
eagerly, and exposes the coefficient tables of [(1+a)(1+b)]^n together with
the derived triangle that expands compressed-process moments over traces of
alternating words.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

_POWER_LIMIT = 64


class KPoly:
    """Polynomial in the parameter k with integer coefficients.

    Immutable; coefficients ascending in degree with no trailing zeros.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs=(0,)):
        if isinstance(coeffs, int):
            coeffs = (coeffs,)
        c = list(coeffs)
        while c and c[-1] == 0:
            c.pop()
        self.coeffs = tuple(c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def __add__(self, other) -> "KPoly":
        other = _as_kpoly(other)
        a, b = self.coeffs, other.coeffs
        if len(a) < len(b):
            a, b = b, a
        out = list(a)
        for i, v in enumerate(b):
            out[i] += v
        return KPoly(out)

    __radd__ = __add__

    def __neg__(self) -> "KPoly":
        return KPoly([-v for v in self.coeffs])

    def __sub__(self, other) -> "KPoly":
        return self + (-_as_kpoly(other))

    def __rsub__(self, other) -> "KPoly":
        return _as_kpoly(other) + (-self)

    def __mul__(self, other) -> "KPoly":
        other = _as_kpoly(other)
        a, b = self.coeffs, other.coeffs
        if not a or not b:
            return KPoly()
        out = [0] * (len(a) + len(b) - 1)
        for i, u in enumerate(a):
            if u:
                for j, v in enumerate(b):
                    out[i + j] += u * v
        return KPoly(out)

    __rmul__ = __mul__

    def __pow__(self, e: int) -> "KPoly":
        if e < 0:
            raise ValueError("negative power")
        out = KPoly(1)
        base = self
        while e:
            if e & 1:
                out = out * base
            base = base * base
            e >>= 1
        return out

    def __call__(self, k):
        """Evaluate at a numeric k (int/Fraction/float)."""
        acc = 0 * k
        for c in reversed(self.coeffs):
            acc = acc * k + c
        return acc

    def __eq__(self, other) -> bool:
        return self.coeffs == _as_kpoly(other).coeffs

    def __hash__(self) -> int:
        return hash(self.coeffs)

    def __repr__(self) -> str:
        return f"KPoly({list(self.coeffs)})"

    def __str__(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        for i, c in enumerate(self.coeffs):
            if c == 0:
                continue
            if i == 0:
                parts.append(str(c))
            elif i == 1:
                parts.append(f"{c}*k")
            else:
                parts.append(f"{c}*k^{i}")
        return "+".join(parts).replace("+-", "-")


def _as_kpoly(v) -> KPoly:
    if isinstance(v, KPoly):
        return v
    if isinstance(v, int):
        return KPoly(v)
    raise TypeError(f"cannot coerce {type(v).__name__} to KPoly")


K = KPoly((0, 1))
KM1 = KPoly((-1, 1))  # k - 1
KM2 = KPoly((-2, 1))  # k - 2
ZERO = KPoly()
ONE = KPoly(1)


class WordElement:
    """Z[k]-combination of the five reduced word families.

    Maps are sparse: absent index means zero coefficient. aba[j] stands for
    (ab)^j a (j >= 0, so aba[0] is the letter a); bab[j] for (ba)^j b.
    """

    __slots__ = ("unit", "ab", "ba", "aba", "bab")

    def __init__(self):
        self.unit: KPoly = ZERO
        self.ab: Dict[int, KPoly] = {}
        self.ba: Dict[int, KPoly] = {}
        self.aba: Dict[int, KPoly] = {}
        self.bab: Dict[int, KPoly] = {}

    @classmethod
    def one(cls) -> "WordElement":
        x = cls()
        x.unit = ONE
        return x

    def _prune(self) -> "WordElement":
        for m in (self.ab, self.ba, self.aba, self.bab):
            for j in [j for j, c in m.items() if c.is_zero()]:
                del m[j]
        return self

    def __add__(self, other: "WordElement") -> "WordElement":
        out = WordElement()
        out.unit = self.unit + other.unit
        for name in ("ab", "ba", "aba", "bab"):
            mine, theirs = getattr(self, name), getattr(other, name)
            merged = dict(mine)
            for j, c in theirs.items():
                merged[j] = merged.get(j, ZERO) + c
            setattr(out, name, merged)
        return out._prune()

    def __eq__(self, other) -> bool:
        return (
            self.unit == other.unit
            and self.ab == other.ab
            and self.ba == other.ba
            and self.aba == other.aba
            and self.bab == other.bab
        )

    def __repr__(self) -> str:
        return (
            f"WordElement(unit={self.unit}, ab={self.ab}, ba={self.ba}, "
            f"aba={self.aba}, bab={self.bab})"
        )


def _bump(m: Dict[int, KPoly], j: int, c: KPoly) -> None:
    m[j] = m.get(j, ZERO) + c


def mul_right_a(x: WordElement) -> WordElement:
    """Right-multiply by a, reducing eagerly with
    a a = (k-2) a + (k-1) 1 and its word forms."""
    out = WordElement()
    if not x.unit.is_zero():
        _bump(out.aba, 0, x.unit)
    for j, c in x.ab.items():  # (ab)^j a stays reduced
        _bump(out.aba, j, c)
    for j, c in x.ba.items():  # (ba)^j a = (k-2)(ba)^j + (k-1)(ba)^{j-1} b
        _bump(out.ba, j, c * KM2)
        _bump(out.bab, j - 1, c * KM1)
    for j, c in x.aba.items():  # ((ab)^j a) a = (k-2)(ab)^j a + (k-1)(ab)^j
        _bump(out.aba, j, c * KM2)
        if j == 0:
            out.unit = out.unit + c * KM1
        else:
            _bump(out.ab, j, c * KM1)
    for j, c in x.bab.items():  # ((ba)^j b) a = (ba)^{j+1}
        _bump(out.ba, j + 1, c)
    return out._prune()


def mul_right_b(x: WordElement) -> WordElement:
    """Right-multiply by b (mirror image of mul_right_a)."""
    out = WordElement()
    if not x.unit.is_zero():
        _bump(out.bab, 0, x.unit)
    for j, c in x.ba.items():
        _bump(out.bab, j, c)
    for j, c in x.ab.items():  # (ab)^j b = (k-2)(ab)^j + (k-1)(ab)^{j-1} a
        _bump(out.ab, j, c * KM2)
        _bump(out.aba, j - 1, c * KM1)
    for j, c in x.bab.items():  # ((ba)^j b) b = (k-2)(ba)^j b + (k-1)(ba)^j
        _bump(out.bab, j, c * KM2)
        if j == 0:
            out.unit = out.unit + c * KM1
        else:
            _bump(out.ba, j, c * KM1)
    for j, c in x.aba.items():  # ((ab)^j a) b = (ab)^{j+1}
        _bump(out.ab, j + 1, c)
    return out._prune()


@dataclass
class CoeffTable:
    """Expansion of [(1+a)(1+b)]^n over the five families:

    m 1 + sum_j c_j (ab)^j + sum_j d_j (ba)^j
        + sum_j e_j (ab)^j a + sum_j f_j (ba)^j b
    """

    n: int
    m: KPoly
    c: Dict[int, KPoly] = field(default_factory=dict)
    d: Dict[int, KPoly] = field(default_factory=dict)
    e: Dict[int, KPoly] = field(default_factory=dict)
    f: Dict[int, KPoly] = field(default_factory=dict)

    def cj(self, j: int) -> KPoly:
        return self.c.get(j, ZERO)

    def check_symmetries(self) -> None:
        """The mirror symmetries of the expansion; violation means the
        reduction engine is broken."""
        n = self.n
        if not (self.m == self.f.get(0, ZERO) == self.e.get(0, ZERO)):
            raise AssertionError(f"m != e_0/f_0 at n={n}")
        for j in range(1, n + 1):
            if not (self.cj(j) == self.e.get(j - 1, ZERO) == self.f.get(j - 1, ZERO)):
                raise AssertionError(f"c_{n},{j} != e/f shift at n={n}")
        for j in range(1, n):
            if self.d.get(j, ZERO) != self.cj(j + 1):
                raise AssertionError(f"d_{n},{j} != c_{n},{j+1}")


def _table_from_element(n: int, x: WordElement) -> CoeffTable:
    t = CoeffTable(
        n=n, m=x.unit, c=dict(x.ab), d=dict(x.ba), e=dict(x.aba), f=dict(x.bab)
    )
    t.check_symmetries()
    return t


def jacobi_power_tables(n_max: int) -> List[CoeffTable]:
    """Coefficient tables of [(1+a)(1+b)]^n for n = 1..n_max."""
    if not 1 <= n_max <= _POWER_LIMIT:
        raise ValueError(f"power limited to 1..{_POWER_LIMIT}")
    tables = []
    x = WordElement.one()
    for n in range(1, n_max + 1):
        xa = mul_right_a(x)
        x = x + xa + mul_right_b(x) + mul_right_b(xa)
        tables.append(_table_from_element(n, x))
    return tables


def jacobi_power(n: int) -> CoeffTable:
    return jacobi_power_tables(n)[-1]


def knj_from_table(table: CoeffTable) -> Dict[int, KPoly]:
    """Triangle entries K_{n,j} assembled from the c-column of the table:

    K_{n,j} = c_j + c_{j+1} + 2(k-2) sum_{l=j+1}^n (k-1)^(l-j-1) c_l   (j>=1)
    K_{n,0} = 2(k-1) (c_1 + (k-2) sum_{l=2}^n (k-1)^(l-2) c_l)
    """
    n = table.n
    out: Dict[int, KPoly] = {}
    for j in range(1, n + 1):
        acc = table.cj(j) + table.cj(j + 1)
        tail = ZERO
        for l in range(j + 1, n + 1):
            tail = tail + KM1 ** (l - j - 1) * table.cj(l)
        out[j] = acc + 2 * KM2 * tail
    tail0 = ZERO
    for l in range(2, n + 1):
        tail0 = tail0 + KM1 ** (l - 2) * table.cj(l)
    out[0] = 2 * KM1 * (table.cj(1) + KM2 * tail0)
    return out


def knj_closed_form(n: int, j: int) -> KPoly:
    """Closed form K_{n,j} = (k-1)^(n-j) binom(2n, n-j), 0 <= j <= n."""
    if not 0 <= j <= n:
        raise ValueError("need 0 <= j <= n")
    return math.comb(2 * n, n - j) * KM1 ** (n - j)


def formal_trace(x: WordElement) -> Dict[int, KPoly]:
    """Trace of a word element as a linear form in tau_j = trace((ab)^j).

    Rules: tau(1)=1, tau((ab)^j)=tau((ba)^j)=tau_j, and
    tau((ab)^j a) = tau((ba)^j b) = (k-2) sum_{l=1}^j (k-1)^(j-l) tau_l,
    so a single letter is traceless. Index 0 of the result is the constant.
    """
    out: Dict[int, KPoly] = {0: x.unit}
    for src in (x.ab, x.ba):
        for j, c in src.items():
            out[j] = out.get(j, ZERO) + c
    for src in (x.aba, x.bab):
        for j, c in src.items():
            for l in range(1, j + 1):
                out[l] = out.get(l, ZERO) + c * KM2 * KM1 ** (j - l)
    return {j: c for j, c in out.items() if not c.is_zero() or j == 0}


def word_moment_poly(n: int) -> KPoly:
    """Constant term m_n of the expansion of [(1+a)(1+b)]^n."""
    return jacobi_power(n).m


def stationary_from_words(n: int, k: int) -> Fraction:
    """Stationary compressed moment via the word route: m_n(k) / k^(2n-1).

    The expansion gives k tau[(P u P u* P)^n] with u Haar; the constant term
    of [(1+a)(1+b)]^n divided by k^(2n-1) is the large-time moment.
    """
    return Fraction(word_moment_poly(n)(k), k ** (2 * n - 1))


def dump_coeff_tables_csv(tables: List[CoeffTable], path) -> None:
    """Long-format dump: one row per (n, series, j) with the polynomial."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "series", "j", "poly"])
        for t in tables:
            w.writerow([t.n, "m", 0, str(t.m)])
            for name in ("c", "d", "e", "f"):
                col = getattr(t, name)
                for j in sorted(col):
                    w.writerow([t.n, name, j, str(col[j])])


def dump_k_triangle_csv(tables: List[CoeffTable], path) -> None:
    """Wide-format triangle: rows n, columns j, cells K_{n,j} as c0+c1*k+..."""
    n_max = max(t.n for t in tables)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n"] + [f"j{j}" for j in range(n_max + 1)])
        for t in tables:
            knj = knj_from_table(t)
            row = [t.n] + [str(knj[j]) if j <= t.n else "" for j in range(n_max + 1)]
            w.writerow(row)
