"""Free-cumulant combinatorics over non-crossing partitions.

Everything here is exact: moments and cumulants are rational numbers, and
partition sums are full enumerations of the non-crossing lattice NC(n).
Cumulant functionals extend multiplicatively over the blocks of a partition,
and moment/cumulant inversion is the recursive solve over NC(n) obtained by
subtracting the contribution of every proper partition; mixed free cumulants
of free families vanish, which is what makes the compressed-moment sum below
collapse to single-variable data.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

Blocks = Tuple[Tuple[int, ...], ...]

_ENUM_LIMIT = 16
_COMPRESSED_LIMIT = 6


def catalan(n: int) -> int:
    """n-th Catalan number (2n)! / (n! (n+1)!)."""
    if n < 0:
        raise ValueError("catalan requires n >= 0")
    return math.comb(2 * n, n) // (n + 1)


class NCPartition:
    """A non-crossing partition of {1, ..., n}.

    Blocks are stored canonically: elements ascending inside each block,
    blocks ordered by their minimum.
    """

    __slots__ = ("blocks", "n")

    def __init__(self, blocks: Iterable[Iterable[int]], *, validate: bool = True):
        canon = tuple(sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0]))
        n = sum(len(b) for b in canon)
        if validate:
            seen = sorted(e for b in canon for e in b)
            if seen != list(range(1, n + 1)):
                raise ValueError("blocks do not partition {1..n}")
            if not self.is_noncrossing(canon):
                raise ValueError("blocks cross")
        self.blocks = canon
        self.n = n

    @staticmethod
    def is_noncrossing(blocks: Sequence[Sequence[int]]) -> bool:
        """Brute-force crossing test: two blocks cross iff their merged
        element sequence alternates membership at least three times."""
        bl = [set(b) for b in blocks]
        for i in range(len(bl)):
            for j in range(i + 1, len(bl)):
                merged = sorted(bl[i] | bl[j])
                changes = 0
                prev = None
                for e in merged:
                    cur = e in bl[i]
                    if prev is not None and cur != prev:
                        changes += 1
                    prev = cur
                if changes >= 3:
                    return False
        return True

    def block_sizes(self) -> Tuple[int, ...]:
        return tuple(sorted(len(b) for b in self.blocks))

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __eq__(self, other) -> bool:
        return isinstance(other, NCPartition) and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash(self.blocks)

    def __repr__(self) -> str:
        return f"NCPartition({list(map(list, self.blocks))})"


_nc_raw_memo: Dict[int, List[Blocks]] = {0: [()]}


def _shift(parts: List[Blocks], offset: int) -> List[Blocks]:
    if offset == 0:
        return parts
    return [tuple(tuple(e + offset for e in blk) for blk in p) for p in parts]


def _nc_raw(length: int) -> List[Blocks]:
    """All non-crossing partitions of {0..length-1} as tuples of tuples.

    Recursive first-block placement: choose the block containing 0 element by
    element; the gap between consecutive chosen elements, and the tail after
    the last one, carry independent non-crossing partitions.
    """
    if length in _nc_raw_memo:
        return _nc_raw_memo[length]
    out: List[Blocks] = []

    def rec(block: List[int], acc: List[Tuple[int, ...]], last: int) -> None:
        for tail in _shift(_nc_raw(length - 1 - last), last + 1):
            out.append((tuple(block), *acc, *tail))
        for nxt in range(last + 1, length):
            for gap in _shift(_nc_raw(nxt - last - 1), last + 1):
                rec(block + [nxt], acc + list(gap), nxt)

    rec([0], [], 0)
    _nc_raw_memo[length] = out
    return out


def enumerate_nc(n: int) -> List[NCPartition]:
    """Enumerate NC(n). Guarded at n <= 16 (the count is Catalan(n))."""
    if not 0 <= n <= _ENUM_LIMIT:
        raise ValueError(f"enumerate_nc supports 0 <= n <= {_ENUM_LIMIT}")
    shifted = _shift(_nc_raw(n), 1)
    return [NCPartition(p, validate=False) for p in shifted]


_profile_memo: Dict[int, Counter] = {}


def _block_size_profiles(n: int) -> Counter:
    """Counter mapping sorted block-size tuples to their multiplicity in NC(n)."""
    if n not in _profile_memo:
        cnt: Counter = Counter()
        for p in _nc_raw(n):
            cnt[tuple(sorted(len(b) for b in p))] += 1
        _profile_memo[n] = cnt
    return _profile_memo[n]


def legendre(n: int, x):
    """Legendre polynomial P_n(x) by the three-term recurrence
    (2m+1) x P_m = (m+1) P_{m+1} + m P_{m-1}.

    Exact for Fraction input, float for float input.
    """
    if n < 0:
        raise ValueError("legendre requires n >= 0")
    p_prev = x * 0 + 1
    if n == 0:
        return p_prev
    p_cur = x
    for m in range(1, n):
        p_prev, p_cur = p_cur, ((2 * m + 1) * x * p_cur - m * p_prev) / (m + 1)
    return p_cur


@dataclass
class CumulantTable:
    """Free cumulants kappa_1..kappa_{n_max} of a single element.

    ``alpha`` records the first moment when the table belongs to a projection
    of trace alpha; it is None for generic tables.
    """

    kappa: Dict[int, Fraction]
    n_max: int
    alpha: Fraction | None = None

    def __post_init__(self):
        missing = [m for m in range(1, self.n_max + 1) if m not in self.kappa]
        if missing:
            raise ValueError(f"cumulant table missing orders {missing}")

    def __getitem__(self, order: int) -> Fraction:
        return self.kappa[order]

    def to_json_dict(self) -> dict:
        out = {"kappa": {str(m): str(self.kappa[m]) for m in sorted(self.kappa)}}
        if self.alpha is not None:
            out["alpha"] = str(self.alpha)
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "CumulantTable":
        kappa = {int(m): Fraction(v) for m, v in data["kappa"].items()}
        alpha = Fraction(data["alpha"]) if "alpha" in data else None
        return cls(kappa=kappa, n_max=max(kappa), alpha=alpha)


def projection_cumulants(alpha: Fraction, n_max: int) -> CumulantTable:
    """Free cumulants of a projection with trace alpha in (0, 1).

    kappa_1 = alpha and, for m >= 2,
    kappa_m = (P_{m-2}(1-2 alpha) - P_m(1-2 alpha)) / (2 (2m-1))
    with P the Legendre polynomials.
    """
    alpha = Fraction(alpha)
    if not 0 < alpha < 1:
        raise ValueError("projection trace must lie in (0,1)")
    x = 1 - 2 * alpha
    kappa: Dict[int, Fraction] = {1: alpha}
    for m in range(2, n_max + 1):
        kappa[m] = (legendre(m - 2, x) - legendre(m, x)) / (2 * (2 * m - 1))
    return CumulantTable(kappa=kappa, n_max=n_max, alpha=alpha)


def moments_from_cumulants(table: CumulantTable, n_max: int) -> List[Fraction]:
    """Moments m_0..m_{n_max} from cumulants via
    m_n = sum over pi in NC(n) of prod over blocks V of kappa_{|V|}.

    The sum is grouped by block-size profile; the grouping is exact since
    each product depends only on block sizes.
    """
    if n_max > table.n_max:
        raise ValueError("table too short for requested order")
    moments: List[Fraction] = [Fraction(1)]
    for n in range(1, n_max + 1):
        total = Fraction(0)
        for profile, count in _block_size_profiles(n).items():
            prod = Fraction(1)
            for s in profile:
                prod *= table.kappa[s]
            total += count * prod
        moments.append(total)
    return moments


def cumulants_from_moments(moments: Sequence[Fraction], n_max: int) -> CumulantTable:
    """Invert the moment/cumulant relation over NC(n) recursively:
    kappa_n = m_n - sum over proper pi in NC(n) of prod kappa_{|V|}."""
    if len(moments) <= n_max or moments[0] != 1:
        raise ValueError("need moments m_0=1..m_{n_max}")
    kappa: Dict[int, Fraction] = {}
    for n in range(1, n_max + 1):
        acc = Fraction(0)
        for profile, count in _block_size_profiles(n).items():
            if profile == (n,):
                continue
            prod = Fraction(1)
            for s in profile:
                prod *= kappa[s]
            acc += count * prod
        kappa[n] = Fraction(moments[n]) - acc
    return CumulantTable(kappa=kappa, n_max=n_max)


StarCumulantOracle = Callable[[int, Tuple[str, ...]], object]


def haar_star_cumulant(order: int, pattern: Tuple[str, ...]):
    """Joint free cumulants of a Haar unitary and its adjoint.

    Nonzero only on alternating patterns of even length, where
    kappa_{2m}(u, u*, ..., u, u*) = (-1)^(m-1) Catalan(m-1).
    """
    if order % 2 == 1:
        return 0
    if any(pattern[i] == pattern[i + 1] for i in range(order - 1)):
        return 0
    m = order // 2
    return (-1) ** (m - 1) * catalan(m - 1)


def identity_star_cumulant(order: int, pattern: Tuple[str, ...]):
    """Cumulants of the unit (the time-zero unitary): kappa_1 = 1, rest 0."""
    return 1 if order == 1 else 0


def scalar_star_cumulant(c) -> StarCumulantOracle:
    """Oracle with only first cumulants nonzero, kappa_1(u) = kappa_1(u*) = c."""

    def oracle(order: int, pattern: Tuple[str, ...]):
        return c if order == 1 else 0

    return oracle


def compressed_jacobi_moment(star_cumulants: StarCumulantOracle, k: int, n: int):
    """Moment of the compressed process from unitary star-cumulants:

    k tau[(P u P u* P)^n] = sum over pi in NC(2n) of
        kappa_pi[u, u*, ..., u, u*] k^(|pi| - 2n)

    where P has trace 1/k and kappa_pi is the block-multiplicative extension
    of the supplied oracle over the alternating word u, u*, u, u*, ...
    """
    if not 1 <= n <= _COMPRESSED_LIMIT:
        raise ValueError(f"compressed_jacobi_moment supports 1 <= n <= {_COMPRESSED_LIMIT}")
    if k < 2:
        raise ValueError("need k >= 2")
    letters = tuple("u" if i % 2 == 0 else "u*" for i in range(2 * n))
    kk = Fraction(k)
    kpow = {b: kk ** (b - 2 * n) for b in range(1, 2 * n + 1)}
    total = 0
    for p in _nc_raw(2 * n):
        prod = 1
        for block in p:
            val = star_cumulants(len(block), tuple(letters[e] for e in block))
            if not val:
                prod = 0
                break
            prod *= val
        if prod:
            total += prod * kpow[len(p)]
    return total
