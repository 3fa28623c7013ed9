"""How many k-subsamples a dataset of n units can support.

Two random k-subsets of [n] overlap in a Hypergeometric(n, k, k) number of
units. A union bound over the C(C, 2) pairs gives

    pr(max pairwise overlap >= ell) <= C^2 / 2 * pr(overlap >= ell),

so any C <= sqrt(2 * p_tol / pr(overlap >= ell)) keeps the probability of a
large overlap below p_tol. The pairwise tail is either evaluated exactly or
bounded by exp(-2 k b^2) with b = ell/k - k/n, valid for ell >= k^2/n.
"""

from __future__ import annotations

import decimal
import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dist_core import DiscretePmf, bernoulli_sum_pmf, hypergeom_log_tail, log_binomial, poisson_cdf
from .errors import DomainError


class TailMethod(enum.Enum):
    EXACT = "exact_tail"
    HOEFFDING = "hoeffding"


@dataclass(frozen=True)
class CapacityQuery:
    n: int
    k: int
    ell: int
    p_tol: float

    def __post_init__(self):
        if not 0 < self.k <= self.n:
            raise DomainError(f"need 0 < k <= n, got k={self.k}, n={self.n}")
        if not 0 <= self.ell <= self.k:
            raise DomainError(f"need 0 <= ell <= k, got ell={self.ell}, k={self.k}")
        if not 0.0 < self.p_tol <= 1.0:
            raise DomainError(f"p_tol must lie in (0, 1], got {self.p_tol}")

    @property
    def r1(self) -> float:
        return self.k / self.n

    @property
    def r2(self) -> float:
        return self.ell / self.k


@dataclass(frozen=True)
class CapacityResult:
    """Largest study count certified by the union bound.

    ``c_bound`` is an exact integer even when astronomically large;
    ``log_c_bound`` is its real-valued natural log before flooring.
    """

    c_bound: int
    method: TailMethod
    pairwise_tail: float
    log_pairwise_tail: float
    log_c_bound: float
    r1: float
    r2: float


def _log_hoeffding_tail(q: CapacityQuery) -> float:
    if q.ell * q.n < q.k * q.k:
        raise DomainError(
            f"Hoeffding bound needs ell >= k^2/n = {q.k * q.k / q.n:g}; got ell={q.ell}"
        )
    b = Fraction(q.ell, q.k) - Fraction(q.k, q.n)
    return float(-2 * q.k * b * b)


def log_pairwise_overlap_tail(q: CapacityQuery, method: TailMethod = TailMethod.EXACT) -> float:
    method = TailMethod(method)
    if method is TailMethod.EXACT:
        return hypergeom_log_tail(q.n, q.k, q.k, q.ell)
    return _log_hoeffding_tail(q)


def pairwise_overlap_tail(q: CapacityQuery, method: TailMethod = TailMethod.EXACT) -> float:
    """pr(|X1 ∩ X2| >= ell) for independent uniform k-subsets, or its bound."""
    return math.exp(log_pairwise_overlap_tail(q, method))


def _floor_exp(x: float) -> int:
    if x < 700:
        return math.floor(math.exp(x))
    with decimal.localcontext() as ctx:
        ctx.prec = 80
        return int(decimal.Decimal(x).exp().to_integral_value(rounding=decimal.ROUND_FLOOR))


def max_studies(q: CapacityQuery, method: TailMethod = TailMethod.EXACT) -> CapacityResult:
    method = TailMethod(method)
    log_tail = log_pairwise_overlap_tail(q, method)
    log_c = 0.5 * (math.log(2.0 * q.p_tol) - log_tail)
    return CapacityResult(
        c_bound=_floor_exp(log_c),
        method=method,
        pairwise_tail=math.exp(log_tail),
        log_pairwise_tail=log_tail,
        log_c_bound=log_c,
        r1=q.r1,
        r2=q.r2,
    )


@dataclass(frozen=True)
class CapacityRow:
    ell: int
    ratio: float
    result: CapacityResult | None
    error: str | None = None


def capacity_table(
    n: int, k: int, p_tol: float, ell_values: Sequence[int], method: TailMethod = TailMethod.HOEFFDING
) -> list[CapacityRow]:
    """One row per ell, in input order; a failing row records its error."""
    rows = []
    for ell in ell_values:
        try:
            res = max_studies(CapacityQuery(n, k, ell, p_tol), method)
            rows.append(CapacityRow(ell, ell / k, res))
        except DomainError as exc:
            rows.append(CapacityRow(ell, ell / k if k else math.nan, None, str(exc)))
    return rows


def guaranteed_overlap_two(N: int, k: int) -> int:
    """Smallest possible overlap of two k-subsets of an N-set."""
    if not 0 <= k <= N:
        raise DomainError(f"need 0 <= k <= N, got k={k}, N={N}")
    return max(0, 2 * k - N)


def min_k_for_overlap_fraction(N: int, lam: float) -> int:
    """Smallest k forcing any two k-subsets of an N-set to share at least
    a fraction ``lam`` of their units."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"overlap fraction must lie in [0, 1], got {lam}")
    frac = Fraction(lam).limit_denominator(10**12)
    k = math.ceil(Fraction(N) / (2 - frac))
    assert guaranteed_overlap_two(N, k) >= frac * k
    return k


@dataclass(frozen=True)
class PigeonholeResult:
    """C(N, k) + 1 draws force two identical subsets.

    ``value`` is exact when C(N, k) < 2**62 and None otherwise, in which case
    only ``log_binomial`` (ln C(N, k)) is meaningful.
    """

    value: int | None
    log_binomial: float
    overflow: bool


def pigeonhole_capacity(N: int, k: int) -> PigeonholeResult:
    if not 0 <= k <= N:
        raise DomainError(f"need 0 <= k <= N, got k={k}, N={N}")
    lb = log_binomial(N, k)
    if lb < 62 * math.log(2) + 1:
        c = math.comb(N, k)
        if c < 2**62:
            return PigeonholeResult(c + 1, lb, False)
    return PigeonholeResult(None, lb, True)


@dataclass(frozen=True, eq=False)
class UnitReuseReport:
    """How often one unit is drawn when study i includes it with probability r_i."""

    exact_pmf: DiscretePmf
    poisson_lambda: float
    lecam_bound: float | None
    pr_ge2_exact: float
    pr_ge2_poisson: float
    sup_cdf_distance: float


def unit_reuse(rates: Sequence[float]) -> UnitReuseReport:
    rates = [float(r) for r in rates]
    exact = bernoulli_sum_pmf(rates)
    lam = math.fsum(rates)
    p = exact.probabilities
    pr_ge2_exact = max(0.0, 1.0 - math.fsum(p[:2]))
    pr_ge2_poisson = max(0.0, -math.expm1(-lam) - lam * math.exp(-lam))

    exact_cdf = exact.cdf()
    poisson = np.array([poisson_cdf(lam, x) for x in range(len(p))])
    # beyond the last support point the exact cdf is 1 and the Poisson gap only shrinks
    sup_distance = float(np.max(np.abs(exact_cdf - poisson)))

    lecam = None
    if not rates or max(rates) <= 0.25:
        lecam = 0.0 if lam == 0 else 16.0 * math.fsum(r * r for r in rates) / lam
    return UnitReuseReport(exact, lam, lecam, pr_ge2_exact, pr_ge2_poisson, sup_distance)
