"""Probability primitives: log-space combinatorics, hypergeometric, normal,
Poisson and Poisson-binomial distributions.

Everything here is pure. Combinatorial quantities are carried in natural-log
units so that coefficients such as C(10000, 2000) never overflow.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

PMF_SUM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscretePmf:
    """Probability mass function on the integers support_min .. support_min + len - 1."""

    support_min: int
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).copy()
        if p.ndim != 1 or p.size == 0:
            raise DomainError("pmf needs a non-empty 1-d probability vector")
        if np.any(~np.isfinite(p)) or np.any(p < -1e-15) or np.any(p > 1 + 1e-15):
            raise DomainError("pmf entries must lie in [0, 1]")
        p = np.clip(p, 0.0, 1.0)
        total = math.fsum(p)
        if abs(total - 1.0) > PMF_SUM_TOL:
            raise DomainError(f"pmf sums to {total!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "support_min", int(self.support_min))

    @property
    def support_max(self) -> int:
        return self.support_min + len(self.probabilities) - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.support_min, self.support_max + 1)

    def pmf(self, x: int) -> float:
        if x < self.support_min or x > self.support_max:
            return 0.0
        return float(self.probabilities[x - self.support_min])

    def cdf(self) -> np.ndarray:
        return np.minimum(np.cumsum(self.probabilities), 1.0)

    def mean(self) -> float:
        return math.fsum(self.support * self.probabilities)

    def __len__(self):
        return len(self.probabilities)

    def __repr__(self):
        return f"DiscretePmf(support_min={self.support_min}, probabilities={self.probabilities.tolist()})"


class LogCombinatorics:
    """Cached table of ln(i!) for i = 0..n_max.

    Entries are filled from the log-gamma function, not by accumulating
    logarithms, so the relative error stays at machine precision.
    """

    def __init__(self, n_max: int):
        if n_max < 1:
            raise DomainError("n_max must be at least 1")
        table = special.gammaln(np.arange(n_max + 1, dtype=float) + 1.0)
        table[0] = table[1] = 0.0
        table.flags.writeable = False
        self.n_max = n_max
        self._table = table

    def log_factorial(self, i: int) -> float:
        if i < 0 or i > self.n_max:
            raise DomainError(f"log_factorial argument {i} outside 0..{self.n_max}")
        return float(self._table[i])

    def log_binomial(self, n: int, k: int) -> float:
        _check_binomial_args(n, k)
        if n > self.n_max:
            raise DomainError(f"n={n} exceeds cached range {self.n_max}")
        return float(self._table[n] - self._table[k] - self._table[n - k])


def _check_binomial_args(n: int, k: int) -> None:
    if n < 0 or k < 0:
        raise DomainError("binomial arguments must be nonnegative")
    if k > n:
        raise DomainError(f"binomial coefficient needs k <= n, got n={n}, k={k}")


def log_binomial(n: int, k: int) -> float:
    """ln C(n, k)."""
    _check_binomial_args(n, k)
    if k == 0 or k == n:
        return 0.0
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _check_hypergeom(N: int, K: int, n: int) -> None:
    if N < 0:
        raise DomainError("population size must be nonnegative")
    if not 0 <= K <= N:
        raise DomainError(f"successes K={K} must lie in [0, N={N}]")
    if not 0 <= n <= N:
        raise DomainError(f"draws n={n} must lie in [0, N={N}]")


def hypergeom_support(N: int, K: int, n: int) -> tuple[int, int]:
    _check_hypergeom(N, K, n)
    return max(0, n + K - N), min(n, K)


def _hypergeom_logpmf_array(N: int, K: int, n: int, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return (
        special.gammaln(K + 1) - special.gammaln(xs + 1) - special.gammaln(K - xs + 1)
        + special.gammaln(N - K + 1) - special.gammaln(n - xs + 1) - special.gammaln(N - K - n + xs + 1)
        - (special.gammaln(N + 1) - special.gammaln(n + 1) - special.gammaln(N - n + 1))
    )


def hypergeom_pmf(N: int, K: int, n: int, x: int) -> float:
    """pr(X = x) for X ~ Hypergeometric(population N, K successes, n draws)."""
    lo, hi = hypergeom_support(N, K, n)
    if x < lo or x > hi:
        return 0.0
    return math.exp(log_binomial(K, x) + log_binomial(N - K, n - x) - log_binomial(N, n))


def hypergeom_distribution(N: int, K: int, n: int) -> DiscretePmf:
    lo, hi = hypergeom_support(N, K, n)
    p = np.exp(_hypergeom_logpmf_array(N, K, n, np.arange(lo, hi + 1)))
    return DiscretePmf(lo, p / math.fsum(p))


def hypergeom_log_tail(N: int, K: int, n: int, ell: int) -> float:
    """ln pr(X >= ell); -inf when ell exceeds the support."""
    lo, hi = hypergeom_support(N, K, n)
    if ell <= lo:
        return 0.0
    if ell > hi:
        return -math.inf
    logs = _hypergeom_logpmf_array(N, K, n, np.arange(ell, hi + 1))
    return float(min(special.logsumexp(logs), 0.0))


def hypergeom_tail(N: int, K: int, n: int, ell: int) -> float:
    """pr(X >= ell)."""
    return math.exp(hypergeom_log_tail(N, K, n, ell))


def normal_cdf(z: float) -> float:
    # scipy's ndtr evaluates through erfc in the tails, keeping relative accuracy far below 1e-10
    return float(special.ndtr(z))


def normal_sf(z: float) -> float:
    return float(special.ndtr(-z))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal quantile needs p in (0, 1), got {p}")
    return float(special.ndtri(p))


def _check_lambda(lam: float) -> None:
    if not lam >= 0.0 or not math.isfinite(lam):
        raise DomainError(f"Poisson mean must be a finite nonnegative number, got {lam}")


def poisson_pmf(lam: float, x: int) -> float:
    _check_lambda(lam)
    if x < 0:
        return 0.0
    if lam == 0.0:
        return 1.0 if x == 0 else 0.0
    return math.exp(-lam + x * math.log(lam) - math.lgamma(x + 1))


def poisson_cdf(lam: float, x: int) -> float:
    _check_lambda(lam)
    if x < 0:
        return 0.0
    return min(1.0, math.fsum(poisson_pmf(lam, i) for i in range(x + 1)))


def bernoulli_sum_pmf(rates: Sequence[float]) -> DiscretePmf:
    """Exact distribution of a sum of independent Bernoulli(r_i) variables.

    Built by repeated convolution, O(m^2) for m rates.
    """
    p = np.ones(1)
    for r in rates:
        r = float(r)
        if not 0.0 <= r <= 1.0:
            raise DomainError(f"Bernoulli rate {r} outside [0, 1]")
        nxt = np.zeros(len(p) + 1)
        nxt[:-1] += p * (1.0 - r)
        nxt[1:] += p * r
        p = nxt
    return DiscretePmf(0, p)
