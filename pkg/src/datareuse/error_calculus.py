"""Error-count distributions, stop-loss premiums and multiplicity metrics.

The stop-loss premium of a loss X at retention L is E[(X - L)+]. One count
distribution is stop-loss smaller than another when its premium is no larger
at every retention, which is exactly the condition under which every
risk-averse agent (concave increasing utility) weakly prefers it.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .dist_core import DiscretePmf
from .errors import DomainError

COMPARE_TOL = 1e-12


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name}={value} is not a probability")
    return value


@dataclass(frozen=True)
class DependentEventPair:
    """Marginal probabilities of two error events and pr(E2 | E1)."""

    p1: float
    p2: float
    p2_given_1: float

    def __post_init__(self):
        for name in ("p1", "p2", "p2_given_1"):
            object.__setattr__(self, name, _check_prob(name, getattr(self, name)))
        both = self.p1 * self.p2_given_1
        if both > self.p2 + 1e-15:
            raise DomainError(
                f"cell pr(E1 and E2) = {both} exceeds pr(E2) = {self.p2}; pr(not E1 and E2) would be negative"
            )
        if self.p2 - both > 1.0 - self.p1 + 1e-15:
            raise DomainError(
                "cell pr(not E1 and not E2) would be negative: "
                f"pr(E2) - pr(E1 and E2) = {self.p2 - both} exceeds pr(not E1) = {1 - self.p1}"
            )

    def joint_table(self) -> np.ndarray:
        """2x2 table indexed [E1][E2] (0 = no error, 1 = error)."""
        both = self.p1 * self.p2_given_1
        only1 = self.p1 - both
        only2 = self.p2 - both
        neither = 1.0 - self.p1 - only2
        return np.array([[neither, only2], [only1, both]])


@dataclass(frozen=True, eq=False)
class ErrorCountDistribution:
    """Distribution of the number of errors among m studies, support 0..m."""

    pmf: DiscretePmf

    def __post_init__(self):
        if self.pmf.support_min != 0:
            raise DomainError("error counts start at 0")

    @classmethod
    def from_probabilities(cls, probabilities) -> "ErrorCountDistribution":
        return cls(DiscretePmf(0, probabilities))

    @classmethod
    def from_counts(cls, counts) -> "ErrorCountDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise DomainError("need at least one observation")
        return cls(DiscretePmf(0, counts / total))

    @property
    def m(self) -> int:
        return len(self.pmf) - 1

    @property
    def probabilities(self) -> np.ndarray:
        return self.pmf.probabilities

    def mean(self) -> float:
        return self.pmf.mean()


@dataclass(frozen=True)
class StopLossCurve:
    """Premiums at integer retentions 0..m."""

    premiums: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "premiums", tuple(float(p) for p in self.premiums))

    def __len__(self):
        return len(self.premiums)

    def __getitem__(self, L):
        return self.premiums[L]

    def padded(self, length: int) -> tuple[float, ...]:
        return self.premiums + (0.0,) * (length - len(self.premiums))


class StopLossOrder(enum.Enum):
    A_SMALLER = "a_smaller"
    B_SMALLER = "b_smaller"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


class UtilityKind(enum.Enum):
    LINEAR = "linear_error_count"
    QUADRATIC = "quadratic_error_count"
    QALY = "qaly_decision"
    TABULATED = "custom_tabulated"


@dataclass(frozen=True)
class UtilityFunction:
    """Utility of a portfolio outcome.

    Linear maps an error count c to -c and quadratic to -c**2. A tabulated
    utility maps counts to arbitrary values. The QALY kind depends on the true
    effect and the decision, so it is evaluated in the portfolio module; it
    cannot be applied to a bare error count. ``scale`` multiplies every value.
    """

    kind: UtilityKind = UtilityKind.LINEAR
    table: Mapping[int, float] | None = field(default=None, compare=False)
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", UtilityKind(self.kind))
        if self.kind is UtilityKind.TABULATED and self.table is None:
            raise DomainError("tabulated utility needs a table")
        if not self.scale > 0:
            raise DomainError("utility scale must be positive")

    @classmethod
    def linear(cls, scale=1.0):
        return cls(UtilityKind.LINEAR, scale=scale)

    @classmethod
    def quadratic(cls, scale=1.0):
        return cls(UtilityKind.QUADRATIC, scale=scale)

    @classmethod
    def qaly(cls, scale=1.0):
        return cls(UtilityKind.QALY, scale=scale)

    @classmethod
    def tabulated(cls, table: Mapping[int, float], scale=1.0):
        return cls(UtilityKind.TABULATED, table=dict(table), scale=scale)

    def of_count(self, c: int) -> float:
        if self.kind is UtilityKind.LINEAR:
            return -self.scale * c
        if self.kind is UtilityKind.QUADRATIC:
            return -self.scale * c * c
        if self.kind is UtilityKind.TABULATED:
            if c not in self.table:
                raise DomainError(f"tabulated utility has no value for count {c}")
            return self.scale * float(self.table[c])
        raise DomainError("QALY utility depends on the effect and decision, not on an error count")


def two_event_distribution(pair: DependentEventPair) -> ErrorCountDistribution:
    """Count distribution of two possibly dependent error events."""
    p1, p2, c = pair.p1, pair.p2, pair.p2_given_1
    zero = 1.0 - p2 - p1 * (1.0 - c)
    one = p2 + p1 * (1.0 - 2.0 * c)
    two = p1 * c
    # rounding can leave -1e-17 in a cell that is exactly zero
    return ErrorCountDistribution.from_probabilities(np.clip([zero, one, two], 0.0, 1.0))


def stop_loss_premium(dist: ErrorCountDistribution, L: int) -> float:
    if not 0 <= L <= dist.m:
        raise DomainError(f"retention L={L} outside 0..{dist.m}")
    counts = np.arange(dist.m + 1)
    excess = np.clip(counts - L, 0, None)
    return math.fsum(excess * dist.probabilities)


def stop_loss_curve(dist: ErrorCountDistribution) -> StopLossCurve:
    return StopLossCurve(tuple(stop_loss_premium(dist, L) for L in range(dist.m + 1)))


def stop_loss_compare(a: StopLossCurve, b: StopLossCurve, tol: float = COMPARE_TOL) -> StopLossOrder:
    n = max(len(a), len(b))
    diff = np.array(a.padded(n)) - np.array(b.padded(n))
    a_le = bool(np.all(diff <= tol))
    b_le = bool(np.all(diff >= -tol))
    if a_le and b_le:
        return StopLossOrder.EQUAL
    if a_le:
        return StopLossOrder.A_SMALLER
    if b_le:
        return StopLossOrder.B_SMALLER
    return StopLossOrder.INCOMPARABLE


def pcer(dist: ErrorCountDistribution) -> float:
    """Per-comparison error rate: expected errors per study."""
    if dist.m == 0:
        raise DomainError("PCER undefined for an empty portfolio")
    return dist.mean() / dist.m


def fwer(dist: ErrorCountDistribution) -> float:
    """Family-wise error rate: pr(at least one error)."""
    return math.fsum(dist.probabilities[1:])


def fdr_global_null(dist: ErrorCountDistribution) -> float:
    """False discovery rate when every null is true.

    Each rejection is then false, so the false discovery proportion is the
    indicator of at least one rejection and FDR coincides with FWER.
    """
    return fwer(dist)


def expected_utility(dist: ErrorCountDistribution, u: UtilityFunction) -> float:
    return math.fsum(u.of_count(c) * p for c, p in enumerate(dist.probabilities))


def shared_control_correlation(n: int, k: int) -> float:
    """Correlation of two known-variance z-statistics whose size-n control
    samples share k units (covariance and correlation coincide)."""
    if n <= 0:
        raise DomainError("arm size must be positive")
    if not 0 <= k <= n:
        raise DomainError(f"control overlap k={k} must lie in [0, n={n}]")
    return k / (2 * n)
