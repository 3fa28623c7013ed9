"""Power, Type II error and sample size for two-sample mean comparisons."""

from __future__ import annotations

import enum
import functools
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

from scipy import stats

from .dist_core import normal_cdf, normal_quantile
from .errors import DomainError


class TestKind(enum.Enum):
    Z = "z_known_variance"
    T = "t_pooled"


TestKind.__test__ = False


@dataclass(frozen=True)
class TestSpec:
    """A two-sample test of equal means.

    ``delta`` is the true treatment-minus-control mean difference and ``sigma``
    the common standard deviation, both in outcome units. One-sided tests
    reject for large positive statistics.
    """

    __test__ = False  # not a pytest class

    kind: TestKind = TestKind.T
    alpha: float = 0.05
    two_sided: bool = True
    delta: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TestKind(self.kind))
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.sigma > 0.0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.delta):
            raise DomainError("delta must be finite")

    def with_delta(self, delta: float) -> "TestSpec":
        return replace(self, delta=delta)


@dataclass(frozen=True)
class SampleVector:
    """Arm sizes: n1 control, n2 treatment."""

    n1: int
    n2: int

    def __post_init__(self):
        for name in ("n1", "n2"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.n1 + self.n2


def _check_sizes(spec: TestSpec, n: SampleVector) -> None:
    if spec.kind is TestKind.T and (n.n1 < 2 or n.n2 < 2):
        raise DomainError("pooled t-test needs at least 2 units per arm")


def noncentrality(spec: TestSpec, n: SampleVector) -> float:
    return spec.delta / (spec.sigma * math.sqrt(1.0 / n.n1 + 1.0 / n.n2))


def rejection_probability(spec: TestSpec, n: SampleVector) -> float:
    """pr(reject) when the true mean difference is ``spec.delta``."""
    return 1.0 - _accept_probability(spec, n)


@functools.lru_cache(maxsize=4096)
def _t_critical(q: float, df: int) -> float:
    # quantile from the noncentral family at nc=0 so the level matches nct.cdf to ~1e-16
    return float(stats.nct.ppf(q, df, 0.0))


def _accept_probability(spec: TestSpec, n: SampleVector) -> float:
    _check_sizes(spec, n)
    if spec.delta == 0.0:
        return 1.0 - spec.alpha
    nc = noncentrality(spec, n)
    if spec.kind is TestKind.Z:
        if spec.two_sided:
            crit = normal_quantile(1.0 - spec.alpha / 2.0)
            # symmetric in nc; using |nc| avoids cancellation between two values near 1
            a = abs(nc)
            return normal_cdf(crit - a) - normal_cdf(-crit - a)
        return normal_cdf(normal_quantile(1.0 - spec.alpha) - nc)

    df = n.n1 + n.n2 - 2
    if spec.two_sided:
        crit = _t_critical(1.0 - spec.alpha / 2.0, df)
        a = abs(nc)
        return float(stats.nct.cdf(crit, df, a) - stats.nct.cdf(-crit, df, a))
    crit = _t_critical(1.0 - spec.alpha, df)
    return float(stats.nct.cdf(crit, df, nc))


def type2_error(spec: TestSpec, n: SampleVector) -> float:
    """pr(fail to reject) under the point alternative ``spec.delta``.

    At delta = 0 this is 1 - alpha, the probability of a correct acceptance.
    """
    return min(1.0, max(0.0, _accept_probability(spec, n)))


def power(spec: TestSpec, n: SampleVector) -> float:
    return 1.0 - type2_error(spec, n)


def required_sample_size(spec: TestSpec, target_power: float, allocation_ratio: float = 1.0) -> SampleVector:
    """Smallest control-arm size n1 (treatment arm ceil(ratio * n1)) whose
    power reaches ``target_power``."""
    if not target_power < 1.0:
        raise DomainError("target power must be below 1; power 1 is never attained")
    if not target_power > spec.alpha:
        raise DomainError(f"target power must exceed alpha={spec.alpha}")
    if not allocation_ratio > 0:
        raise DomainError("allocation ratio must be positive")
    if spec.delta == 0.0:
        raise DomainError("power equals alpha when delta is 0; target unreachable")

    def vec(n1: int) -> SampleVector:
        return SampleVector(n1, max(1, math.ceil(allocation_ratio * n1 - 1e-9)))

    floor = 2 if spec.kind is TestKind.T else 1
    while spec.kind is TestKind.T and vec(floor).n2 < 2:
        floor += 1

    def ok(n1: int) -> bool:
        return power(spec, vec(n1)) >= target_power

    if ok(floor):
        return vec(floor)
    lo, hi = floor, floor * 2
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > 2**40:
            raise DomainError("no sample size up to 2^40 reaches the target power")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return vec(hi)


def portfolio_expected_type2(specs: Sequence[TestSpec], ns: Sequence[SampleVector]) -> float:
    """Expected number of Type II errors across independent studies under
    their point alternatives; negate for the linear utility."""
    if len(specs) != len(ns):
        raise DomainError(f"{len(specs)} test specs but {len(ns)} sample vectors")
    return math.fsum(type2_error(s, n) for s, n in zip(specs, ns))
