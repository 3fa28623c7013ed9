"""Seeded Monte Carlo for dependent testing designs.

Two designs are covered: several treatment arms compared against a control
group that may be reused, and a survival cohort tested at two truncation
times with a log-rank test. Replication r draws from its own stream,
derived from (master_seed, r), so results do not depend on how replications
are scheduled across workers.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .error_calculus import ErrorCountDistribution, StopLossCurve, stop_loss_curve
from .errors import DomainError
from .subsampling import rng_from, subsample

_CHUNK = 256


class ControlMode(enum.Enum):
    REUSE_FULL = "reuse_full"
    DISJOINT_SPLIT = "disjoint_split"
    INDEPENDENT_SUBSAMPLE = "independent_subsample"


class SurvivalMode(enum.Enum):
    REUSE_SAME_COHORT = "reuse_same_cohort"
    GATEKEEP_SPLIT = "gatekeep_split"


def _check_reps(replications: int) -> None:
    if replications < 1:
        raise DomainError("replications must be ≥ 1")


@dataclass(frozen=True)
class SharedControlDesign:
    """m treatment arms of n_arm units, each t-tested against control data.

    ``reuse_full`` compares every arm to the whole control pool,
    ``disjoint_split`` gives arm i its own block of floor(n_control/m)
    controls, and ``independent_subsample`` draws ``subsample_k`` controls
    per arm independently. ``effect`` is the treatment mean shift in units of
    the outcome standard deviation.
    """

    m: int = 7
    n_arm: int = 100
    n_control: int = 100
    control_mode: ControlMode = ControlMode.REUSE_FULL
    subsample_k: int | None = None
    alpha: float = 0.05
    effect: float = 0.0
    replications: int = 10_000
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "control_mode", ControlMode(self.control_mode))
        _check_reps(self.replications)
        if self.m < 1:
            raise DomainError("need at least one treatment arm")
        if self.n_arm < 2:
            raise DomainError(f"arm size must be at least 2, got {self.n_arm}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.control_mode is ControlMode.INDEPENDENT_SUBSAMPLE:
            if self.subsample_k is None:
                raise DomainError("independent_subsample needs subsample_k")
            if not 2 <= self.subsample_k <= self.n_control:
                raise DomainError(f"subsample_k must lie in [2, n_control={self.n_control}]")
        if self.control_size < 2:
            raise DomainError(f"each comparison needs at least 2 controls, got {self.control_size}")

    @property
    def control_size(self) -> int:
        if self.control_mode is ControlMode.DISJOINT_SPLIT:
            return self.n_control // self.m
        if self.control_mode is ControlMode.INDEPENDENT_SUBSAMPLE:
            return int(self.subsample_k)
        return self.n_control


@dataclass(frozen=True)
class SurvivalReuseDesign:
    """Two equal groups with identical Weibull survival, log-rank tested at
    each truncation time.

    ``gatekeep_split`` halves each group at random and tests the first
    truncation time on one half and the later ones on the other.
    """

    n_per_group: int = 100
    weibull_shape: float = 2.0
    weibull_scale: float = 1.0
    truncation_times: tuple[float, ...] = (1.0, 5.0)
    mode: SurvivalMode = SurvivalMode.REUSE_SAME_COHORT
    alpha: float = 0.05
    replications: int = 10_000
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SurvivalMode(self.mode))
        object.__setattr__(self, "truncation_times", tuple(float(t) for t in self.truncation_times))
        _check_reps(self.replications)
        if not (self.weibull_shape > 0 and self.weibull_scale > 0):
            raise DomainError("Weibull shape and scale must be positive")
        ts = self.truncation_times
        if not ts or ts[0] <= 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("truncation times must be positive and strictly increasing")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        per_test = self.n_per_group // 2 if self.mode is SurvivalMode.GATEKEEP_SPLIT else self.n_per_group
        if per_test < 2:
            raise DomainError(f"each test needs at least 2 subjects per group, got {per_test}")

    @classmethod
    def reference(cls, mode: SurvivalMode | str = SurvivalMode.REUSE_SAME_COHORT, **overrides) -> "SurvivalReuseDesign":
        """Groups of 100 with survival exp(-2 t^shape) and mean 2.5 years,
        tested at 1 and 5 years.

        The scale 2 is read as the hazard scale; see
        ``weibull_from_hazard_scale``.
        """
        shape, scale = weibull_from_hazard_scale(2.5, 2.0)
        params = dict(
            n_per_group=100,
            weibull_shape=shape,
            weibull_scale=scale,
            truncation_times=(1.0, 5.0),
            mode=mode,
        )
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True, eq=False)
class SimulationReport:
    empirical_error_pmf: ErrorCountDistribution
    error_counts: tuple[int, ...]
    per_test_rejection_freq: tuple[float, ...]
    pairwise_stat_correlation: np.ndarray
    stop_loss_curve: StopLossCurve
    rep_count: int
    master_seed: int
    contingency: np.ndarray | None = None
    no_test_counts: tuple[int, ...] = field(default=())

    def __eq__(self, other):
        if not isinstance(other, SimulationReport):
            return NotImplemented
        same_cont = (self.contingency is None and other.contingency is None) or (
            self.contingency is not None
            and other.contingency is not None
            and np.array_equal(self.contingency, other.contingency)
        )
        return (
            self.error_counts == other.error_counts
            and self.per_test_rejection_freq == other.per_test_rejection_freq
            and np.array_equal(self.pairwise_stat_correlation, other.pairwise_stat_correlation, equal_nan=True)
            and self.stop_loss_curve == other.stop_loss_curve
            and self.rep_count == other.rep_count
            and self.master_seed == other.master_seed
            and self.no_test_counts == other.no_test_counts
            and same_cont
        )


def weibull_inverse_cdf(u, shape: float, scale: float):
    """Quantile function scale * (-ln(1 - u))^(1/shape)."""
    if not (shape > 0 and scale > 0):
        raise DomainError("Weibull shape and scale must be positive")
    return scale * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / shape)


def weibull_sample(shape: float, scale: float, rng: np.random.Generator, size=None):
    # random() lies in [0, 1) so 1 - u never reaches 0
    return weibull_inverse_cdf(rng.random(size), shape, scale)


def weibull_mean(shape: float, scale: float) -> float:
    return scale * math.gamma(1.0 + 1.0 / shape)


def weibull_scale_for_mean(mean: float, shape: float) -> float:
    return mean / math.gamma(1.0 + 1.0 / shape)


def weibull_from_hazard_scale(mean: float, hazard_scale: float) -> tuple[float, float]:
    """(shape, scale) with survival exp(-hazard_scale * t^shape) and the
    requested mean.

    With x = 1/shape the log-mean -x ln(hazard_scale) + lgamma(1 + x) is
    convex in x, so a mean can have two solutions; the one with heavier
    early mortality (larger x, smaller shape) is returned.
    """
    if not (mean > 0 and hazard_scale > 0):
        raise DomainError("mean and hazard scale must be positive")
    log_lam = math.log(hazard_scale)

    def log_mean(x):
        return -x * log_lam + math.lgamma(1.0 + x)

    # the log-mean is increasing beyond x_min, where digamma(1 + x) = ln(hazard_scale)
    x_min = 0.0
    if special.digamma(1.0) < log_lam:
        x_min = optimize.brentq(lambda x: special.digamma(1.0 + x) - log_lam, 0.0, math.exp(log_lam) + 2.0)
    target = math.log(mean)
    if log_mean(x_min) >= target:
        raise DomainError(f"no shape gives mean {mean} at hazard scale {hazard_scale}")
    hi = max(1.0, 2 * x_min)
    while log_mean(hi) < target:
        hi *= 2
    x = optimize.brentq(lambda x: log_mean(x) - target, x_min, hi, xtol=1e-14)
    return 1.0 / x, hazard_scale ** (-x)


def logrank_statistic(time_a, event_a, time_b, event_b, truncation: float = math.inf) -> float:
    """Two-group log-rank z statistic with administrative censoring at
    ``truncation``; positive when group A dies earlier than expected.

    Returns NaN when no event occurs by the truncation time.
    """
    ta = np.asarray(time_a, dtype=float)
    tb = np.asarray(time_b, dtype=float)
    ea = np.asarray(event_a, dtype=bool)
    eb = np.asarray(event_b, dtype=bool)
    if ta.size == 0 or tb.size == 0:
        raise DomainError("both groups need at least one subject")
    if ta.shape != ea.shape or tb.shape != eb.shape:
        raise DomainError("time and event arrays must have equal length")
    if (ta < 0).any() or (tb < 0).any():
        raise DomainError("times must be nonnegative")

    ea = ea & (ta <= truncation)
    eb = eb & (tb <= truncation)
    ta = np.minimum(ta, truncation)
    tb = np.minimum(tb, truncation)

    death_a = np.sort(ta[ea])
    death_b = np.sort(tb[eb])
    times = np.unique(np.concatenate([death_a, death_b]))
    if times.size == 0:
        return math.nan
    sa = np.sort(ta)
    sb = np.sort(tb)
    at_risk_a = sa.size - np.searchsorted(sa, times, "left")
    at_risk = at_risk_a + sb.size - np.searchsorted(sb, times, "left")
    d_a = np.searchsorted(death_a, times, "right") - np.searchsorted(death_a, times, "left")
    d = d_a + np.searchsorted(death_b, times, "right") - np.searchsorted(death_b, times, "left")

    frac = at_risk_a / at_risk
    expected = d * frac
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(at_risk > 1, (at_risk - d) / (at_risk - 1), 0.0)
    var = d * frac * (1 - frac) * shrink
    total_var = math.fsum(var)
    if total_var <= 0:
        return math.nan
    return math.fsum(d_a - expected) / math.sqrt(total_var)


def _pooled_t(x: np.ndarray, y: np.ndarray) -> float:
    nx, ny = x.size, y.size
    sp2 = (((x - x.mean()) ** 2).sum() + ((y - y.mean()) ** 2).sum()) / (nx + ny - 2)
    return float((x.mean() - y.mean()) / math.sqrt(sp2 * (1.0 / nx + 1.0 / ny)))


def _shared_control_rep(design: SharedControlDesign, rep: int) -> np.ndarray:
    rng = rng_from(design.master_seed, rep)
    treat = rng.standard_normal((design.m, design.n_arm)) + design.effect
    control = rng.standard_normal(design.n_control)
    out = np.empty(design.m)
    split = design.control_size
    for i in range(design.m):
        if design.control_mode is ControlMode.REUSE_FULL:
            ctrl = control
        elif design.control_mode is ControlMode.DISJOINT_SPLIT:
            ctrl = control[i * split : (i + 1) * split]
        else:
            ctrl = control[subsample(design.n_control, split, rng)]
        out[i] = _pooled_t(treat[i], ctrl)
    return out


def _survival_rep(design: SurvivalReuseDesign, rep: int) -> np.ndarray:
    rng = rng_from(design.master_seed, rep)
    n = design.n_per_group
    a = weibull_sample(design.weibull_shape, design.weibull_scale, rng, n)
    b = weibull_sample(design.weibull_shape, design.weibull_scale, rng, n)
    ones = np.ones(n, dtype=bool)
    ts = design.truncation_times
    if design.mode is SurvivalMode.REUSE_SAME_COHORT:
        return np.array([logrank_statistic(a, ones, b, ones, t) for t in ts])
    half = n // 2
    pa = rng.permutation(n)
    pb = rng.permutation(n)
    first = logrank_statistic(a[pa[:half]], ones[:half], b[pb[:half]], ones[:half], ts[0])
    held_a, held_b = a[pa[half:]], b[pb[half:]]
    rest = [logrank_statistic(held_a, np.ones(held_a.size, bool), held_b, np.ones(held_b.size, bool), t) for t in ts[1:]]
    return np.array([first, *rest])


def _run(rep_fn, design, n_tests: int, workers: int) -> np.ndarray:
    reps = design.replications
    chunks = [range(s, min(s + _CHUNK, reps)) for s in range(0, reps, _CHUNK)]

    def run_chunk(rs):
        return np.array([rep_fn(design, r) for r in rs]).reshape(len(rs), n_tests)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    return np.concatenate(parts)


def _correlation(statistics: np.ndarray) -> np.ndarray:
    m = statistics.shape[1]
    finite = statistics[np.isfinite(statistics).all(axis=1)]
    if m == 1:
        return np.ones((1, 1))
    if finite.shape[0] < 2:
        corr = np.full((m, m), np.nan)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(finite, rowvar=False)
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    return corr


def _report(statistics: np.ndarray, crit: float, master_seed: int, contingency: bool) -> SimulationReport:
    reps, m = statistics.shape
    # a NaN statistic is a no-test result and never rejects
    with np.errstate(invalid="ignore"):
        reject = np.abs(statistics) > crit
    counts = np.bincount(reject.sum(axis=1), minlength=m + 1)
    dist = ErrorCountDistribution.from_counts(counts)
    table = None
    if contingency:
        r_first, r_last = reject[:, 0], reject[:, -1]
        table = np.array(
            [
                [np.sum(~r_last & ~r_first), np.sum(~r_last & r_first)],
                [np.sum(r_last & ~r_first), np.sum(r_last & r_first)],
            ],
            dtype=np.int64,
        )
    return SimulationReport(
        empirical_error_pmf=dist,
        error_counts=tuple(int(c) for c in counts),
        per_test_rejection_freq=tuple(float(f) for f in reject.mean(axis=0)),
        pairwise_stat_correlation=_correlation(statistics),
        stop_loss_curve=stop_loss_curve(dist),
        rep_count=reps,
        master_seed=master_seed,
        contingency=table,
        no_test_counts=tuple(int(c) for c in np.isnan(statistics).sum(axis=0)),
    )


def shared_control_statistics(design: SharedControlDesign, workers: int = 1) -> np.ndarray:
    """Replications x m array of t statistics (treatment minus control)."""
    return _run(_shared_control_rep, design, design.m, workers)


def run_shared_control(design: SharedControlDesign, workers: int = 1) -> SimulationReport:
    statistics = shared_control_statistics(design, workers)
    df = design.n_arm + design.control_size - 2
    crit = float(stats.t.ppf(1.0 - design.alpha / 2.0, df))
    return _report(statistics, crit, design.master_seed, contingency=False)


def survival_statistics(design: SurvivalReuseDesign, workers: int = 1) -> np.ndarray:
    """Replications x len(truncation_times) array of log-rank z statistics."""
    return _run(_survival_rep, design, len(design.truncation_times), workers)


def run_survival_reuse(design: SurvivalReuseDesign, workers: int = 1) -> SimulationReport:
    """Contingency rows are (not R_last, R_last), columns (not R_first, R_first)."""
    statistics = survival_statistics(design, workers)
    crit = float(special.ndtri(1.0 - design.alpha / 2.0))
    return _report(statistics, crit, design.master_seed, contingency=True)


def conditional_rejection(report: SimulationReport) -> float:
    """Empirical pr(R_last | R_first) from the contingency table."""
    if report.contingency is None:
        raise DomainError("report has no contingency table")
    first = report.contingency[:, 1].sum()
    if first == 0:
        return math.nan
    return float(report.contingency[1, 1] / first)


def binomial_error_pmf(m: int, alpha: float) -> np.ndarray:
    """Error-count pmf for m independent level-alpha tests under the null."""
    return stats.binom.pmf(np.arange(m + 1), m, alpha)


def table_frequencies(counts: Sequence[int]) -> list[tuple[int, int, float]]:
    total = sum(counts)
    return [(i, int(c), c / total) for i, c in enumerate(counts)]
