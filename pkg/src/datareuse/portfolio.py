"""Expected utility of study portfolios and grid search over levels and
data fractions.

A plan's error event depends on the true effect θ: with a two-sided test the
null holds at θ = 0, with a one-sided test at θ <= 0. Rejecting a true null
or failing to reject a false one is an error. Priors over θ are discrete and
independent across plans.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .dist_core import bernoulli_sum_pmf, normal_quantile
from .error_calculus import ErrorCountDistribution, UtilityFunction, UtilityKind, expected_utility
from .errors import CapacityError, DomainError
from .power import SampleVector, TestKind, TestSpec, rejection_probability
from .subsampling import Strategy, rng_from, subsample

PRIOR_SUM_TOL = 1e-12


class Decision(enum.Enum):
    REJECT = "reject"
    FAIL_TO_REJECT = "fail_to_reject"


class EvaluationMode(enum.Enum):
    ANALYTIC = "analytic_independent"
    MONTE_CARLO = "monte_carlo"


class FractionArms(enum.Enum):
    CONTROL = "control"
    BOTH = "both"


def qaly_utility(theta: float, decision: Decision | str) -> float:
    """Adopting a treatment earns its effect; declining forgoes only harm."""
    if Decision(decision) is Decision.REJECT:
        return float(theta)
    return min(-float(theta), 0.0) + 0.0


@dataclass(frozen=True)
class StudyPlan:
    """One study: its test, full-data sample, data fraction and prior.

    ``data_fraction`` scales the control arm (``fraction_arms="control"``) or
    both arms of ``base_sample``. ``test.delta`` is ignored; effects come from
    ``prior``, a tuple of (θ, probability) pairs.
    """

    test: TestSpec
    base_sample: SampleVector
    prior: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    data_fraction: float = 1.0
    fraction_arms: FractionArms = FractionArms.CONTROL

    def __post_init__(self):
        object.__setattr__(self, "fraction_arms", FractionArms(self.fraction_arms))
        prior = tuple((float(t), float(p)) for t, p in (self.prior.items() if isinstance(self.prior, Mapping) else self.prior))
        if not prior:
            raise DomainError("prior needs at least one atom")
        if any(not 0.0 <= p <= 1.0 for _, p in prior):
            raise DomainError("prior probabilities must lie in [0, 1]")
        if abs(math.fsum(p for _, p in prior) - 1.0) > PRIOR_SUM_TOL:
            raise DomainError(f"prior probabilities must sum to 1, got {math.fsum(p for _, p in prior)!r}")
        object.__setattr__(self, "prior", prior)
        if not 0.0 < self.data_fraction <= 1.0:
            raise DomainError(f"data fraction must lie in (0, 1], got {self.data_fraction}")

    @property
    def sample(self) -> SampleVector:
        def scaled(n: int) -> int:
            return max(1, math.floor(self.data_fraction * n + 1e-9))

        if self.fraction_arms is FractionArms.CONTROL:
            return SampleVector(scaled(self.base_sample.n1), self.base_sample.n2)
        return SampleVector(scaled(self.base_sample.n1), scaled(self.base_sample.n2))

    @property
    def units_drawn(self) -> int:
        """Units this plan takes from the shared dataset."""
        s = self.sample
        return s.n1 if self.fraction_arms is FractionArms.CONTROL else s.total

    def null_holds(self, theta: float) -> bool:
        return theta == 0.0 if self.test.two_sided else theta <= 0.0

    def with_point(self, alpha: float, fraction: float) -> "StudyPlan":
        return replace(self, test=replace(self.test, alpha=alpha), data_fraction=fraction)


@dataclass(frozen=True)
class PortfolioConfig:
    plans: tuple[StudyPlan, ...]
    utility: UtilityFunction = field(default_factory=UtilityFunction.linear)
    dataset_size: int | None = None
    allocation: Strategy = Strategy.INDEPENDENT
    mode: EvaluationMode = EvaluationMode.ANALYTIC
    mc_reps: int = 10_000
    mc_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "plans", tuple(self.plans))
        object.__setattr__(self, "allocation", Strategy(self.allocation))
        object.__setattr__(self, "mode", EvaluationMode(self.mode))
        if self.mc_reps < 1:
            raise DomainError("replications must be ≥ 1")

    def check_feasible(self) -> None:
        if self.dataset_size is None:
            return
        used = [p.units_drawn for p in self.plans]
        if self.allocation is Strategy.PARTITION:
            if sum(used) > self.dataset_size:
                raise CapacityError(f"disjoint plans need {sum(used)} units but the dataset has {self.dataset_size}")
        elif any(u > self.dataset_size for u in used):
            raise CapacityError(f"a plan needs {max(used)} units but the dataset has {self.dataset_size}")


@dataclass(frozen=True)
class UtilityEstimate:
    value: float
    stderr: float = 0.0


def _reject_prob(plan: StudyPlan, theta: float) -> float:
    return rejection_probability(plan.test.with_delta(theta), plan.sample)


def plan_error_probability(plan: StudyPlan) -> float:
    """pr(the plan commits an error), averaged over its prior."""
    terms = []
    for theta, p in plan.prior:
        r = _reject_prob(plan, theta)
        terms.append(p * (r if plan.null_holds(theta) else 1.0 - r))
    return min(1.0, max(0.0, math.fsum(terms)))


def plan_expected_qaly(plan: StudyPlan) -> float:
    terms = []
    for theta, p in plan.prior:
        r = _reject_prob(plan, theta)
        terms.append(p * (r * qaly_utility(theta, Decision.REJECT) + (1 - r) * qaly_utility(theta, Decision.FAIL_TO_REJECT)))
    return math.fsum(terms)


def portfolio_error_distribution(plans: Sequence[StudyPlan]) -> ErrorCountDistribution:
    """Error count when plans err independently."""
    return ErrorCountDistribution(bernoulli_sum_pmf([plan_error_probability(p) for p in plans]))


def _analytic(cfg: PortfolioConfig) -> float:
    if cfg.utility.kind is UtilityKind.QALY:
        return cfg.utility.scale * math.fsum(plan_expected_qaly(p) for p in cfg.plans)
    if not cfg.plans:
        return 0.0
    return expected_utility(portfolio_error_distribution(cfg.plans), cfg.utility)


def _statistic(plan: StudyPlan, control: np.ndarray, treat: np.ndarray) -> float:
    sigma = plan.test.sigma
    n1, n2 = control.size, treat.size
    diff = treat.mean() - control.mean()
    if plan.test.kind is TestKind.Z:
        return float(diff / (sigma * math.sqrt(1 / n1 + 1 / n2)))
    sp2 = (((control - control.mean()) ** 2).sum() + ((treat - treat.mean()) ** 2).sum()) / (n1 + n2 - 2)
    return float(diff / math.sqrt(sp2 * (1 / n1 + 1 / n2)))


def _critical(plan: StudyPlan) -> float:
    q = 1 - plan.test.alpha / 2 if plan.test.two_sided else 1 - plan.test.alpha
    if plan.test.kind is TestKind.Z:
        return normal_quantile(q)
    return float(stats.t.ppf(q, plan.sample.total - 2))


def _monte_carlo(cfg: PortfolioConfig) -> UtilityEstimate:
    """Each replication draws one shared dataset; plans take their units from
    it under the configured allocation, so reuse induces dependence."""
    plans = cfg.plans
    if not plans:
        return UtilityEstimate(0.0, 0.0)
    n_data = cfg.dataset_size if cfg.dataset_size is not None else max(p.units_drawn for p in plans)
    if cfg.allocation is Strategy.PARTITION:
        n_data = max(n_data, sum(p.units_drawn for p in plans))
    crits = [_critical(p) for p in plans]
    sigmas = [p.test.sigma for p in plans]
    values = np.empty(cfg.mc_reps)
    for rep in range(cfg.mc_reps):
        rng = rng_from(cfg.mc_seed, rep)
        pool = rng.standard_normal(n_data)
        offset = 0
        errors = 0
        qaly = 0.0
        for plan, crit, sigma in zip(plans, crits, sigmas):
            atoms = [t for t, _ in plan.prior]
            theta = atoms[rng.choice(len(atoms), p=[p for _, p in plan.prior])]
            s = plan.sample
            k = plan.units_drawn
            if cfg.allocation is Strategy.PARTITION:
                units = pool[offset : offset + k]
                offset += k
            else:
                units = pool[subsample(n_data, k, rng)]
            units = units * sigma
            control = units[: s.n1]
            if plan.fraction_arms is FractionArms.CONTROL:
                treat = rng.standard_normal(s.n2) * sigma + theta
            else:
                treat = units[s.n1 :] + theta
            z = _statistic(plan, control, treat)
            reject = abs(z) > crit if plan.test.two_sided else z > crit
            errors += int(reject == plan.null_holds(theta))
            qaly += qaly_utility(theta, Decision.REJECT if reject else Decision.FAIL_TO_REJECT)
        values[rep] = cfg.utility.scale * qaly if cfg.utility.kind is UtilityKind.QALY else cfg.utility.of_count(errors)
    return UtilityEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(cfg.mc_reps)) if cfg.mc_reps > 1 else math.inf)


def evaluate_portfolio(cfg: PortfolioConfig) -> UtilityEstimate:
    cfg.check_feasible()
    if cfg.mode is EvaluationMode.ANALYTIC:
        return UtilityEstimate(_analytic(cfg))
    return _monte_carlo(cfg)


def expected_portfolio_utility(cfg: PortfolioConfig) -> float:
    return evaluate_portfolio(cfg).value


GridPoint = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SurfaceEntry:
    index: tuple[int, ...]
    point: GridPoint
    utility: float | None
    error: str | None = None


@dataclass(frozen=True)
class GridResult:
    best_index: tuple[int, ...]
    best_point: GridPoint
    best_utility: float
    best_config: PortfolioConfig
    surface: tuple[SurfaceEntry, ...]


def _config_at(cfg: PortfolioConfig, point: GridPoint) -> PortfolioConfig:
    return replace(cfg, plans=tuple(p.with_point(a, r) for p, (a, r) in zip(cfg.plans, point)))


def grid_search(
    cfg: PortfolioConfig,
    grid: Sequence[Sequence[tuple[float, float]]] | None = None,
    joint_points: Sequence[GridPoint] | None = None,
    workers: int = 1,
) -> GridResult:
    """Evaluate every (alpha, data_fraction) combination and return the best.

    ``grid`` holds per-plan candidate lists and is searched as a cartesian
    product; ``joint_points`` instead lists whole-portfolio points. Infeasible
    points stay in the surface with their error. Ties go to the
    lexicographically smallest index.
    """
    if (grid is None) == (joint_points is None):
        raise DomainError("give exactly one of grid or joint_points")
    if grid is not None:
        if len(grid) != len(cfg.plans):
            raise DomainError(f"{len(cfg.plans)} plans but {len(grid)} grid axes")
        if any(len(axis) == 0 for axis in grid):
            raise DomainError("every grid axis needs at least one candidate")
        indices = list(itertools.product(*(range(len(axis)) for axis in grid)))
        points = [tuple(tuple(grid[i][j]) for i, j in enumerate(idx)) for idx in indices]
    else:
        points = [tuple(tuple(x) for x in pt) for pt in joint_points]
        if not points:
            raise DomainError("joint_points is empty")
        if any(len(pt) != len(cfg.plans) for pt in points):
            raise DomainError(f"every joint point needs {len(cfg.plans)} (alpha, fraction) pairs")
        indices = [(i,) for i in range(len(points))]

    def one(point: GridPoint) -> tuple[float | None, str | None]:
        try:
            return expected_portfolio_utility(_config_at(cfg, point)), None
        except DomainError as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(p) for p in points]

    surface = tuple(SurfaceEntry(idx, pt, u, err) for idx, pt, (u, err) in zip(indices, points, results))
    best = None
    for entry in surface:
        if entry.utility is not None and (best is None or entry.utility > best.utility):
            best = entry
    if best is None:
        raise DomainError("every grid point is infeasible")
    return GridResult(best.index, best.point, best.utility, _config_at(cfg, best.point), surface)
