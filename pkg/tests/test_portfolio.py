import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datareuse.error_calculus import UtilityFunction
from datareuse.errors import CapacityError, DomainError
from datareuse.portfolio import (
    Decision,
    EvaluationMode,
    PortfolioConfig,
    StudyPlan,
    evaluate_portfolio,
    expected_portfolio_utility,
    grid_search,
    plan_error_probability,
    qaly_utility,
)
from datareuse.power import SampleVector, TestKind, TestSpec, power, type2_error
from datareuse.subsampling import Strategy

T = TestSpec(TestKind.T, alpha=0.05)
GLUT = StudyPlan(T, SampleVector(100, 50), prior=((0.5, 1.0),))


def test_qaly_utility():
    assert qaly_utility(0.3, Decision.REJECT) == 0.3
    assert qaly_utility(-0.2, "reject") == -0.2
    assert qaly_utility(0.0, "reject") == 0.0 and qaly_utility(0.0, "fail_to_reject") == 0.0
    assert qaly_utility(0.3, "fail_to_reject") == -0.3
    assert qaly_utility(-0.2, "fail_to_reject") == 0.0


def test_global_null_linear():
    for m in (1, 3, 6):
        plans = [StudyPlan(TestSpec(kind, alpha=0.05), SampleVector(20, 30)) for kind in [TestKind.T, TestKind.Z] * 3][:m]
        assert expected_portfolio_utility(PortfolioConfig(plans)) == pytest.approx(-0.05 * m, abs=1e-12)


def test_gluttony_versus_split():
    glut = PortfolioConfig((GLUT, GLUT), dataset_size=100)
    split_plan = StudyPlan(T, SampleVector(100, 50), prior=((0.5, 1.0),), data_fraction=0.5)
    split = PortfolioConfig((split_plan, split_plan), dataset_size=100, allocation=Strategy.PARTITION)
    assert expected_portfolio_utility(glut) == pytest.approx(-0.364, abs=0.01)
    assert expected_portfolio_utility(split) == pytest.approx(-0.606, abs=0.01)
    assert split_plan.sample == SampleVector(50, 50)
    with pytest.raises(CapacityError):
        expected_portfolio_utility(PortfolioConfig((GLUT, GLUT), dataset_size=100, allocation=Strategy.PARTITION))


def test_empty_portfolio():
    assert expected_portfolio_utility(PortfolioConfig(())) == 0.0
    assert expected_portfolio_utility(PortfolioConfig((), utility=UtilityFunction.qaly())) == 0.0


def test_quadratic_matches_closed_form():
    plans = [StudyPlan(T, SampleVector(n, n), prior=((0.0, 0.4), (0.6, 0.6))) for n in (10, 30, 60)]
    q = [plan_error_probability(p) for p in plans]
    closed = -(sum(x * (1 - x) for x in q) + sum(q) ** 2)
    assert expected_portfolio_utility(PortfolioConfig(plans, UtilityFunction.quadratic())) == pytest.approx(closed, abs=1e-12)


def test_error_probability_by_hand():
    plan = StudyPlan(T, SampleVector(40, 40), prior={0.0: 0.3, 0.5: 0.7})
    hand = 0.3 * 0.05 + 0.7 * type2_error(T.with_delta(0.5), SampleVector(40, 40))
    assert plan_error_probability(plan) == pytest.approx(hand, abs=1e-12)


def test_qaly_expectation_by_hand():
    plan = StudyPlan(T, SampleVector(40, 40), prior={-0.2: 0.5, 0.4: 0.5})
    p_neg = power(T.with_delta(-0.2), SampleVector(40, 40))
    p_pos = power(T.with_delta(0.4), SampleVector(40, 40))
    hand = 0.5 * (p_neg * -0.2) + 0.5 * (p_pos * 0.4 + (1 - p_pos) * -0.4)
    cfg = PortfolioConfig((plan,), UtilityFunction.qaly(2.0))
    assert expected_portfolio_utility(cfg) == pytest.approx(2 * hand, abs=1e-12)


def test_prior_validation():
    with pytest.raises(DomainError):
        StudyPlan(T, SampleVector(5, 5), prior=((0.0, 0.5), (1.0, 0.4)))
    with pytest.raises(DomainError):
        StudyPlan(T, SampleVector(5, 5), data_fraction=0.0)
    with pytest.raises(DomainError):
        PortfolioConfig((), mc_reps=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 80), st.floats(0.01, 0.3), st.floats(-1, 1))
def test_adding_a_costly_plan_lowers_utility(n, alpha, theta):
    base = [StudyPlan(T, SampleVector(30, 30), prior=((0.4, 1.0),))]
    extra = StudyPlan(TestSpec(TestKind.Z, alpha=alpha), SampleVector(n, n), prior=((theta, 1.0),))
    alone = expected_portfolio_utility(PortfolioConfig((extra,)))
    assert alone < 0
    assert expected_portfolio_utility(PortfolioConfig((*base, extra))) < expected_portfolio_utility(PortfolioConfig(base))


ALPHAS = [round(0.01 * i, 2) for i in range(1, 21)]


def test_grid_search_matches_rescan():
    plan = StudyPlan(T, SampleVector(30, 30), prior=((0.0, 0.5), (0.6, 0.5)))
    res = grid_search(PortfolioConfig((plan,)), [[(a, 1.0) for a in ALPHAS]])
    scan = [-(a + type2_error(TestSpec(TestKind.T, alpha=a, delta=0.6), SampleVector(30, 30))) / 2 for a in ALPHAS]
    best = int(np.argmax(scan))
    assert res.best_point == ((ALPHAS[best], 1.0),)
    assert res.best_utility == pytest.approx(scan[best], abs=1e-12)
    assert len(res.surface) == 20
    assert all(e.utility <= res.best_utility for e in res.surface)


def test_grid_search_example_menu():
    cfg = PortfolioConfig((GLUT, GLUT), dataset_size=100)
    res = grid_search(cfg, joint_points=[((0.05, 1.0), (0.05, 1.0)), ((0.05, 0.5), (0.05, 0.5))])
    assert res.best_index == (0,)
    assert res.best_utility == pytest.approx(-0.364, abs=0.01)
    assert res.surface[1].utility == pytest.approx(-0.606, abs=0.01)


def test_grid_search_singleton_ties_and_infeasible():
    plan = StudyPlan(T, SampleVector(30, 30))
    one = grid_search(PortfolioConfig((plan,)), [[(0.05, 1.0)]])
    assert one.best_point == ((0.05, 1.0),)
    # null prior: utility -alpha is independent of fraction, so ties resolve to index 0
    tie = grid_search(PortfolioConfig((plan,)), [[(0.05, 1.0), (0.05, 0.5)]])
    assert tie.best_index == (0,)
    cfg = PortfolioConfig((plan, plan), dataset_size=40, allocation=Strategy.PARTITION)
    res = grid_search(cfg, [[(0.05, 1.0), (0.05, 0.5)]] * 2)
    assert res.best_index == (1, 1)
    assert sum(e.utility is None for e in res.surface) == 3
    with pytest.raises(DomainError):
        grid_search(PortfolioConfig((plan,), dataset_size=10), [[(0.05, 1.0)]])


@pytest.mark.parametrize("scale", [0.5, 3.0, 100.0])
def test_grid_argmax_invariant_to_utility_scale(scale):
    plans = (StudyPlan(T, SampleVector(40, 40), prior=((0.0, 0.5), (0.5, 0.5))),) * 2
    grid = [[(a, f) for a in (0.01, 0.05, 0.1) for f in (0.5, 1.0)]] * 2
    for u in (UtilityFunction.linear, UtilityFunction.quadratic):
        base = grid_search(PortfolioConfig(plans, u()), grid)
        scaled = grid_search(PortfolioConfig(plans, u(scale)), grid)
        assert base.best_index == scaled.best_index


def test_grid_workers_do_not_change_result():
    plans = (StudyPlan(T, SampleVector(40, 40), prior=((0.0, 0.5), (0.5, 0.5))),) * 2
    grid = [[(a, 1.0) for a in (0.01, 0.05, 0.1)]] * 2
    cfg = PortfolioConfig(plans)
    assert grid_search(cfg, grid) == grid_search(cfg, grid, workers=4)


@pytest.mark.parametrize("utility", [UtilityFunction.linear(), UtilityFunction.quadratic(), UtilityFunction.qaly()])
def test_monte_carlo_agrees_with_analytic_on_disjoint_data(utility):
    plans = (
        StudyPlan(T, SampleVector(20, 20), prior=((0.0, 0.5), (0.7, 0.5))),
        StudyPlan(TestSpec(TestKind.Z, alpha=0.1, two_sided=False), SampleVector(30, 25), prior=((-0.3, 0.3), (0.4, 0.7))),
    )
    analytic = PortfolioConfig(plans, utility, dataset_size=60, allocation=Strategy.PARTITION)
    mc = evaluate_portfolio(PortfolioConfig(plans, utility, 60, Strategy.PARTITION, EvaluationMode.MONTE_CARLO, 4000, 5))
    assert abs(mc.value - expected_portfolio_utility(analytic)) <= 3 * mc.stderr


def test_monte_carlo_is_seeded():
    cfg = PortfolioConfig((GLUT, GLUT), dataset_size=100, mode=EvaluationMode.MONTE_CARLO, mc_reps=300, mc_seed=2)
    assert evaluate_portfolio(cfg) == evaluate_portfolio(cfg)
    assert math.isfinite(evaluate_portfolio(cfg).stderr)
