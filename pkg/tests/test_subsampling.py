from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from datareuse import subsampling
from datareuse.dist_core import hypergeom_distribution
from datareuse.errors import CapacityError, DomainError
from datareuse.subsampling import (
    Allocation,
    Strategy,
    allocate,
    allocation_from_csv,
    allocation_to_csv,
    derive_seed,
    empirical_max_overlap,
    max_partition_studies,
    overlap_matrix,
    subsample,
)


def test_forced_cases():
    assert subsample(7, 7, 1).tolist() == list(range(7))
    assert subsample(7, 0, 1).size == 0
    with pytest.raises(DomainError):
        subsample(3, 4, 1)


def test_uniform_over_all_subsets():
    reps = 100_000
    rng = np.random.default_rng(11)
    counts = Counter(tuple(subsample(5, 2, rng).tolist()) for _ in range(reps))
    assert set(counts) == set(combinations(range(5), 2))
    freqs = np.array([counts[s] for s in combinations(range(5), 2)])
    assert np.all(np.abs(freqs / reps - 0.1) < 0.005)
    assert stats.chisquare(freqs).pvalue > 0.001


def test_large_population_fallback(monkeypatch):
    monkeypatch.setattr(subsampling, "FISHER_YATES_MAX_N", 10)
    reps = 50_000
    rng = np.random.default_rng(12)
    counts = Counter(tuple(subsample(12, 2, rng).tolist()) for _ in range(reps))
    freqs = np.array([counts[s] for s in combinations(range(12), 2)])
    assert stats.chisquare(freqs).pvalue > 0.001
    out = subsample(50, 50, 3)
    assert out.tolist() == list(range(50))


def test_deterministic_given_seed():
    assert np.array_equal(subsample(1000, 30, 42), subsample(1000, 30, 42))
    assert not np.array_equal(subsample(1000, 30, 42), subsample(1000, 30, 43))


def test_derive_seed_depends_on_keys():
    seeds = {derive_seed(5, i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(5, 3) == derive_seed(5, 3)
    assert 0 <= derive_seed(2**63, 1) < 2**64


def test_partition():
    a = allocate(100, [50, 50], "disjoint_partition", 9)
    m = overlap_matrix(a)
    assert m[0, 1] == 0 and m[0, 0] == 50
    assert len(np.union1d(*a.draws)) == 100
    with pytest.raises(CapacityError, match="floor\\(n/k\\) = 1"):
        allocate(100, [60, 60], Strategy.PARTITION, 9)
    assert max_partition_studies(100, 30) == 3


def test_independent_mean_overlap():
    overlaps = [overlap_matrix(allocate(100, [50, 50], Strategy.INDEPENDENT, s))[0, 1] for s in range(10_000)]
    assert np.mean(overlaps) == pytest.approx(25, abs=0.5)


def test_overlap_matches_hypergeometric():
    reps = 20_000
    obs = np.bincount(
        [overlap_matrix(allocate(10, [5, 5], Strategy.INDEPENDENT, s))[0, 1] for s in range(reps)], minlength=6
    )
    expected = hypergeom_distribution(10, 5, 5).probabilities * reps
    keep = expected > 5
    assert stats.chisquare(obs[keep], expected[keep] * obs[keep].sum() / expected[keep].sum()).pvalue > 0.001


def test_identical_draws_overlap():
    d = np.arange(0, 20, 2)
    a = Allocation(30, (d, d, d), Strategy.INDEPENDENT, 0)
    m = overlap_matrix(a)
    assert np.all(m == 10)


def test_overlap_matrix_pairwise_path_agrees():
    a = allocate(300, [40] * 6, Strategy.INDEPENDENT, 4)
    dense = overlap_matrix(a)
    big = Allocation(300, a.draws, a.strategy, a.master_seed)
    # pretend the population is huge so the pairwise path runs
    object.__setattr__(big, "dataset_size", 10**8)
    assert np.array_equal(overlap_matrix(big), dense)


def test_allocation_invariants():
    with pytest.raises(DomainError):
        Allocation(5, (np.array([0, 5]),), Strategy.INDEPENDENT, 0)
    with pytest.raises(DomainError):
        Allocation(5, (np.array([1, 1]),), Strategy.INDEPENDENT, 0)
    with pytest.raises(DomainError):
        Allocation(5, (np.array([1, 2]), np.array([2, 3])), Strategy.PARTITION, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.lists(st.integers(0, 40), min_size=1, max_size=6), st.integers(0, 2**63))
def test_allocation_is_replayable(n, ks, seed):
    ks = [min(k, n) for k in ks]
    assert allocate(n, ks, Strategy.INDEPENDENT, seed) == allocate(n, ks, Strategy.INDEPENDENT, seed)
    if sum(ks) <= n:
        a = allocate(n, ks, Strategy.PARTITION, seed)
        assert a == allocate(n, ks, Strategy.PARTITION, seed)
        m = overlap_matrix(a)
        assert np.all(m[~np.eye(len(ks), dtype=bool)] == 0)


def test_marginal_inclusion():
    reps = 20_000
    hits = np.zeros(20)
    for s in range(reps):
        a = allocate(20, [4, 10], Strategy.INDEPENDENT, s)
        hits[a.draws[1]] += 1
    assert np.all(np.abs(hits / reps - 0.5) < 4 * np.sqrt(0.25 / reps))


def test_exchangeability():
    rng = np.random.default_rng(2024)
    n, k, reps = 20, 5, 20_000
    via_subsample = np.concatenate([rng.standard_normal(n)[subsample(n, k, rng)] for _ in range(reps)])
    direct = rng.standard_normal(k * reps)
    ks = stats.ks_2samp(via_subsample, direct)
    m = len(direct)
    crit = 1.949 * np.sqrt(2 / m)  # 0.001-level two-sample critical value
    assert ks.statistic < crit


def test_empirical_max_overlap_edges():
    assert empirical_max_overlap(50, 10, 1, 3, 10, 0) == 0.0
    assert empirical_max_overlap(50, 10, 3, 0, 10, 0) == 1.0
    with pytest.raises(DomainError):
        empirical_max_overlap(50, 10, 3, 0, 0, 0)


def test_empirical_max_overlap_independent_of_workers():
    a = empirical_max_overlap(100, 20, 8, 9, 200, 77, workers=1)
    b = empirical_max_overlap(100, 20, 8, 9, 200, 77, workers=4)
    assert a == b


def test_csv_round_trip():
    a = allocate(30, [3, 0, 5], Strategy.INDEPENDENT, 8)
    text = allocation_to_csv(a)
    assert text.splitlines()[0] == "draw_id,k,indices"
    assert text.splitlines()[2] == '1,0,""' or text.splitlines()[2] == "1,0,"
    assert allocation_from_csv(text, 30, Strategy.INDEPENDENT, 8) == a
    with pytest.raises(DomainError):
        allocation_from_csv("id,k\n", 30, Strategy.INDEPENDENT, 8)
