"""Seeded subsampling without replacement and multi-study allocation.

Seeds for individual draws are derived from a master seed with
``numpy.random.SeedSequence(master_seed, spawn_key=keys)``: the first 64-bit
word of its generated state is the derived seed. Derivation depends only on
(master_seed, keys), so any draw can be replayed on its own.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError

# above this population size a full index array is not materialized
FISHER_YATES_MAX_N = 1 << 24

_STREAM_INDEPENDENT = 0
_STREAM_PARTITION = 1
_STREAM_OVERLAP_TRIAL = 2


def derive_seed(master_seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_from(master_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))


def _fisher_yates_prefix(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = np.arange(n, dtype=np.int64)
    if k == 0:
        return idx[:0]
    js = rng.integers(np.arange(k), n)
    for i, j in enumerate(js.tolist()):
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def _floyd(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # Floyd's algorithm: O(k) memory, each k-subset equally likely
    chosen: set[int] = set()
    for j in range(n - k, n):
        t = int(rng.integers(0, j + 1))
        chosen.add(j if t in chosen else t)
    return np.fromiter(chosen, dtype=np.int64, count=k)


def subsample(n: int, k: int, seed: int | np.random.Generator) -> np.ndarray:
    """Sorted indices of a uniformly random k-subset of range(n)."""
    if n < 0 or k < 0:
        raise DomainError("sizes must be nonnegative")
    if k > n:
        raise DomainError(f"cannot draw k={k} distinct units from n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n <= FISHER_YATES_MAX_N:
        out = _fisher_yates_prefix(n, k, rng)
    else:
        out = _floyd(n, k, rng)
    return np.sort(out)


class Strategy(enum.Enum):
    INDEPENDENT = "independent_uniform"
    PARTITION = "disjoint_partition"


@dataclass(frozen=True, eq=False)
class Allocation:
    dataset_size: int
    draws: tuple[np.ndarray, ...]
    strategy: Strategy
    master_seed: int

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        draws = []
        for i, d in enumerate(self.draws):
            d = np.asarray(d, dtype=np.int64)
            if d.size and (d.min() < 0 or d.max() >= self.dataset_size):
                raise DomainError(f"draw {i} has indices outside [0, {self.dataset_size})")
            if np.unique(d).size != d.size:
                raise DomainError(f"draw {i} repeats an index")
            d = np.sort(d)
            d.flags.writeable = False
            draws.append(d)
        object.__setattr__(self, "draws", tuple(draws))
        if self.strategy is Strategy.PARTITION and draws:
            merged = np.concatenate(draws)
            if np.unique(merged).size != merged.size:
                raise DomainError("disjoint partition has overlapping draws")

    @property
    def sizes(self) -> list[int]:
        return [len(d) for d in self.draws]

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return (
            self.dataset_size == other.dataset_size
            and self.strategy is other.strategy
            and self.master_seed == other.master_seed
            and len(self.draws) == len(other.draws)
            and all(np.array_equal(a, b) for a, b in zip(self.draws, other.draws))
        )


def allocate(n: int, k_list: Sequence[int], strategy: Strategy | str, master_seed: int) -> Allocation:
    strategy = Strategy(strategy)
    k_list = [int(k) for k in k_list]
    if any(k < 0 or k > n for k in k_list):
        raise DomainError(f"every draw size must lie in [0, n={n}]")
    if strategy is Strategy.INDEPENDENT:
        draws = [subsample(n, k, derive_seed(master_seed, _STREAM_INDEPENDENT, i)) for i, k in enumerate(k_list)]
    else:
        total = sum(k_list)
        if total > n:
            k_max = max(k_list)
            raise CapacityError(
                f"disjoint draws need {total} units but only n={n} exist; "
                f"at most floor(n/k) = {n // k_max} draws of size {k_max} fit"
            )
        perm = _fisher_yates_prefix(n, total, rng_from(master_seed, _STREAM_PARTITION))
        bounds = np.cumsum([0] + k_list)
        draws = [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    return Allocation(n, tuple(draws), strategy, int(master_seed))


def overlap_matrix(alloc: Allocation) -> np.ndarray:
    """Entry (i, j) is |X_i ∩ X_j|; the diagonal holds the draw sizes."""
    c = len(alloc.draws)
    if c * alloc.dataset_size <= 20_000_000:
        member = np.zeros((c, alloc.dataset_size), dtype=np.float64)
        for i, d in enumerate(alloc.draws):
            member[i, d] = 1.0
        return np.rint(member @ member.T).astype(np.int64)
    out = np.zeros((c, c), dtype=np.int64)
    for i in range(c):
        out[i, i] = len(alloc.draws[i])
        for j in range(i + 1, c):
            out[i, j] = out[j, i] = np.intersect1d(alloc.draws[i], alloc.draws[j], assume_unique=True).size
    return out


def _trial_max_overlap(n: int, k: int, c: int, rng: np.random.Generator) -> int:
    # each row: the k smallest of n iid uniform keys is a uniform k-subset
    keys = rng.random((c, n))
    picks = np.argpartition(keys, k - 1, axis=1)[:, :k] if k else np.empty((c, 0), dtype=np.int64)
    member = np.zeros((c, n), dtype=np.float64)
    np.put_along_axis(member, picks, 1.0, axis=1)
    gram = member @ member.T
    np.fill_diagonal(gram, -1.0)
    return int(np.rint(gram.max()))


def empirical_max_overlap(
    n: int, k: int, c: int, ell: int, trials: int, master_seed: int, workers: int = 1
) -> float:
    """Fraction of trials in which some pair among c independent uniform
    k-subsets of range(n) shares at least ell units.

    Trial t uses its own derived stream, so the result does not depend on
    ``workers``.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    if not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got k={k}, n={n}")
    if c < 1:
        raise DomainError("need at least one draw per trial")
    if c == 1:
        return 0.0

    def one(t: int) -> bool:
        return _trial_max_overlap(n, k, c, rng_from(master_seed, _STREAM_OVERLAP_TRIAL, t)) >= ell

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = sum(pool.map(one, range(trials)))
    else:
        hits = sum(one(t) for t in range(trials))
    return hits / trials


def allocation_to_csv(alloc: Allocation) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["draw_id", "k", "indices"])
    for i, d in enumerate(alloc.draws):
        w.writerow([i, len(d), ",".join(str(x) for x in d.tolist())])
    return buf.getvalue()


def allocation_from_csv(text: str, dataset_size: int, strategy: Strategy | str, master_seed: int) -> Allocation:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["draw_id", "k", "indices"]:
        raise DomainError("allocation file must start with header draw_id,k,indices")
    draws = []
    for pos, row in enumerate(rows[1:]):
        draw_id, k, idx = row
        if int(draw_id) != pos:
            raise DomainError(f"draw ids must be consecutive from 0; got {draw_id} at row {pos}")
        d = np.array([int(x) for x in idx.split(",") if x], dtype=np.int64)
        if d.size != int(k):
            raise DomainError(f"draw {draw_id} declares k={k} but lists {d.size} indices")
        draws.append(d)
    return Allocation(dataset_size, tuple(draws), Strategy(strategy), master_seed)


def max_partition_studies(n: int, k: int) -> int:
    """Number of disjoint size-k studies that fit in n units."""
    if k <= 0:
        raise DomainError("k must be positive")
    return math.floor(n / k)
