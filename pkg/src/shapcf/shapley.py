"""Owner valuation: exact Shapley values, differentials, and their estimators.

The value of an owner is its average marginal utility contribution over owner
orderings. The pairwise differential (value of a minus value of b) collapses
into a single sum over coalitions that contain neither owner, which halves the
work and is what flip checks actually need: a's value is below b's exactly
when the differential is negative.

Exact routines enumerate coalitions (or permutations, kept as an independent
cross-check) and are guarded by owner-count limits; the Monte Carlo routines
draw owner permutations and are unbiased for any utility. Sums in the exact
routines use math.fsum, so owners with identical entry sets get bitwise-equal
values regardless of enumeration order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .core import (
    OwnerId,
    OwnerPartition,
    PermutationSample,
    SameOwner,
    TooManyOwners,
    prefix_before_pair,
    sample_permutation,
)
from .utility import UtilityOracle

EXACT_OWNER_LIMIT = 12
PERMUTATION_FORM_LIMIT = 8


@lru_cache(maxsize=64)
def z_quantile(delta: float) -> float:
    """Two-sided normal quantile: z such that P(|Z| <= z) = delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return NormalDist().inv_cdf((1.0 + delta) / 2.0)


@dataclass
class Estimate:
    """Online mean/variance accumulator with a normal confidence interval.

    Uses Welford updates; merge() combines two accumulators exactly as if all
    samples had been fed to one, so runs can be sharded and recombined. The
    half-width uses the population variance m2/count and is infinite below
    two samples.
    """

    delta: float = 0.95
    mean: float = 0.0
    count: int = 0
    m2: float = 0.0

    def update(self, x: float) -> None:
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def update_many(self, xs) -> None:
        for x in xs:
            self.update(float(x))

    def merge(self, other: "Estimate") -> "Estimate":
        if other.count == 0:
            return Estimate(self.delta, self.mean, self.count, self.m2)
        if self.count == 0:
            return Estimate(self.delta, other.mean, other.count, other.m2)
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return Estimate(self.delta, mean, n, m2)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else math.inf

    @property
    def half_width(self) -> float:
        if self.count < 2:
            return math.inf
        return z_quantile(self.delta) * math.sqrt(self.m2 / self.count) / math.sqrt(self.count)

    def ci(self) -> tuple[float, float]:
        hw = self.half_width
        return self.mean - hw, self.mean + hw


def _coalition_weights(n: int) -> list[float]:
    """weights[s] = 1 / (n * C(n-1, s)) for coalition size s."""
    return [1.0 / (n * math.comb(n - 1, s)) for s in range(n)]


def shapley_exact(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    owner: OwnerId,
    *,
    owner_limit: int = EXACT_OWNER_LIMIT,
) -> float:
    """Exact Shapley value by coalition enumeration (2^(n-1) subsets)."""
    n = partition.n
    if n > owner_limit:
        raise TooManyOwners(f"exact Shapley over {n} owners exceeds the limit {owner_limit}")
    partition.entries(owner)
    others = [o for o in partition.owner_ids() if o != owner]
    weights = _coalition_weights(n)
    terms = []
    for r in range(len(others) + 1):
        for combo in itertools.combinations(others, r):
            base = partition.composed(combo)
            with_owner = base | partition.entries(owner)
            terms.append((oracle.value(with_owner) - oracle.value(base)) * weights[r])
    return math.fsum(terms)


def shapley_exact_all(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    *,
    owner_limit: int = EXACT_OWNER_LIMIT,
) -> dict[OwnerId, float]:
    return {
        o: shapley_exact(partition, oracle, o, owner_limit=owner_limit)
        for o in partition.owner_ids()
    }


def shapley_exact_by_permutations(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    owner: OwnerId,
    *,
    owner_limit: int = PERMUTATION_FORM_LIMIT,
) -> float:
    """Exact Shapley value as the average marginal over all n! orderings.

    Independent of shapley_exact (different enumeration and weighting); meant
    as a cross-check at small n.
    """
    n = partition.n
    if n > owner_limit:
        raise TooManyOwners(f"permutation form over {n} owners exceeds the limit {owner_limit}")
    partition.entries(owner)
    terms = []
    for perm in itertools.permutations(partition.owner_ids()):
        prefix = perm[: perm.index(owner)]
        base = partition.composed(prefix)
        terms.append(oracle.value(base | partition.entries(owner)) - oracle.value(base))
    return math.fsum(terms) / math.factorial(n)


def diff_shapley_exact(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    *,
    owner_limit: int = EXACT_OWNER_LIMIT,
) -> float:
    """Exact differential (value of a minus value of b) by coalition enumeration.

    Sums [U(S + a) - U(S + b)] / ((|S|+1) * C(n-1, |S|+1)) over coalitions S
    drawn from the other n-2 owners. Equals shapley_exact(a) - shapley_exact(b).
    """
    n = partition.n
    if n > owner_limit:
        raise TooManyOwners(f"exact differential over {n} owners exceeds the limit {owner_limit}")
    ents_a = partition.entries(a)
    ents_b = partition.entries(b)
    if a == b:
        return 0.0
    others = [o for o in partition.owner_ids() if o not in (a, b)]
    terms = []
    for r in range(len(others) + 1):
        w = 1.0 / ((r + 1) * math.comb(n - 1, r + 1))
        for combo in itertools.combinations(others, r):
            base = partition.composed(combo)
            terms.append((oracle.value(base | ents_a) - oracle.value(base | ents_b)) * w)
    return math.fsum(terms)


def diff_shapley_exact_by_permutations(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    *,
    owner_limit: int = PERMUTATION_FORM_LIMIT,
) -> float:
    """Differential as a sum over all orderings; cross-check for small n."""
    n = partition.n
    if n > owner_limit:
        raise TooManyOwners(f"permutation form over {n} owners exceeds the limit {owner_limit}")
    if a == b:
        return 0.0
    ents_a = partition.entries(a)
    ents_b = partition.entries(b)
    terms = []
    for perm in itertools.permutations(partition.owner_ids()):
        p = prefix_before_pair(PermutationSample(perm), a, b)
        base = partition.composed(p)
        terms.append(
            (oracle.value(base | ents_a) - oracle.value(base | ents_b)) / (n - len(p) - 1)
        )
    return math.fsum(terms) / (2.0 * math.factorial(n - 1))


def diff_sample_term(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    perm: PermutationSample,
) -> float:
    """Unbiased single-permutation term for the differential.

    With P the owners preceding both a and b, the term is
    (n/2) * [U(P + a) - U(P + b)] / (n - |P| - 1); averaging over uniform
    orderings recovers the exact differential.
    """
    n = partition.n
    p = prefix_before_pair(perm, a, b)
    base = partition.composed(p)
    coef = n / (2.0 * (n - len(p) - 1))
    return coef * (
        oracle.value(base | partition.entries(a)) - oracle.value(base | partition.entries(b))
    )


def diff_shapley_mc(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator,
    *,
    delta: float = 0.95,
    budget: int = 1000,
) -> Estimate:
    """Monte Carlo differential estimate from `budget` permutation draws.

    With a == b every term is identically zero, so the estimate is returned
    directly without touching the oracle.
    """
    partition.entries(a)
    partition.entries(b)
    est = Estimate(delta=delta)
    if a == b:
        est.count = int(budget)
        return est
    for _ in range(int(budget)):
        perm = sample_permutation(partition, rng)
        est.update(diff_sample_term(partition, oracle, a, b, perm))
    return est


def shapley_mc(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    rng: np.random.Generator,
    *,
    delta: float = 0.95,
    budget: int = 1000,
) -> dict[OwnerId, Estimate]:
    """Per-owner Shapley estimates from shared permutation draws.

    Each permutation is walked once, crediting every owner its marginal
    contribution, so one draw advances all owners together.
    """
    ests = {o: Estimate(delta=delta) for o in partition.owner_ids()}
    for _ in range(int(budget)):
        perm = sample_permutation(partition, rng)
        composed: frozenset[int] = frozenset()
        prev = oracle.value(composed)
        for owner in perm.order:
            composed = composed | partition.entries(owner)
            cur = oracle.value(composed)
            ests[owner].update(cur - prev)
            prev = cur
    return ests


@dataclass(frozen=True)
class FlipResult:
    """Outcome of a sequential flip check between two owners.

    verdict "flipped" means the differential is decisively negative (a is
    worth less than b), "not_flipped" decisively positive, "undecided" means
    the interval still straddles zero when sampling stopped.
    """

    verdict: str
    estimate: Estimate
    budget_exhausted: bool = False

    @property
    def decided(self) -> bool:
        return self.verdict != "undecided"

    def swapped(self) -> "FlipResult":
        """The same evidence read for the pair in the opposite order."""
        est = Estimate(self.estimate.delta, -self.estimate.mean, self.estimate.count, self.estimate.m2)
        flip = {"flipped": "not_flipped", "not_flipped": "flipped"}
        return FlipResult(flip.get(self.verdict, self.verdict), est, self.budget_exhausted)


def is_flipped(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator,
    *,
    delta: float = 0.95,
    budget: int = 100_000,
    batch: int = 64,
    width_stop: float | None = None,
) -> FlipResult:
    """Sequential test of whether owner a has fallen below owner b.

    Samples differential terms until the delta-confidence interval excludes
    zero, the optional width_stop half-width is reached, or the permutation
    budget runs out (verdict "undecided", budget_exhausted set).
    """
    if a == b:
        raise SameOwner(f"flip check needs two distinct owners, got {a!r} twice")
    est = Estimate(delta=delta)
    budget = int(budget)
    while est.count < budget:
        n_draw = min(int(batch), budget - est.count)
        for _ in range(n_draw):
            perm = sample_permutation(partition, rng)
            est.update(diff_sample_term(partition, oracle, a, b, perm))
        lo, hi = est.ci()
        if hi < 0.0:
            return FlipResult("flipped", est)
        if lo > 0.0:
            return FlipResult("not_flipped", est)
        if width_stop is not None and est.half_width <= width_stop:
            return FlipResult("undecided", est)
    return FlipResult("undecided", est, budget_exhausted=True)
