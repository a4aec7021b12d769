"""Counterfactual transfer sets: which entries must a give b to flip their rank.

Given owners a and b with a currently valued above b, an explanation is a
subset of a's entries whose transfer to b makes b's Shapley value exceed a's.
Three engines trade optimality for speed:

- bruteforce: exact differentials, subsets enumerated in ascending size, so
  the first hit is minimum-cardinality. Exponential; guarded by size limits.
- mc: the same ascending enumeration, but each subset is judged by a
  sequential Monte Carlo flip check. Near-minimal answers at a fraction of
  the evaluations.
- svexp: greedy growth guided by a Thompson-sampling race over per-entry
  powers; each round transfers the entry currently most able to close the
  gap, then re-checks the pair. Scales to owner sizes where enumeration is
  hopeless, possibly overshooting the minimal size.

All engines verify their answer with a fresh flip check before reporting
success, report partial progress on wall-clock timeout, and never raise for
soft outcomes (statuses cover those); malformed requests raise.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    EntryId,
    OwnerId,
    OwnerPartition,
    SameOwner,
    TooLarge,
    Transfer,
    apply_transfer,
)
from .power import Top1Result, make_power_sampler, thompson_top1
from .shapley import Estimate, FlipResult, diff_shapley_exact, is_flipped
from .utility import UtilityOracle

STATUS_OK = "ok"
STATUS_NOT_MET = "precondition_not_met"
STATUS_UNDECIDED = "precondition_undecided"
STATUS_TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExplainConfig:
    """Knobs shared by the engines; defaults suit desk-scale runs."""

    delta: float = 0.95
    epsilon: float = 0.01
    check_budget: int = 20_000
    verify_budget: int | None = None
    batch: int = 64
    width_stop: float = 0.01
    seed_batch: int = 8
    bandit_batch: int = 32
    arm_budget: int = 20_000
    bandit_budget: int | None = None
    posterior_draws: int = 256
    timeout: float = 7200.0
    owner_limit: int = 12
    bf_entry_limit: int = 20

    def verify(self) -> int:
        return self.verify_budget if self.verify_budget is not None else 2 * self.check_budget


@dataclass(frozen=True)
class TransferStep:
    """One greedy round: the entry moved and the evidence behind the move."""

    entry: EntryId
    power_mean: float
    power_half_width: float
    bandit_samples: int
    bandit_converged: bool
    check_verdict: str
    check_mean: float
    check_half_width: float
    check_samples: int


@dataclass(frozen=True)
class CounterfactualResult:
    """Outcome of one explanation request.

    status "ok" means the search ran to completion (the transfer set may still
    fail to flip when even moving everything does not help: success is False
    then). delta is the transferred entry set in ascending order. Estimated
    quantities carry half-widths; exact engines report 0.0 there.
    """

    engine: str
    a: OwnerId
    b: OwnerId
    status: str
    delta: tuple[EntryId, ...]
    success: bool
    initial_diff: float
    initial_half_width: float
    final_diff: float | None
    final_half_width: float | None
    samples_used: int
    subsets_tested: int
    steps: tuple[TransferStep, ...] = ()
    timed_out: bool = False
    budget_exhausted: bool = False
    wall_time: float = 0.0

    @property
    def size(self) -> int:
        return len(self.delta)

    def to_dict(self, *, include_timing: bool = False) -> dict:
        out = {
            "engine": self.engine,
            "a": self.a,
            "b": self.b,
            "status": self.status,
            "delta": [int(e) for e in self.delta],
            "size": self.size,
            "success": self.success,
            "initial_diff": self.initial_diff,
            "initial_half_width": self.initial_half_width,
            "final_diff": self.final_diff,
            "final_half_width": self.final_half_width,
            "samples_used": self.samples_used,
            "subsets_tested": self.subsets_tested,
            "timed_out": self.timed_out,
            "budget_exhausted": self.budget_exhausted,
            "steps": [
                {
                    "entry": int(s.entry),
                    "power_mean": s.power_mean,
                    "power_half_width": s.power_half_width,
                    "bandit_samples": s.bandit_samples,
                    "bandit_converged": s.bandit_converged,
                    "check_verdict": s.check_verdict,
                    "check_mean": s.check_mean,
                    "check_half_width": s.check_half_width,
                    "check_samples": s.check_samples,
                }
                for s in self.steps
            ],
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


def _validate_pair(partition: OwnerPartition, a: OwnerId, b: OwnerId) -> None:
    if a == b:
        raise SameOwner(f"explanation needs two distinct owners, got {a!r} twice")
    partition.entries(a)
    partition.entries(b)


def _mc_precheck(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator,
    cfg: ExplainConfig,
    initial: FlipResult | None,
) -> FlipResult:
    if initial is not None:
        return initial
    # A width stop of cfg.width_stop is exactly the adaptive
    # eps = width_stop * max(1, |mean|) rule here: with the interval still
    # straddling zero the half-width exceeds |mean|, so the adaptive branch
    # with |mean| > 1 can never fire first.
    return is_flipped(
        partition,
        oracle,
        a,
        b,
        rng,
        delta=cfg.delta,
        budget=cfg.check_budget,
        batch=cfg.batch,
        width_stop=cfg.width_stop,
    )


def explain_bruteforce(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    *,
    config: ExplainConfig | None = None,
    initial: FlipResult | None = None,
) -> CounterfactualResult:
    """Minimum-cardinality transfer set by exact ascending-size enumeration.

    Subsets of equal size are tried in lexicographic entry order, so ties
    break deterministically toward the smallest entry ids. `initial` is
    ignored: this engine decides the precondition exactly.
    """
    cfg = config or ExplainConfig()
    _validate_pair(partition, a, b)
    del initial
    ents = sorted(partition.entries(a))
    if len(ents) > cfg.bf_entry_limit:
        raise TooLarge(
            f"brute force over {len(ents)} entries exceeds the limit {cfg.bf_entry_limit}"
        )
    start = time.monotonic()
    d0 = diff_shapley_exact(partition, oracle, a, b, owner_limit=cfg.owner_limit)

    def done(status, delta, success, final, tested, timed_out=False):
        return CounterfactualResult(
            engine="bf",
            a=a,
            b=b,
            status=status,
            delta=tuple(sorted(delta)),
            success=success,
            initial_diff=d0,
            initial_half_width=0.0,
            final_diff=final,
            final_half_width=None if final is None else 0.0,
            samples_used=0,
            subsets_tested=tested,
            timed_out=timed_out,
            wall_time=time.monotonic() - start,
        )

    if d0 <= 0.0:
        return done(STATUS_NOT_MET, (), False, None, 0)
    tested = 0
    for size in range(1, len(ents) + 1):
        for combo in itertools.combinations(ents, size):
            if time.monotonic() - start > cfg.timeout:
                return done(STATUS_TIMEOUT, (), False, None, tested, timed_out=True)
            moved = apply_transfer(partition, Transfer(a, b, frozenset(combo)))
            d = diff_shapley_exact(moved, oracle, a, b, owner_limit=cfg.owner_limit)
            tested += 1
            if d < 0.0:
                return done(STATUS_OK, combo, True, d, tested)
    # Even the full transfer does not flip; hand back everything as the
    # best-effort answer.
    moved = apply_transfer(partition, Transfer(a, b, frozenset(ents)))
    d = diff_shapley_exact(moved, oracle, a, b, owner_limit=cfg.owner_limit)
    return done(STATUS_OK, ents, False, d, tested)


def explain_mc(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator,
    *,
    config: ExplainConfig | None = None,
    initial: FlipResult | None = None,
) -> CounterfactualResult:
    """Ascending-size search with Monte Carlo flip checks.

    Each candidate subset gets a fresh sequential check with check_budget
    permutations; undecided checks count as not flipped. The first flipped
    subset is re-verified with verify_budget permutations before reporting
    success.
    """
    cfg = config or ExplainConfig()
    _validate_pair(partition, a, b)
    ents = sorted(partition.entries(a))
    start = time.monotonic()
    samples = 0
    exhausted = False

    pre = _mc_precheck(partition, oracle, a, b, rng, cfg, initial)
    if initial is None:
        samples += pre.estimate.count
    exhausted |= pre.budget_exhausted

    def done(status, delta, success, final: Estimate | None, tested, timed_out=False):
        return CounterfactualResult(
            engine="mc",
            a=a,
            b=b,
            status=status,
            delta=tuple(sorted(delta)),
            success=success,
            initial_diff=pre.estimate.mean,
            initial_half_width=pre.estimate.half_width if pre.estimate.count >= 2 else 0.0,
            final_diff=None if final is None else final.mean,
            final_half_width=None if final is None else final.half_width,
            samples_used=samples,
            subsets_tested=tested,
            timed_out=timed_out,
            budget_exhausted=exhausted,
            wall_time=time.monotonic() - start,
        )

    if pre.verdict == "flipped":
        return done(STATUS_NOT_MET, (), False, None, 0)
    if pre.verdict == "undecided":
        return done(STATUS_UNDECIDED, (), False, None, 0)

    def verify(delta_set) -> FlipResult:
        nonlocal samples
        moved = apply_transfer(partition, Transfer(a, b, frozenset(delta_set)))
        res = is_flipped(
            moved, oracle, a, b, rng,
            delta=cfg.delta, budget=cfg.verify(), batch=cfg.batch, width_stop=cfg.width_stop,
        )
        samples += res.estimate.count
        return res

    tested = 0
    for size in range(1, len(ents) + 1):
        for combo in itertools.combinations(ents, size):
            if time.monotonic() - start > cfg.timeout:
                return done(STATUS_TIMEOUT, (), False, None, tested, timed_out=True)
            moved = apply_transfer(partition, Transfer(a, b, frozenset(combo)))
            check = is_flipped(
                moved, oracle, a, b, rng,
                delta=cfg.delta, budget=cfg.check_budget, batch=cfg.batch,
                width_stop=cfg.width_stop,
            )
            samples += check.estimate.count
            exhausted |= check.budget_exhausted
            tested += 1
            if check.verdict == "flipped":
                final = verify(combo)
                exhausted |= final.budget_exhausted
                return done(STATUS_OK, combo, final.verdict == "flipped", final.estimate, tested)
    final = verify(ents)
    exhausted |= final.budget_exhausted
    return done(STATUS_OK, ents, final.verdict == "flipped", final.estimate, tested)


def explain_svexp(
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator,
    *,
    config: ExplainConfig | None = None,
    initial: FlipResult | None = None,
) -> CounterfactualResult:
    """Greedy transfer loop guided by a Thompson top-1 race over entry powers.

    Each round races a's remaining entries (a forced pick when only one is
    left), transfers the winner, and re-checks the pair. Stops on a flip, on
    timeout, or when a has nothing left to give.
    """
    cfg = config or ExplainConfig()
    _validate_pair(partition, a, b)
    start = time.monotonic()
    samples = 0
    exhausted = False

    pre = _mc_precheck(partition, oracle, a, b, rng, cfg, initial)
    if initial is None:
        samples += pre.estimate.count
    exhausted |= pre.budget_exhausted

    steps: list[TransferStep] = []
    transferred: list[EntryId] = []

    def done(status, success, final: Estimate | None, timed_out=False):
        return CounterfactualResult(
            engine="svexp",
            a=a,
            b=b,
            status=status,
            delta=tuple(sorted(transferred)),
            success=success,
            initial_diff=pre.estimate.mean,
            initial_half_width=pre.estimate.half_width if pre.estimate.count >= 2 else 0.0,
            final_diff=None if final is None else final.mean,
            final_half_width=None if final is None else final.half_width,
            samples_used=samples,
            subsets_tested=len(steps),
            steps=tuple(steps),
            timed_out=timed_out,
            budget_exhausted=exhausted,
            wall_time=time.monotonic() - start,
        )

    if pre.verdict == "flipped":
        return done(STATUS_NOT_MET, False, None)
    if pre.verdict == "undecided":
        return done(STATUS_UNDECIDED, False, None)

    current = partition
    while True:
        remaining = sorted(current.entries(a))
        if not remaining:
            break
        if time.monotonic() - start > cfg.timeout:
            return done(STATUS_TIMEOUT, False, None, timed_out=True)

        if len(remaining) == 1:
            # Power of a lone entry is undefined; the pick is forced anyway.
            pick: Top1Result | None = None
            entry = remaining[0]
        else:
            pick = thompson_top1(
                remaining,
                make_power_sampler(current, oracle, a, b),
                rng,
                delta=cfg.delta,
                epsilon=cfg.epsilon,
                seed_batch=cfg.seed_batch,
                batch=cfg.bandit_batch,
                arm_budget=cfg.arm_budget,
                total_budget=cfg.bandit_budget,
                posterior_draws=cfg.posterior_draws,
                common=current.entries(b),
            )
            samples += pick.samples
            exhausted |= pick.budget_exhausted
            entry = pick.entry

        current = apply_transfer(current, Transfer(a, b, frozenset({entry})))
        transferred.append(entry)
        check = is_flipped(
            current, oracle, a, b, rng,
            delta=cfg.delta, budget=cfg.check_budget, batch=cfg.batch,
            width_stop=cfg.width_stop,
        )
        samples += check.estimate.count
        exhausted |= check.budget_exhausted
        if pick is None:
            power_mean, power_hw, bandit_n, bandit_ok = 0.0, 0.0, 0, True
        else:
            arm = next(s for s in pick.arms if s.entry == entry)
            power_mean = arm.estimate.mean
            power_hw = arm.estimate.half_width
            bandit_n, bandit_ok = pick.samples, pick.converged
        steps.append(
            TransferStep(
                entry=entry,
                power_mean=power_mean,
                power_half_width=power_hw,
                bandit_samples=bandit_n,
                bandit_converged=bandit_ok,
                check_verdict=check.verdict,
                check_mean=check.estimate.mean,
                check_half_width=check.estimate.half_width,
                check_samples=check.estimate.count,
            )
        )
        if check.verdict == "flipped":
            final = is_flipped(
                current, oracle, a, b, rng,
                delta=cfg.delta, budget=cfg.verify(), batch=cfg.batch,
                width_stop=cfg.width_stop,
            )
            samples += final.estimate.count
            exhausted |= final.budget_exhausted
            return done(STATUS_OK, final.verdict == "flipped", final.estimate)

    final = is_flipped(
        current, oracle, a, b, rng,
        delta=cfg.delta, budget=cfg.verify(), batch=cfg.batch, width_stop=cfg.width_stop,
    )
    samples += final.estimate.count
    exhausted |= final.budget_exhausted
    return done(STATUS_OK, final.verdict == "flipped", final.estimate)


ENGINES = {
    "bf": explain_bruteforce,
    "mc": explain_mc,
    "svexp": explain_svexp,
}


def explain(
    engine: str,
    partition: OwnerPartition,
    oracle: UtilityOracle,
    a: OwnerId,
    b: OwnerId,
    rng: np.random.Generator | None = None,
    *,
    config: ExplainConfig | None = None,
    initial: FlipResult | None = None,
) -> CounterfactualResult:
    """Dispatch to an engine by name ("bf", "mc", "svexp")."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {sorted(ENGINES)}")
    if engine == "bf":
        return explain_bruteforce(partition, oracle, a, b, config=config, initial=initial)
    if rng is None:
        raise ValueError(f"engine {engine!r} needs an rng")
    return ENGINES[engine](partition, oracle, a, b, rng, config=config, initial=initial)
