"""Correction schemes: compute an accurate value even when certification fails.

Weak model: every caught invalid record refunds a full budget (restart
semantics), so total charge is bounded by (catches + 1) times the per-attempt
cost. The workhorse is a random walk over repeated certification rounds that
stops once clean rounds outnumber catches by a margin.

Strong model: verifying an invalid record is free; only valid verifications
count. Sum estimation and a conditional-sampling adapter live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certify import _check_eps_delta, sum_value
from .dataset import (
    STRONG,
    WEAK,
    CertifyOutcome,
    Dataset,
    VerificationOracle,
    restrict,
)

ROUND_DELTA = 1.0 / 3.0  # per-round certifier failure budget inside walks


class CorrectionFailure(RuntimeError):
    """The dataset is too corrupted to correct within the budget caps."""


def _require_mode(oracle: VerificationOracle, mode: str, what: str) -> None:
    if oracle.mode != mode:
        raise ValueError(f"{what} needs a {mode}-mode oracle, got {oracle.mode}")


def walk_start(delta: float) -> int:
    """Starting height of the correction walk: failing runs drift right, and a
    2^-C bound on a right-biased walk reaching 0 gives C = ceil(log2(1/delta))."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    return max(1, math.ceil(math.log2(1.0 / delta)))


@dataclass
class WalkState:
    """Trace of one correction walk.

    ``candidate_snapshots`` holds the distinct record sets certification ran
    on, in order: the initial dataset plus one snapshot per catch.
    """

    position: int
    removed_ids: set[int] = field(default_factory=set)
    candidate_snapshots: list[Dataset] = field(default_factory=list)
    rounds: int = 0
    catches: int = 0
    value: float | None = None


Certifier = Callable[..., CertifyOutcome]  # (dataset, oracle, eps, delta, rng) -> outcome


def run_walk(
    certifier: Certifier,
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    rng: np.random.Generator,
    start: int,
) -> WalkState:
    """Repeat certification rounds, stepping right on a catch (removing the
    caught records) and left on a clean round; stop at height zero.

    Terminates in at most start + 2 * (number of invalid records) rounds: once
    every invalid record is gone a sound certifier can only produce clean
    rounds, and the walk drifts straight down.
    """
    state = WalkState(position=start, candidate_snapshots=[dataset])
    current = dataset
    limit = start + 2 * dataset.n + 2
    while state.position > 0:
        if state.rounds > limit:
            raise RuntimeError("correction walk failed to terminate; certifier is unsound")
        oracle.note_round()
        state.rounds += 1
        outcome = certifier(current, oracle, eps, ROUND_DELTA, rng)
        if outcome.is_invalid_found:
            current = restrict(current, outcome.invalid_ids)
            state.removed_ids.update(outcome.invalid_ids)
            state.candidate_snapshots.append(current)
            state.catches += 1
            state.position += 1
        else:
            state.value = outcome.value
            state.position -= 1
    return state


def weak_correct_monotone(
    certifier: Certifier,
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> float:
    """Weak correction for objectives that never grow when records are removed.

    The value of the final clean round is the objective on the surviving
    records; the walk guarantees it is within the tolerance band of the
    valid-data value with probability at least 1 - delta.
    """
    _check_eps_delta(eps, delta)
    _require_mode(oracle, WEAK, "weak correction")
    state = run_walk(certifier, dataset, oracle, eps, rng, walk_start(delta))
    return state.value


def test_subset(
    snapshot: Dataset,
    gamma: float,
    certifier: Certifier,
    oracle: VerificationOracle,
    eps: float,
    rng: np.random.Generator,
) -> bool:
    """Decide whether certification on ``snapshot`` comes back clean often.

    Runs the certifier m = ceil(450 ln(2/gamma)) times and accepts when the
    clean fraction reaches 11/30. Snapshots with clean probability >= 2/5 are
    accepted and those <= 1/3 rejected, each up to error gamma (Hoeffding with
    margin 1/30); in between the answer is unconstrained.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0,1), got {gamma}")
    m = math.ceil(450.0 * math.log(2.0 / gamma))
    batch = getattr(certifier, "run_batch", None)
    if batch is not None:
        clean = int(batch(snapshot, oracle, eps, ROUND_DELTA, m, rng).sum())
    else:
        clean = 0
        for _ in range(m):
            outcome = certifier(snapshot, oracle, eps, ROUND_DELTA, rng)
            if outcome.is_certified:
                clean += 1
    return clean * 30 >= 11 * m


def _select_candidate(
    candidates: list[Dataset],
    certifier: Certifier,
    oracle: VerificationOracle,
    eps: float,
    rng: np.random.Generator,
) -> Dataset | None:
    """Elimination tournament over walk snapshots; None when nothing survives."""
    k = len(candidates)
    survivors = list(candidates)
    max_rounds = max(0, math.ceil(math.log2(max(1.0, math.log2(k))))) if k >= 3 else 0
    for t in range(1, max_rounds + 1):
        gamma = 10.0 ** (-t)
        passed = [s for s in survivors if test_subset(s, gamma, certifier, oracle, eps, rng)]
        if not passed:
            return None
        if 2 * len(passed) > len(survivors):
            return passed[int(rng.integers(len(passed)))]
        survivors = passed
    final_gamma = 1.0 / (k * k) if k >= 2 else 0.5
    for s in survivors:
        if test_subset(s, final_gamma, certifier, oracle, eps, rng):
            return s
    return None


def weak_correct_general(
    certifier: Certifier,
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    value_fn: Callable[[Dataset], float] | None = None,
) -> float:
    """Weak correction without monotonicity.

    Each wrap runs a fresh walk, then screens the intermediate snapshots: the
    final survivor of a clean walk may be overshot for a non-monotone
    objective, but some snapshot along the way is guaranteed good. Wrapping
    ceil(9 ln(1/delta)) times and taking the median of the accepted values
    drives the failure probability below delta.
    """
    _check_eps_delta(eps, delta)
    _require_mode(oracle, WEAK, "weak correction")
    if value_fn is None:
        value_fn = getattr(certifier, "value_fn", None)
    if value_fn is None:
        raise ValueError("weak_correct_general needs a value_fn (or a certifier exposing one)")
    wraps = math.ceil(9.0 * math.log(1.0 / delta))
    start = walk_start(delta)
    accepted: list[float] = []
    for _ in range(wraps):
        state = run_walk(certifier, dataset, oracle, eps, rng, start)
        if state.catches == 0:
            accepted.append(state.value)
            continue
        choice = _select_candidate(state.candidate_snapshots, certifier, oracle, eps, rng)
        if choice is not None:
            accepted.append(value_fn(choice))
    if not accepted:
        raise CorrectionFailure("no walk snapshot passed screening; dataset too corrupted")
    return float(np.median(accepted))


# ---------------------------------------------------------------------------
# Strong model


def strong_sample_count(eps: float, delta: float) -> int:
    """Valid verifications needed for the ratio estimator: ceil(ln(2/delta)/eps^2)."""
    return max(1, math.ceil(math.log(2.0 / delta) / (eps * eps)))


def strong_correct_sum(
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    draw_cap_factor: int = 100,
) -> float:
    """Estimate the valid-record sum with only valid verifications charged.

    Samples ids proportionally to value until k = ceil(ln(2/delta)/eps^2) valid
    records are seen after M total draws, then scales: (k/M) * full sum.
    Aborts as too-corrupted when 100k draws yield fewer than k valid hits.
    """
    _check_eps_delta(eps, delta)
    _require_mode(oracle, STRONG, "strong sum correction")
    values = dataset.values
    total = math.fsum(values)
    if total <= 0:
        return 0.0  # vacuous: nothing carries mass
    k = strong_sample_count(eps, delta)
    cap = draw_cap_factor * k
    cum = np.cumsum(values / total)
    ids = np.asarray(dataset.ids, dtype=int)
    valid_seen = 0
    draws = 0
    block = max(64, 2 * k)
    while draws < cap:
        size = min(block, cap - draws)
        pos = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(ids) - 1)
        for rid in ids[pos]:
            draws += 1
            if oracle.verify(int(rid)):
                valid_seen += 1
                if valid_seen == k:
                    return (k / draws) * total
    raise CorrectionFailure(
        f"fewer than {k} valid records in {cap} draws; mass is almost entirely invalid"
    )


def cond_sample(
    dataset: Dataset,
    oracle: VerificationOracle,
    predicate: Callable[[object], bool],
    rng: np.random.Generator,
) -> tuple[int, object] | None:
    """One conditional sample at one charged verification.

    Scans records in a fresh uniform order; the first predicate match that
    verifies valid is returned (charged 1), invalid matches are skipped for
    free, and None comes back when no valid match exists (charged 0). The
    returned record is uniform over valid matching records.
    """
    _require_mode(oracle, STRONG, "conditional sampling")
    for pos in rng.permutation(dataset.n):
        rec = dataset.records[int(pos)]
        if predicate(rec.payload):
            if oracle.verify(rec.id):
                return rec.id, rec.payload
    return None


def strong_correct_max(
    dataset: Dataset,
    oracle: VerificationOracle,
    rng: np.random.Generator,
) -> float:
    """Exact max over valid records via ascending conditional samples.

    Each round asks for a uniformly random valid record strictly above the
    current best; the final best is exactly the valid max. Cost is one charged
    verification per successful round.
    """
    if dataset.n == 0:
        raise CorrectionFailure("empty dataset has no valid records")
    best: float | None = None
    while True:
        floor = best
        hit = cond_sample(
            dataset, oracle,
            (lambda v: True) if floor is None else (lambda v: v > floor),
            rng,
        )
        if hit is None:
            if best is None:
                raise CorrectionFailure("no valid records to take a max over")
            return best
        best = hit[1]
