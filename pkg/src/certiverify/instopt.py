"""Instance-optimal verification planning by explicit subset enumeration.

For a concrete instance, the minimum expected number of verifications any
2/3-correct scheme can get away with is the value of a covering LP: pick
per-record probabilities p_i minimizing their sum while every subset whose
removal moves the objective outside the tolerance band gets total probability
at least 2/3. Enumeration is exponential, so everything here is capped at desk
scale; it exists to give exact lower bounds and oracle plans, not throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .certify import _check_eps_delta
from .dataset import CertifyOutcome, Dataset, VerificationOracle, restrict
from .lipschitz import IndependentPlan, repetitions
from .lp import F0, F1, simplex_max

ENUMERATION_CAP = 14
COVER_THRESHOLD = Fraction(2, 3)


@dataclass(frozen=True)
class ViolationFamily:
    """Subsets whose removal shifts the objective ratio outside the band.

    ``minimal_only`` records whether the family was pruned to inclusion-minimal
    subsets (valid when violation is preserved under supersets, e.g. for
    objectives that only shrink when records are removed). ``zero_value`` flags
    instances with f = 0, whose ratio is defined as 1 and never violates.
    """

    ids: tuple[int, ...]
    subsets: tuple[frozenset[int], ...]
    eps: float
    minimal_only: bool = False
    zero_value: bool = False

    @property
    def n(self) -> int:
        return len(self.ids)


def is_violating(full_value: float, rest_value: float, eps: float, guard: float = 0.0) -> bool:
    """Strictly outside [1-eps, 1/(1-eps)]: boundary ratios do not violate.

    ``guard`` widens the band to absorb float noise in the objective.
    """
    if full_value == 0:
        return False  # ratio defined as 1
    if rest_value == 0:
        return True  # ratio +inf
    ratio = full_value / rest_value
    return ratio < (1.0 - eps) - guard or ratio > 1.0 / (1.0 - eps) + guard


def enumerate_violations(
    f: Callable[[Dataset], float],
    dataset: Dataset,
    eps: float,
    cap_n: int = ENUMERATION_CAP,
    prune_minimal: bool = False,
    guard: float = 0.0,
) -> ViolationFamily:
    """Brute-force the violating family of ``f`` on ``dataset``.

    ``f`` must be total on every sub-dataset. ``prune_minimal`` keeps only
    subsets none of whose single-record removals still violate; use it only
    when the objective is monotone under record removal.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    cap = min(cap_n, ENUMERATION_CAP)
    n = dataset.n
    if n > cap:
        raise ValueError(f"n={n} exceeds the enumeration cap {cap}")
    ids = dataset.ids
    full_value = f(dataset)
    if full_value == 0:
        return ViolationFamily(ids=ids, subsets=(), eps=eps, minimal_only=prune_minimal, zero_value=True)
    viol = np.zeros(1 << n, dtype=bool)
    for mask in range(1, 1 << n):
        drop = [ids[i] for i in range(n) if (mask >> i) & 1]
        rest_value = f(restrict(dataset, drop))
        viol[mask] = is_violating(full_value, rest_value, eps, guard)
    keep = []
    for mask in range(1, 1 << n):
        if not viol[mask]:
            continue
        if prune_minimal and any(viol[mask ^ (1 << i)] for i in range(n) if (mask >> i) & 1):
            continue
        keep.append(frozenset(ids[i] for i in range(n) if (mask >> i) & 1))
    return ViolationFamily(ids=ids, subsets=tuple(keep), eps=eps, minimal_only=prune_minimal)


@dataclass(frozen=True)
class FractionalPlan:
    """Exact optimum of the verification-lower-bound LP."""

    ids: tuple[int, ...]
    p: tuple[Fraction, ...]
    objective: Fraction


def _inclusion_minimal(subsets: Sequence[frozenset]) -> list[frozenset]:
    by_size = sorted(set(subsets), key=len)
    kept: list[frozenset] = []
    for s in by_size:
        if not any(t <= s for t in kept):
            kept.append(s)
    return kept


def solve_cert_lp(family: ViolationFamily) -> FractionalPlan:
    """Minimize sum p_i subject to sum_{i in S} p_i >= 2/3 for every violating S
    and 0 <= p_i <= 1, exactly.

    Constraints from supersets of other family members are implied and dropped
    before solving; p = 1 is always feasible since violating subsets are
    nonempty.
    """
    ids = family.ids
    n = len(ids)
    if any(len(s) == 0 for s in family.subsets):
        raise ValueError("the empty set cannot violate; malformed family")
    if not family.subsets:
        return FractionalPlan(ids=ids, p=tuple([F0] * n), objective=F0)
    pos = {rid: i for i, rid in enumerate(ids)}
    constraints = _inclusion_minimal(family.subsets)
    A: list[list[Fraction]] = []
    b: list[Fraction] = []
    for s in constraints:
        row = [F0] * n
        for rid in s:
            row[pos[rid]] = Fraction(-1)
        A.append(row)
        b.append(-COVER_THRESHOLD)
    for i in range(n):
        row = [F0] * n
        row[i] = F1
        A.append(row)
        b.append(F1)
    c = [Fraction(-1)] * n
    res = simplex_max(A, b, c)
    return FractionalPlan(ids=ids, p=res.x, objective=-res.value)


def round_plan(plan: FractionalPlan) -> IndependentPlan:
    """Independent scheme from a fractional plan: q_i = min(2 p_i, 1).

    Any violating subset is then caught with probability at least
    1 - exp(-4/3) > 2/3 in a single pass.
    """
    q = tuple(min(2 * x, F1) for x in plan.p)
    return IndependentPlan(ids=plan.ids, q=q, repetitions=1)


def check_feasibility(p, family: ViolationFamily) -> bool:
    """Exact check that a candidate vector covers every violating subset.

    ``p`` maps ids to probabilities (or aligns with ``family.ids``); float
    entries are converted to rationals exactly.
    """
    if isinstance(p, Mapping):
        lookup = {rid: Fraction(v) for rid, v in p.items()}
    else:
        if len(p) != len(family.ids):
            raise ValueError("p must align with family ids")
        lookup = {rid: Fraction(v) for rid, v in zip(family.ids, p)}
    for s in family.subsets:
        if sum((lookup[rid] for rid in s), F0) < COVER_THRESHOLD:
            return False
    return True


class PlanCertifier:
    """Certifier for an arbitrary desk-scale objective, built on enumerated plans.

    Each distinct record set seen gets its violation family enumerated once,
    the covering LP solved, and the doubled plan cached; runs then just flip
    coins and verify. Per-pass failure is at most 1/3 on every violating
    subset, and ceil(log3(1/delta)) passes meet a target delta.
    """

    def __init__(
        self,
        value_fn: Callable[[Dataset], float],
        cap_n: int = ENUMERATION_CAP,
        prune_minimal: bool = False,
        guard: float = 0.0,
    ):
        self.value_fn = value_fn
        self.cap_n = cap_n
        self.prune_minimal = prune_minimal
        self.guard = guard
        self._plans: dict[tuple, tuple[tuple[int, ...], np.ndarray]] = {}

    def plan_for(self, dataset: Dataset, eps: float) -> tuple[tuple[int, ...], np.ndarray]:
        key = (dataset.id_set, eps)
        if key not in self._plans:
            family = enumerate_violations(
                self.value_fn, dataset, eps,
                cap_n=self.cap_n, prune_minimal=self.prune_minimal, guard=self.guard,
            )
            rounded = round_plan(solve_cert_lp(family))
            self._plans[key] = (rounded.ids, rounded.q_float)
        return self._plans[key]

    def __call__(
        self,
        dataset: Dataset,
        oracle: VerificationOracle,
        eps: float,
        delta: float,
        rng: np.random.Generator,
    ) -> CertifyOutcome:
        _check_eps_delta(eps, delta)
        ids, q = self.plan_for(dataset, eps)
        seen_valid: set[int] = set()
        used = 0
        for _ in range(repetitions(delta)):
            for pos in np.flatnonzero(rng.random(len(q)) < q):
                rid = ids[int(pos)]
                if rid in seen_valid:
                    continue
                used += 1
                if not oracle.verify(rid):
                    return CertifyOutcome.found_invalid([rid], verifications_used=used)
                seen_valid.add(rid)
        return CertifyOutcome.certified(self.value_fn(dataset), verifications_used=used)

    def run_batch(
        self,
        dataset: Dataset,
        oracle: VerificationOracle,
        eps: float,
        delta: float,
        m: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Clean-run flags for ``m`` independent executions (True = no invalid
        record verified). Every drawn verification is charged; outcomes are
        distributed exactly as ``m`` sequential calls."""
        _check_eps_delta(eps, delta)
        ids, q = self.plan_for(dataset, eps)
        ids_arr = np.asarray(ids, dtype=int)
        clean = np.ones(m, dtype=bool)
        for _ in range(repetitions(delta)):
            drawn = rng.random((m, len(q))) < q[None, :]
            run_idx, col_idx = np.nonzero(drawn)
            if run_idx.size == 0:
                continue
            valid = oracle.verify_batch(ids_arr[col_idx])
            bad_runs = np.unique(run_idx[~valid])
            clean[bad_runs] = False
        return clean
