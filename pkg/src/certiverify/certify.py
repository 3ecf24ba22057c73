"""Certification schemes for scalar objectives: sum, max, and max-of-sums.

Each scheme either attests the objective computed over all records (verdict
``certified``) or exhibits a record it verified as invalid. The sum scheme
samples ids proportionally to their values and is correct with probability at
least 1 - delta whenever the full-data value exceeds the valid-data value by
more than the 1/(1-eps) factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import SCALAR, CertifyOutcome, Dataset, VerificationOracle, restrict


def _check_eps_delta(eps: float, delta: float) -> None:
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1), got {delta}")


def sum_value(dataset: Dataset) -> float:
    """Compensated sum of all scalar payloads."""
    if dataset.kind != SCALAR:
        raise ValueError(f"sum_value needs a scalar dataset, got {dataset.kind!r}")
    return math.fsum(dataset.values)


def sample_count(eps: float, delta: float) -> int:
    """Verifications needed so that (1-eps)^k <= delta."""
    return max(1, math.ceil(math.log(1.0 / delta) / eps))


@dataclass(frozen=True)
class SumSamplingPlan:
    """Value-proportional sampling distribution plus the draw count."""

    ids: tuple[int, ...]
    probabilities: np.ndarray
    sample_count: int

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Sample ``sample_count`` ids i.i.d. from the plan (with replacement)."""
        cum = np.cumsum(self.probabilities)
        pos = np.searchsorted(cum, rng.random(self.sample_count) * cum[-1], side="right")
        pos = np.minimum(pos, len(self.ids) - 1)
        return np.asarray(self.ids, dtype=int)[pos]


def sum_plan(dataset: Dataset, eps: float, delta: float) -> SumSamplingPlan:
    _check_eps_delta(eps, delta)
    values = dataset.values
    total = math.fsum(values)
    if total <= 0:
        raise ValueError("sampling plan undefined for zero total mass")
    return SumSamplingPlan(
        ids=dataset.ids,
        probabilities=values / total,
        sample_count=sample_count(eps, delta),
    )


def certify_sum(
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Sample-and-verify certification of the sum of scalar records.

    Draws k = ceil(ln(1/delta)/eps) ids proportionally to value, verifying each
    distinct sampled id once; stops at the first invalid record found.
    """
    _check_eps_delta(eps, delta)
    total = sum_value(dataset)
    if total <= 0:
        # nothing carries mass, the multiplicative guarantee is vacuous
        return CertifyOutcome.certified(0.0, verifications_used=0)
    plan = sum_plan(dataset, eps, delta)
    sampled = plan.draw(rng)
    seen: set[int] = set()
    used = 0
    for rid in sampled:
        rid = int(rid)
        if rid in seen:
            continue
        seen.add(rid)
        used += 1
        if not oracle.verify(rid):
            return CertifyOutcome.found_invalid([rid], verifications_used=used)
    return CertifyOutcome.certified(total, verifications_used=used)


def certify_max(dataset: Dataset, oracle: VerificationOracle) -> CertifyOutcome:
    """Deterministic certification of the max: verify the argmax record (ties to lowest id)."""
    if dataset.kind != SCALAR:
        raise ValueError(f"certify_max needs a scalar dataset, got {dataset.kind!r}")
    if dataset.n == 0:
        raise ValueError("certify_max undefined on an empty dataset")
    pos = int(np.argmax(dataset.values))  # first occurrence wins, records are id-ordered
    rid = dataset.ids[pos]
    if oracle.verify(rid):
        return CertifyOutcome.certified(float(dataset.values[pos]), verifications_used=1)
    return CertifyOutcome.found_invalid([rid], verifications_used=1)


def group_sums(dataset: Dataset) -> dict[str, float]:
    by_id = {rec.id: rec.payload for rec in dataset.records}
    return {
        label: math.fsum(by_id[i] for i in ids)
        for label, ids in dataset.groups.items()
    }


def certify_max_of_sums(
    dataset: Dataset,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Certify the largest group sum: pick the argmax group (ties to the
    lexicographically least label) and run the sum scheme inside it."""
    _check_eps_delta(eps, delta)
    sums = group_sums(dataset)
    if not sums:
        raise ValueError("max-of-sums needs at least one group")
    best = max(sums.values())
    label = min(l for l, s in sums.items() if s == best)
    keep = set(dataset.groups[label])
    sub = restrict(dataset, dataset.id_set - keep)
    return certify_sum(sub, oracle, eps, delta, rng)
