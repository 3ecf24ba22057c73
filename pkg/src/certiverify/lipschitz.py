"""Certification through per-record smoothness weights.

A weight vector w bounds how much the objective can move when any subset of
records is dropped: |f(all) - f(all minus S)| <= sum of w over S. Whenever that
holds, verifying record i independently with probability min(4 w_i / (3 f eps), 1)
catches every consequential invalid subset with probability 2/3 per pass, and
ceil(log3(1/delta)) independent passes push the failure below delta.

Weight constructions are provided for tour length (edges adjacent to each point
on the optimal tour) and Steiner tree cost (half the closed-walk window around
each terminal's first visit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .certify import _check_eps_delta
from .dataset import GRAPH_TERMINALS, POINTS, CertifyOutcome, Dataset, VerificationOracle
from .solvers import steiner_solve, tsp_solve


@dataclass(frozen=True)
class WeightVector:
    """Per-record smoothness weights together with the full-data objective value."""

    ids: tuple[int, ...]
    weights: tuple[float, ...]
    value: float

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.weights):
            raise ValueError("ids and weights must align")
        for w in self.weights:
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"weights must be finite and >= 0, got {w}")

    @property
    def total(self) -> float:
        return math.fsum(self.weights)


@dataclass(frozen=True)
class IndependentPlan:
    """Verify each id independently with probability q_i, repeated ``repetitions`` times."""

    ids: tuple[int, ...]
    q: tuple
    repetitions: int = 1
    value: float | None = None

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.q):
            raise ValueError("ids and q must align")
        for qi in self.q:
            if qi < 0 or qi > 1:
                raise ValueError(f"probabilities must lie in [0,1], got {qi}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @cached_property
    def q_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.q])

    @property
    def expected_verifications(self) -> float:
        return self.repetitions * float(self.q_float.sum())


def repetitions(delta: float) -> int:
    """Independent passes of a 2/3-success scheme needed for failure <= delta."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    return max(1, math.ceil(math.log(1.0 / delta) / math.log(3.0)))


def lipschitz_plan(weights: WeightVector, eps: float, delta: float) -> IndependentPlan:
    """Independent verification plan from a weight vector: q_i = min(2 p_i, 1)
    with p_i = 2 w_i / (3 f eps), amplified by repetition."""
    _check_eps_delta(eps, delta)
    if weights.value <= 0:
        raise ValueError(f"objective value must be positive, got {weights.value}")
    scale = 2.0 / (3.0 * weights.value * eps)
    q = tuple(min(2.0 * scale * w, 1.0) for w in weights.weights)
    return IndependentPlan(ids=weights.ids, q=q, repetitions=repetitions(delta), value=weights.value)


def run_plan(
    plan: IndependentPlan,
    oracle: VerificationOracle,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Execute a plan: every repetition flips one coin per record; any invalid
    verification ends the run as a witness. Ids verified valid once are not
    re-charged on later repetitions."""
    qs = plan.q_float
    seen_valid: set[int] = set()
    used = 0
    for _ in range(plan.repetitions):
        draws = rng.random(len(qs))
        for pos in np.flatnonzero(draws < qs):
            rid = plan.ids[int(pos)]
            if rid in seen_valid:
                continue
            used += 1
            if not oracle.verify(rid):
                return CertifyOutcome.found_invalid([rid], verifications_used=used)
            seen_valid.add(rid)
    return CertifyOutcome.certified(plan.value, verifications_used=used)


# ---------------------------------------------------------------------------
# Weight constructions


def _points_of(dataset_or_points) -> tuple[np.ndarray, tuple[int, ...]]:
    if isinstance(dataset_or_points, Dataset):
        if dataset_or_points.kind != POINTS:
            raise ValueError(f"expected a points dataset, got {dataset_or_points.kind!r}")
        return dataset_or_points.points, dataset_or_points.ids
    pts = np.asarray(dataset_or_points, dtype=float)
    return pts, tuple(range(len(pts)))


def tsp_weights(dataset_or_points) -> WeightVector:
    """Tour-length weights: each point gets the two tour edges incident to it
    on the optimal tour, so the weights sum to exactly twice the tour length."""
    pts, ids = _points_of(dataset_or_points)
    tour, length = tsp_solve(pts)
    n = len(tour)
    w = [0.0] * n
    for k, v in enumerate(tour):
        prev_p = pts[tour[k - 1]]
        next_p = pts[tour[(k + 1) % n]]
        here = pts[v]
        w[v] = float(np.linalg.norm(here - prev_p)) + float(np.linalg.norm(here - next_p))
    return WeightVector(ids=ids, weights=tuple(w), value=length)


def steiner_weights(dataset: Dataset) -> WeightVector:
    """Steiner-cost weights from an Euler walk of the doubled optimal tree.

    Each terminal record is weighted by half the walk distance from the
    previous terminal first-visit to the next one around its own first visit.
    The weights sum to twice the tree cost when terminal vertices are distinct.
    """
    if dataset.kind != GRAPH_TERMINALS:
        raise ValueError(f"expected a graph-terminals dataset, got {dataset.kind!r}")
    graph = dataset.graph
    terminals = [rec.payload for rec in dataset.records]
    distinct = sorted(set(terminals))
    if len(distinct) <= 1:
        value = 0.0
        return WeightVector(ids=dataset.ids, weights=tuple(0.0 for _ in dataset.records), value=value)
    edges, cost = steiner_solve(graph, distinct)

    adj: dict[int, list[tuple[int, float]]] = {}
    for u, v, wt in edges:
        adj.setdefault(u, []).append((v, wt))
        adj.setdefault(v, []).append((u, wt))
    for nbrs in adj.values():
        nbrs.sort()
    root = distinct[0]

    # walk the doubled tree: each edge down and back up, recording distance along the walk
    visits: list[tuple[int, float]] = []
    walked = 0.0

    def dfs(v: int, parent: int) -> None:
        nonlocal walked
        visits.append((v, walked))
        for u, wt in adj.get(v, ()):
            if u == parent:
                continue
            walked += wt
            dfs(u, v)
            walked += wt
            visits.append((v, walked))

    dfs(root, -1)
    total_walk = walked  # equals 2 * cost

    first_at: dict[int, float] = {}
    for v, d in visits:
        if v not in first_at and v in set(distinct):
            first_at[v] = d
    order = sorted(first_at.items(), key=lambda kv: kv[1])  # terminals by first visit
    k = len(order)
    window: dict[int, float] = {}
    for idx, (v, d) in enumerate(order):
        if k == 2:
            window[v] = total_walk  # both windows span the whole closed walk
            continue
        prev_d = order[idx - 1][1]
        next_d = order[(idx + 1) % k][1]
        window[v] = ((next_d - d) % total_walk) + ((d - prev_d) % total_walk)
    weights = tuple(window[rec.payload] / 2.0 for rec in dataset.records)
    return WeightVector(ids=dataset.ids, weights=weights, value=cost)


def certify_lipschitz(
    dataset: Dataset,
    f_and_weights: WeightVector,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Compose plan construction and execution for a weighted objective."""
    if set(f_and_weights.ids) - set(dataset.ids):
        raise ValueError("weight vector names ids outside the dataset")
    plan = lipschitz_plan(f_and_weights, eps, delta)
    return run_plan(plan, oracle, rng)
