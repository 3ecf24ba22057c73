"""Adversary generators, the seeded Monte Carlo experiment runner, and CSV reports.

The harness is the only component allowed to read the ground truth directly:
it plants invalid records, reruns schemes over derived per-trial seeds, and
scores certified verdicts against the exact valid-data objective.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import certify as cert
from . import correction as corr
from . import lipschitz as lip
from . import lp
from .dataset import (
    GRAPH_TERMINALS,
    LP,
    POINTS,
    SCALAR,
    STRONG,
    WEAK,
    CertifyOutcome,
    Dataset,
    GroundTruth,
    Record,
    VerificationOracle,
    make_scalar_dataset,
    restrict,
)
from .solvers import euclidean_matrix, tsp_subset_values

CERTIFY_SCHEMES = (
    "sum", "max", "max-of-sums", "packing", "covering", "general-lp",
    "lipschitz-tsp", "lipschitz-steiner",
)
CORRECT_MODES = ("weak", "weak-general", "strong-sum", "strong-max")

FLOAT_GUARD = 1e-12


@dataclass(frozen=True)
class AdversaryModel:
    """Which records get planted invalid; ``params`` is a frozen k/v list."""

    kind: str
    params: tuple[tuple[str, object], ...] = ()

    def param(self, name: str, default=None):
        for key, value in self.params:
            if key == name:
                return value
        return default


def adversary(kind: str, **params) -> AdversaryModel:
    return AdversaryModel(kind=kind, params=tuple(sorted(params.items())))


def describe(model: AdversaryModel) -> str:
    if not model.params:
        return model.kind
    inner = ";".join(f"{k}={v}" for k, v in model.params)
    return f"{model.kind}({inner})"


def gen_adversary(
    model: AdversaryModel,
    base: Dataset | None,
    rng: np.random.Generator,
    base_truth: GroundTruth | None = None,
) -> tuple[Dataset, GroundTruth]:
    """Instantiate a dataset plus planted validity mask for one trial."""
    kind = model.kind
    if kind == "none":
        if base is None:
            raise ValueError("adversary 'none' needs a base instance")
        return base, base_truth if base_truth is not None else GroundTruth.all_valid(base.n)

    if kind == "uniform-invalid":
        frac = float(model.param("fraction", 0.0))
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"fraction must lie in [0,1], got {frac}")
        if base is None:
            raise ValueError("adversary 'uniform-invalid' needs a base instance")
        count = round(frac * base.n)
        bad = rng.choice(base.n, size=count, replace=False) if count else []
        return base, GroundTruth.from_invalid_ids(base.n, (base.ids[int(i)] for i in bad))

    if kind == "mass-concentrated":
        frac = float(model.param("fraction", 0.5))
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"fraction must lie in [0,1], got {frac}")
        if base is None or base.kind != SCALAR:
            raise ValueError("adversary 'mass-concentrated' needs a scalar base instance")
        total = math.fsum(base.values)
        order = sorted(range(base.n), key=lambda i: (-base.values[i], base.ids[i]))
        bad, acc = [], 0.0
        for i in order:
            if acc >= frac * total:
                break
            bad.append(base.ids[i])
            acc += float(base.values[i])
        return base, GroundTruth.from_invalid_ids(base.n, bad)

    if kind == "worst-subset":
        eps = model.param("eps")
        if eps is None:
            raise ValueError("adversary 'worst-subset' needs an eps parameter")
        if base is None or base.kind != SCALAR:
            raise ValueError("adversary 'worst-subset' needs a scalar base instance")
        if base.n > 12:
            raise ValueError(f"worst-subset enumeration capped at n=12, got {base.n}")
        return base, GroundTruth.from_invalid_ids(base.n, _worst_sum_subset(base, float(eps)))

    if kind == "max-of-sums-hard":
        c = int(model.param("c", 2))
        n = int(model.param("n", 16))
        variant = str(model.param("variant", "t0"))
        if c < 1 or n < c * c or n % (c * c) != 0:
            raise ValueError(f"need c >= 1 and c^2 | n, got c={c}, n={n}")
        if variant not in ("t0", "t1"):
            raise ValueError(f"variant must be 't0' or 't1', got {variant!r}")
        group_size = c * c
        n_groups = n // group_size
        width = len(str(n_groups - 1))
        groups = [f"g{g:0{width}d}" for g in range(n_groups) for _ in range(group_size)]
        dataset = make_scalar_dataset([1.0] * n, groups=groups)
        valid = {g * group_size for g in range(n_groups)}  # one record per group
        if variant == "t1":
            valid.update(range(group_size))  # plus all of the first group
        return dataset, GroundTruth(tuple(i in valid for i in range(n)))

    if kind == "tsp-outlier":
        mult = float(model.param("multiplier", 8.0))
        if base is None or base.kind != POINTS:
            raise ValueError("adversary 'tsp-outlier' needs a points base instance")
        pts = base.points
        diam = float(euclidean_matrix(pts).max())
        far = pts.max(axis=0).copy()
        far[0] += mult * max(diam, 1.0)
        records = base.records + (Record(id=base.n, payload=tuple(float(x) for x in far)),)
        dataset = Dataset(kind=POINTS, records=records)
        return dataset, GroundTruth.from_invalid_ids(dataset.n, [base.n])

    raise ValueError(f"unknown adversary kind {kind!r}")


def _worst_sum_subset(base: Dataset, eps: float) -> tuple[int, ...]:
    """Violating subset the sum plan is most likely to miss: least planned mass."""
    values = base.values
    total = math.fsum(values)
    best_mask, best_mass = 0, math.inf
    for mask in range(1, 1 << base.n):
        mass = sum(float(values[i]) for i in range(base.n) if (mask >> i) & 1)
        rest = total - mass
        from .instopt import is_violating

        if is_violating(total, rest, eps) and mass < best_mass:
            best_mask, best_mass = mask, mass
    return tuple(base.ids[i] for i in range(base.n) if (best_mask >> i) & 1)


# ---------------------------------------------------------------------------
# Objectives and scoring


def _group_max(dataset: Dataset) -> float:
    sums = cert.group_sums(dataset)
    return max(sums.values()) if sums else 0.0


def objective_value(scheme: str, dataset: Dataset, keep_ids=None):
    """Exact objective over a record subset; used for both f(all) and f(valid)."""
    sub = dataset if keep_ids is None else restrict(dataset, set(dataset.ids) - set(keep_ids))
    if scheme in ("sum", "weak", "weak-general", "strong-sum"):
        return math.fsum(sub.values)
    if scheme in ("max", "strong-max"):
        return float(sub.values.max()) if sub.n else 0.0
    if scheme == "max-of-sums":
        return _group_max(sub)
    if scheme == "packing":
        return lp.solve_packing(lp.instance_from_dataset(_as_sense(sub, "packing"))).value
    if scheme == "covering":
        return lp.solve_covering(lp.instance_from_dataset(_as_sense(sub, "covering"))).value
    if scheme == "general-lp":
        inst = lp.instance_from_dataset(_as_sense(sub, "general"))
        return lp.solve_general(inst.covering_view()).value
    if scheme == "lipschitz-tsp":
        return closed_tour_value(sub.points)
    if scheme == "lipschitz-steiner":
        from .solvers import steiner_solve

        return steiner_solve(sub.graph, [rec.payload for rec in sub.records])[1]
    raise ValueError(f"unknown scheme {scheme!r}")


def _as_sense(dataset: Dataset, sense: str) -> Dataset:
    if dataset.lp_sense == sense:
        return dataset
    return Dataset(
        kind=dataset.kind, records=dataset.records, lp_b=dataset.lp_b,
        lp_sense=sense, lp_form=dataset.lp_form,
    )


def closed_tour_value(points) -> float:
    """Total tour objective: 0 for up to one point, out-and-back for two,
    exact optimal tour otherwise."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= 1:
        return 0.0
    if n == 2:
        return 2.0 * float(np.linalg.norm(pts[0] - pts[1]))
    from .solvers import tsp_solve

    return tsp_solve(pts)[1]


def in_band(value, truth_value, eps: float, zero_as_one: bool = False) -> tuple[bool, bool]:
    """(in range, flagged-vacuous) for the closed band [1-eps, 1/(1-eps)].

    Exact rational comparison when both values are rationals; otherwise float
    with a small guard so boundary ratios stay inside.
    """
    exact = isinstance(value, Fraction) and isinstance(truth_value, Fraction)
    if truth_value == 0 or value == 0:
        if zero_as_one:
            return True, True
        if value == 0 and truth_value == 0:
            return True, True
        return False, True
    if exact:
        lo = Fraction(1) - Fraction(eps)
        return lo * truth_value <= value <= truth_value / lo, False
    v, t = float(value), float(truth_value)
    guard = FLOAT_GUARD * max(1.0, abs(v), abs(t))
    return (1.0 - eps) * t - guard <= v <= t / (1.0 - eps) + guard, False


# ---------------------------------------------------------------------------
# Experiment runner


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str
    adversary: AdversaryModel
    epsilon: float
    delta: float
    trials: int
    master_seed: int
    base: Dataset | None = None
    base_truth: GroundTruth | None = None
    out_path: str | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.scheme not in CERTIFY_SCHEMES + CORRECT_MODES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class TrialStats:
    scheme: str
    adversary: str
    epsilon: float
    delta: float
    trials: int
    seed: int
    failures: int = 0
    correction_failures: int = 0
    vacuous: int = 0
    mean_verifications: float = 0.0
    max_verifications: int = 0
    mean_invalid_found: float = 0.0
    mean_rounds: float = 0.0
    wall_time: float = 0.0

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials


def trial_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-trial generator; the child seed is SeedSequence([master_seed, index]),
    so alternate implementations can reproduce runs."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


def _needs_kind(scheme: str) -> str:
    if scheme in ("sum", "max", "max-of-sums", "weak", "weak-general", "strong-sum", "strong-max"):
        return SCALAR
    if scheme in ("packing", "covering", "general-lp"):
        return LP
    if scheme == "lipschitz-tsp":
        return POINTS
    return GRAPH_TERMINALS


def _check_compat(config: ExperimentConfig) -> None:
    if config.adversary.kind in ("none", "uniform-invalid", "mass-concentrated", "worst-subset",
                                 "tsp-outlier") and config.base is None:
        raise ValueError(f"adversary {config.adversary.kind!r} needs a base instance")
    probe_rng = trial_rng(config.master_seed, 0)
    dataset, _ = gen_adversary(config.adversary, config.base, probe_rng, config.base_truth)
    want = _needs_kind(config.scheme)
    if dataset.kind != want:
        raise ValueError(
            f"scheme {config.scheme!r} needs a {want} dataset, adversary produces {dataset.kind!r}"
        )
    if config.scheme == "max-of-sums" and any(rec.group is None for rec in dataset.records):
        raise ValueError("max-of-sums needs group labels on every record")


def _run_certify_scheme(scheme, dataset, oracle, eps, delta, rng) -> CertifyOutcome:
    if scheme == "sum":
        return cert.certify_sum(dataset, oracle, eps, delta, rng)
    if scheme == "max":
        return cert.certify_max(dataset, oracle)
    if scheme == "max-of-sums":
        return cert.certify_max_of_sums(dataset, oracle, eps, delta, rng)
    if scheme == "packing":
        return lp.certify_packing(lp.instance_from_dataset(_as_sense(dataset, "packing")), oracle, eps, delta, rng)
    if scheme == "covering":
        return lp.certify_covering(lp.instance_from_dataset(_as_sense(dataset, "covering")), oracle, eps, delta, rng)
    if scheme == "general-lp":
        return lp.certify_general(lp.instance_from_dataset(_as_sense(dataset, "general")), oracle)
    if scheme == "lipschitz-tsp":
        return lip.certify_lipschitz(dataset, lip.tsp_weights(dataset), oracle, eps, delta, rng)
    if scheme == "lipschitz-steiner":
        return lip.certify_lipschitz(dataset, lip.steiner_weights(dataset), oracle, eps, delta, rng)
    raise ValueError(f"unknown certify scheme {scheme!r}")


def _run_correct_scheme(scheme, dataset, oracle, eps, delta, rng) -> float:
    if scheme == "weak":
        grouped = dataset.n > 0 and all(rec.group is not None for rec in dataset.records)
        certifier = cert.certify_max_of_sums if grouped else cert.certify_sum
        return corr.weak_correct_monotone(certifier, dataset, oracle, eps, delta, rng)
    if scheme == "weak-general":
        return corr.weak_correct_general(
            cert.certify_sum, dataset, oracle, eps, delta, rng, value_fn=cert.sum_value
        )
    if scheme == "strong-sum":
        return corr.strong_correct_sum(dataset, oracle, eps, delta, rng)
    if scheme == "strong-max":
        return corr.strong_correct_max(dataset, oracle, rng)
    raise ValueError(f"unknown correction mode {scheme!r}")


def run_trials(config: ExperimentConfig) -> TrialStats:
    """Run the configured experiment; deterministic given the config."""
    _check_compat(config)
    scheme = config.scheme
    is_correct = scheme in CORRECT_MODES
    mode = STRONG if scheme.startswith("strong") else WEAK
    zero_as_one = scheme in ("packing", "covering", "general-lp")
    grouped_weak_scheme = None

    stats = TrialStats(
        scheme=scheme,
        adversary=describe(config.adversary),
        epsilon=config.epsilon,
        delta=config.delta,
        trials=config.trials,
        seed=config.master_seed,
    )
    charged: list[int] = []
    invalid_found: list[int] = []
    rounds: list[int] = []
    start = time.perf_counter()
    for i in range(config.trials):
        rng = trial_rng(config.master_seed, i)
        dataset, truth = gen_adversary(config.adversary, config.base, rng, config.base_truth)
        oracle = VerificationOracle(truth, mode=mode)
        obj_scheme = scheme
        if scheme == "weak" and dataset.n and all(r.group is not None for r in dataset.records):
            obj_scheme = "max-of-sums"
        truth_value = objective_value(obj_scheme, dataset, keep_ids=truth.valid_ids())
        failed = False
        if is_correct:
            try:
                value = _run_correct_scheme(scheme, dataset, oracle, config.epsilon, config.delta, rng)
                ok, flagged = in_band(value, truth_value, config.epsilon, zero_as_one)
                failed = not ok
                stats.vacuous += int(flagged)
            except corr.CorrectionFailure:
                stats.correction_failures += 1
                failed = True
        else:
            outcome = _run_certify_scheme(scheme, dataset, oracle, config.epsilon, config.delta, rng)
            if outcome.is_invalid_found:
                for rid in outcome.invalid_ids:
                    if truth.is_valid(rid):
                        raise RuntimeError(f"scheme reported valid record {rid} as invalid")
            else:
                full_value = objective_value(obj_scheme, dataset)
                ok, flagged = in_band(full_value, truth_value, config.epsilon, zero_as_one)
                failed = not ok
                stats.vacuous += int(flagged)
        stats.failures += int(failed)
        charged.append(oracle.ledger.verifications_charged)
        invalid_found.append(oracle.ledger.invalid_found)
        rounds.append(oracle.ledger.rounds)
    stats.wall_time = time.perf_counter() - start
    stats.mean_verifications = float(np.mean(charged))
    stats.max_verifications = int(np.max(charged))
    stats.mean_invalid_found = float(np.mean(invalid_found))
    stats.mean_rounds = float(np.mean(rounds))
    if config.out_path:
        emit_report(stats, config.out_path)
    return stats


# ---------------------------------------------------------------------------
# CSV report

REPORT_HEADER = (
    "scheme,adversary,epsilon,delta,trials,failure_rate,"
    "mean_verifications,max_verifications,mean_invalid_found,seed"
)


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def report_row(stats: TrialStats) -> str:
    return ",".join([
        stats.scheme,
        stats.adversary,
        _fmt(float(stats.epsilon)),
        _fmt(float(stats.delta)),
        _fmt(stats.trials),
        _fmt(stats.failure_rate),
        _fmt(stats.mean_verifications),
        _fmt(stats.max_verifications),
        _fmt(stats.mean_invalid_found),
        _fmt(stats.seed),
    ])


def emit_report(stats: TrialStats, path) -> None:
    """Append one CSV row, creating the header on first write.

    An existing file with a different header is left untouched and reported.
    """
    row = report_row(stats)
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path) as fh:
            first = fh.readline().rstrip("\n")
        if first != REPORT_HEADER:
            raise ValueError(f"{path}: existing header does not match; refusing to append")
        with open(path, "a") as fh:
            fh.write(row + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(REPORT_HEADER + "\n")
            fh.write(row + "\n")
