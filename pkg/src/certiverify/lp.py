"""Exact rational LP solving and the packing / covering / general-LP certifiers.

The solver is a two-phase simplex over ``fractions.Fraction`` with Bland's
lowest-index pivoting: the duality and tight-set statements the certifiers rely
on are equality claims, so floating point is not an option. Sizes are capped at
desk scale (n + m <= 60).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .certify import _check_eps_delta, sample_count
from .dataset import LP, CertifyOutcome, Dataset, VerificationOracle

SIZE_CAP = 60

F0 = Fraction(0)
F1 = Fraction(1)


class InfeasibleLPError(ValueError):
    """The LP has no feasible point."""


class UnboundedLPError(ValueError):
    """The LP objective is unbounded."""


# ---------------------------------------------------------------------------
# Core simplex: maximize c.x subject to A x <= b, x >= 0, exact arithmetic.


@dataclass(frozen=True)
class SimplexResult:
    x: tuple[Fraction, ...]
    duals: tuple[Fraction, ...]
    value: Fraction
    nonbasic_slack_rows: tuple[int, ...]


def simplex_max(
    A: Sequence[Sequence[Fraction]],
    b: Sequence[Fraction],
    c: Sequence[Fraction],
) -> SimplexResult:
    """Solve max{c.x : A x <= b, x >= 0} exactly; Bland's rule, two phases."""
    m = len(A)
    n = len(c)
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    negated: list[bool] = []
    for i in range(m):
        row = [Fraction(v) for v in A[i]] + [F0] * m
        row[n + i] = F1
        r = Fraction(b[i])
        if r < 0:
            row = [-v for v in row]
            r = -r
            negated.append(True)
        else:
            negated.append(False)
        rows.append(row)
        rhs.append(r)
    ncols = n + m
    row_index = list(range(m))  # original constraint index per tableau row

    art_of_row: dict[int, int] = {}
    next_col = ncols
    for i in range(m):
        if negated[i]:
            art_of_row[i] = next_col
            next_col += 1
    n_art = next_col - ncols
    if n_art:
        for i in range(m):
            ext = [F0] * n_art
            if i in art_of_row:
                ext[art_of_row[i] - ncols] = F1
            rows[i] = rows[i] + ext

        # phase 1: maximize -(sum of artificials)
        width = next_col
        rc = [F0] * width
        val = F0
        for i in range(m):
            if i in art_of_row:
                ri = rows[i]
                for j in range(width):
                    rc[j] += ri[j]
                val -= rhs[i]
        for col in art_of_row.values():
            rc[col] = F0
        basis = [art_of_row.get(i, n + i) for i in range(m)]
        val = _pivot_until_optimal(rows, rhs, rc, basis, val, width, allow_unbounded=False)
        if val != 0:
            raise InfeasibleLPError("phase-1 optimum is positive")

        # drive leftover artificials out of the basis; drop redundant rows
        keep: list[int] = []
        for i in range(len(rows)):
            if basis[i] >= ncols:
                piv = next((j for j in range(ncols) if rows[i][j] != 0), None)
                if piv is None:
                    continue  # constraint implied by the others
                _apply_pivot(rows, rhs, None, basis, i, piv)
            keep.append(i)
        rows = [rows[i][:ncols] for i in keep]
        rhs = [rhs[i] for i in keep]
        basis = [basis[i] for i in keep]
        row_index = [row_index[i] for i in keep]
    else:
        basis = [n + i for i in range(m)]

    # phase 2
    cost = [Fraction(v) for v in c] + [F0] * m
    rc = list(cost)
    val = F0
    for i, bcol in enumerate(basis):
        coef = cost[bcol]
        if coef:
            ri = rows[i]
            for j in range(ncols):
                rc[j] -= coef * ri[j]
            val += coef * rhs[i]
    val = _pivot_until_optimal(rows, rhs, rc, basis, val, ncols, allow_unbounded=True)

    x = [F0] * n
    for i, bcol in enumerate(basis):
        if bcol < n:
            x[bcol] = rhs[i]
    duals = [F0] * m
    for i in range(m):
        duals[i] = -rc[n + i]
    basic_cols = set(basis)
    nonbasic_slack = tuple(i for i in range(m) if (n + i) not in basic_cols)
    return SimplexResult(
        x=tuple(x),
        duals=tuple(duals),
        value=val,
        nonbasic_slack_rows=nonbasic_slack,
    )


def _apply_pivot(rows, rhs, rc, basis, r, j) -> Fraction:
    """Pivot on (r, j); returns the objective delta when rc is given."""
    piv_row = rows[r]
    pv = piv_row[j]
    inv = 1 / pv
    rows[r] = piv_row = [v * inv for v in piv_row]
    rhs[r] = rhs[r] * inv
    width = len(piv_row)
    for i in range(len(rows)):
        if i == r:
            continue
        coef = rows[i][j]
        if coef:
            ri = rows[i]
            rows[i] = [ri[k] - coef * piv_row[k] for k in range(width)]
            rhs[i] = rhs[i] - coef * rhs[r]
    delta = F0
    if rc is not None:
        coef = rc[j]
        if coef:
            for k in range(width):
                rc[k] -= coef * piv_row[k]
            delta = coef * rhs[r]
    basis[r] = j
    return delta


def _pivot_until_optimal(rows, rhs, rc, basis, val, width, allow_unbounded):
    while True:
        enter = next((j for j in range(width) if rc[j] > 0), None)
        if enter is None:
            return val
        leave = None
        best = None
        for i in range(len(rows)):
            coef = rows[i][enter]
            if coef > 0:
                ratio = rhs[i] / coef
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best = ratio
                    leave = i
        if leave is None:
            if allow_unbounded:
                raise UnboundedLPError("objective increases without bound")
            raise RuntimeError("phase-1 objective unbounded; malformed tableau")
        val += _apply_pivot(rows, rhs, rc, basis, leave, enter)


# ---------------------------------------------------------------------------
# Instances


def _frac_tuple(xs) -> tuple[Fraction, ...]:
    return tuple(Fraction(x) for x in xs)


def _validate_shape(ids, c, rows, b) -> None:
    if len(b) < 1:
        raise ValueError("at least one shared constraint is required (m >= 1)")
    if not (len(ids) == len(c) == len(rows)):
        raise ValueError("ids, c, and rows must align")
    m = len(b)
    for row in rows:
        if len(row) != m:
            raise ValueError(f"row width {len(row)} != m = {m}")


def _validate_nonneg(name, c, rows, b) -> None:
    if any(x < 0 for x in c) or any(x < 0 for x in b) or any(x < 0 for row in rows for x in row):
        raise ValueError(f"{name} parameters must be nonnegative")


@dataclass(frozen=True)
class PackingInstance:
    """max sum_i c_i y_i  s.t.  sum_i a_ij y_i <= b_j, y >= 0; record i owns (c_i, a_i*)."""

    ids: tuple[int, ...]
    c: tuple[Fraction, ...]
    rows: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        _validate_shape(self.ids, self.c, self.rows, self.b)
        _validate_nonneg("packing", self.c, self.rows, self.b)

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class CoveringInstance:
    """min sum_j b_j x_j  s.t.  sum_j a_ij x_j >= c_i, x >= 0; record i owns (c_i, a_i*)."""

    ids: tuple[int, ...]
    c: tuple[Fraction, ...]
    rows: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        _validate_shape(self.ids, self.c, self.rows, self.b)
        _validate_nonneg("covering", self.c, self.rows, self.b)

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def n(self) -> int:
        return len(self.ids)

    def dual_packing(self) -> PackingInstance:
        """The dual packing LP; shares the instance data verbatim."""
        return PackingInstance(ids=self.ids, c=self.c, rows=self.rows, b=self.b)


PACKING_FORM = "packing-form"
COVERING_FORM = "covering-form"


@dataclass(frozen=True)
class GeneralLPInstance:
    """Packing/covering-shaped LP with arbitrary-sign parameters."""

    ids: tuple[int, ...]
    c: tuple[Fraction, ...]
    rows: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]
    form: str = COVERING_FORM

    def __post_init__(self) -> None:
        _validate_shape(self.ids, self.c, self.rows, self.b)
        if self.form not in (PACKING_FORM, COVERING_FORM):
            raise ValueError(f"unknown form {self.form!r}")

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def n(self) -> int:
        return len(self.ids)

    def covering_view(self) -> "GeneralLPInstance":
        """The covering-form LP with the same data (its own dual when packing-form)."""
        if self.form == COVERING_FORM:
            return self
        return GeneralLPInstance(ids=self.ids, c=self.c, rows=self.rows, b=self.b, form=COVERING_FORM)


def instance_from_dataset(dataset: Dataset):
    if dataset.kind != LP:
        raise ValueError(f"expected an lp dataset, got {dataset.kind!r}")
    ids = dataset.ids
    c = tuple(rec.payload.c for rec in dataset.records)
    rows = tuple(rec.payload.a for rec in dataset.records)
    b = dataset.lp_b
    if dataset.lp_sense == "packing":
        return PackingInstance(ids=ids, c=c, rows=rows, b=b)
    if dataset.lp_sense == "covering":
        return CoveringInstance(ids=ids, c=c, rows=rows, b=b)
    if dataset.lp_sense == "general":
        return GeneralLPInstance(ids=ids, c=c, rows=rows, b=b, form=dataset.lp_form or COVERING_FORM)
    raise ValueError(f"unknown lp sense {dataset.lp_sense!r}")


# ---------------------------------------------------------------------------
# Solving


@dataclass(frozen=True)
class LPSolution:
    """Optimal basic solution with exact rationals.

    ``tight`` lists every constraint satisfied with equality at the vertex;
    ``determining`` is one basis worth of them (at most as many as there are
    variables), chosen by Bland's lowest-index pivoting. Constraint indices are
    resource indices j for packing solves and record ids for covering solves.
    """

    primal: tuple[Fraction, ...]
    dual: tuple[Fraction, ...]
    value: Fraction
    tight: tuple[int, ...]
    determining: tuple[int, ...]


def _check_cap(n: int, m: int) -> None:
    if n + m > SIZE_CAP:
        raise ValueError(f"instance size n+m = {n + m} exceeds the exact-arithmetic cap {SIZE_CAP}")


def solve_packing(inst: PackingInstance) -> LPSolution:
    _check_cap(inst.n, inst.m)
    A = [[inst.rows[i][j] for i in range(inst.n)] for j in range(inst.m)]
    res = simplex_max(A, list(inst.b), list(inst.c))
    tight = tuple(
        j for j in range(inst.m)
        if sum(inst.rows[i][j] * res.x[i] for i in range(inst.n)) == inst.b[j]
    )
    return LPSolution(
        primal=res.x,
        dual=res.duals,
        value=res.value,
        tight=tight,
        determining=res.nonbasic_slack_rows,
    )


def _solve_covering_shaped(ids, c, rows, b) -> LPSolution:
    """min b.x s.t. rows[i] . x >= c[i], x >= 0 (signs unrestricted)."""
    n, m = len(ids), len(b)
    _check_cap(n, m)
    A = [[-v for v in rows[i]] for i in range(n)]
    negb = [-v for v in c]
    negc = [-v for v in b]
    try:
        res = simplex_max(A, negb, negc)
    except UnboundedLPError:
        # min form: unbounded transform means the covering objective -> -inf
        raise UnboundedLPError("covering-form objective unbounded below") from None
    x = res.x
    value = -res.value
    tight = tuple(
        ids[i] for i in range(n)
        if sum(rows[i][j] * x[j] for j in range(m)) == c[i]
    )
    determining = tuple(ids[i] for i in res.nonbasic_slack_rows)
    return LPSolution(primal=x, dual=res.duals, value=value, tight=tight, determining=determining)


def solve_covering(inst: CoveringInstance) -> LPSolution:
    try:
        return _solve_covering_shaped(inst.ids, inst.c, inst.rows, inst.b)
    except InfeasibleLPError:
        raise InfeasibleLPError("covering instance is infeasible (some demand cannot be met)") from None


def solve_general(inst: GeneralLPInstance) -> LPSolution:
    if inst.form == COVERING_FORM:
        return _solve_covering_shaped(inst.ids, inst.c, inst.rows, inst.b)
    _check_cap(inst.n, inst.m)
    A = [[inst.rows[i][j] for i in range(inst.n)] for j in range(inst.m)]
    res = simplex_max(A, list(inst.b), list(inst.c))
    tight = tuple(
        j for j in range(inst.m)
        if sum(inst.rows[i][j] * res.x[i] for i in range(inst.n)) == inst.b[j]
    )
    return LPSolution(
        primal=res.x,
        dual=res.duals,
        value=res.value,
        tight=tight,
        determining=res.nonbasic_slack_rows,
    )


def solve_lp(instance) -> LPSolution:
    """Dispatch on instance type; exact optimal basic solution or a distinct
    infeasible/unbounded error."""
    if isinstance(instance, PackingInstance):
        return solve_packing(instance)
    if isinstance(instance, CoveringInstance):
        return solve_covering(instance)
    if isinstance(instance, GeneralLPInstance):
        return solve_general(instance)
    raise TypeError(f"not an LP instance: {instance!r}")


# ---------------------------------------------------------------------------
# Certifiers


def _sample_ids_proportional(ids, weights, k, rng) -> list[int]:
    w = np.array([float(x) for x in weights])
    cum = np.cumsum(w)
    pos = np.searchsorted(cum, rng.random(k) * cum[-1], side="right")
    pos = np.minimum(pos, len(ids) - 1)
    return [ids[int(p)] for p in pos]


def certify_packing(
    inst: PackingInstance,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Sample records proportionally to their optimal contribution y*_i c_i."""
    _check_eps_delta(eps, delta)
    sol = solve_packing(inst)
    if sol.value == 0:
        return CertifyOutcome.certified(sol.value, verifications_used=0)
    weights = [sol.primal[i] * inst.c[i] for i in range(inst.n)]
    sampled = _sample_ids_proportional(inst.ids, weights, sample_count(eps, delta), rng)
    seen: set[int] = set()
    used = 0
    for rid in sampled:
        if rid in seen:
            continue
        seen.add(rid)
        used += 1
        if not oracle.verify(rid):
            return CertifyOutcome.found_invalid([rid], verifications_used=used)
    return CertifyOutcome.certified(sol.value, verifications_used=used)


def certify_covering(
    inst: CoveringInstance,
    oracle: VerificationOracle,
    eps: float,
    delta: float,
    rng: np.random.Generator,
) -> CertifyOutcome:
    """Certify a covering optimum through its dual packing LP.

    The sampling distribution is the (lowest-index basic) optimal solution of
    the dual packing LP, weighted by the record objectives; the certified value
    is the covering optimum, which the dual matches exactly.
    """
    _check_eps_delta(eps, delta)
    csol = solve_covering(inst)  # raises a distinct error when infeasible
    psol = solve_packing(inst.dual_packing())
    if psol.value != csol.value:
        raise AssertionError("strong duality violated; solver bug")
    if csol.value == 0:
        return CertifyOutcome.certified(csol.value, verifications_used=0)
    weights = [psol.primal[i] * inst.c[i] for i in range(inst.n)]
    sampled = _sample_ids_proportional(inst.ids, weights, sample_count(eps, delta), rng)
    seen: set[int] = set()
    used = 0
    for rid in sampled:
        if rid in seen:
            continue
        seen.add(rid)
        used += 1
        if not oracle.verify(rid):
            return CertifyOutcome.found_invalid([rid], verifications_used=used)
    return CertifyOutcome.certified(csol.value, verifications_used=used)


def certify_general(inst: GeneralLPInstance, oracle: VerificationOracle) -> CertifyOutcome:
    """Deterministically verify the <= m records whose constraints pin the optimum.

    Packing-form instances are certified through their covering-form dual,
    where records index constraints; the optimal values agree exactly.
    """
    cover = inst.covering_view()
    sol = solve_general(cover)
    to_verify = sorted(sol.determining)
    bad: list[int] = []
    used = 0
    for rid in to_verify:
        used += 1
        if not oracle.verify(rid):
            bad.append(rid)
    if bad:
        return CertifyOutcome.found_invalid(bad, verifications_used=used)
    if inst.form == PACKING_FORM:
        primal_value = solve_general(inst).value
        if primal_value != sol.value:
            raise AssertionError("strong duality violated; solver bug")
    return CertifyOutcome.certified(sol.value, verifications_used=used)
