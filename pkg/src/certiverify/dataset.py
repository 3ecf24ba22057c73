"""Record datasets, the hidden validity mask, and the budgeted verification oracle.

A dataset is an immutable, ordered collection of records. Each record carries a
payload whose shape depends on the dataset kind (scalar value, LP row, point in
d-dimensional space, or graph vertex). Which records are valid is recorded in a
``GroundTruth`` mask that schemes may only reach through a
``VerificationOracle``; the oracle charges every lookup to a budget ledger.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

SCALAR = "scalar"
LP = "lp"
POINTS = "points"
GRAPH_TERMINALS = "graph-terminals"
KINDS = (SCALAR, LP, POINTS, GRAPH_TERMINALS)

WEAK = "weak"
STRONG = "strong"

CERTIFIED = "certified"
INVALID_FOUND = "invalid-found"
FAILED = "failed"


class DatasetFormatError(ValueError):
    """A dataset file (or in-memory construction) violates the format contract."""


@dataclass(frozen=True)
class LPRow:
    """One record's share of an LP: objective coefficient and constraint row."""

    c: Fraction
    a: tuple[Fraction, ...]


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph shared by all graph-terminal records."""

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        for u, v, w in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise DatasetFormatError(f"edge ({u},{v}) outside vertex range [0,{self.n})")
            if w < 0:
                raise DatasetFormatError(f"edge ({u},{v}) has negative weight {w}")

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """All-pairs shortest path distances (Floyd-Warshall; inf when disconnected)."""
        d = np.full((self.n, self.n), np.inf)
        np.fill_diagonal(d, 0.0)
        for u, v, w in self.edges:
            if w < d[u, v]:
                d[u, v] = d[v, u] = w
        for k in range(self.n):
            d = np.minimum(d, d[:, k, None] + d[None, k, :])
        return d


@dataclass(frozen=True)
class Record:
    """One dataset entry; ``id`` is stable across restriction."""

    id: int
    payload: object
    group: str | None = None


@dataclass(frozen=True)
class Dataset:
    kind: str
    records: tuple[Record, ...]
    lp_b: tuple[Fraction, ...] | None = None
    lp_sense: str | None = None
    lp_form: str | None = None
    graph: Graph | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DatasetFormatError(f"unknown dataset kind {self.kind!r}")
        seen: set[int] = set()
        for rec in self.records:
            if rec.id in seen:
                raise DatasetFormatError(f"duplicate record id {rec.id}")
            seen.add(rec.id)
        if self.kind == SCALAR:
            for rec in self.records:
                v = rec.payload
                if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                    raise DatasetFormatError(f"record {rec.id}: scalar payload must be finite and >= 0, got {v!r}")
        elif self.kind == POINTS:
            dims = {len(rec.payload) for rec in self.records}
            if len(dims) > 1:
                raise DatasetFormatError(f"points have mixed dimensions {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.records)

    @cached_property
    def ids(self) -> tuple[int, ...]:
        return tuple(rec.id for rec in self.records)

    @cached_property
    def id_set(self) -> frozenset[int]:
        return frozenset(self.ids)

    @cached_property
    def values(self) -> np.ndarray:
        """Scalar payloads as a float array, aligned with ``ids``."""
        if self.kind != SCALAR:
            raise ValueError(f"values undefined for kind {self.kind!r}")
        return np.array([rec.payload for rec in self.records], dtype=float)

    @cached_property
    def points(self) -> np.ndarray:
        if self.kind != POINTS:
            raise ValueError(f"points undefined for kind {self.kind!r}")
        return np.array([rec.payload for rec in self.records], dtype=float)

    def record_by_id(self, record_id: int) -> Record:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise ValueError(f"unknown record id {record_id}") from None

    @cached_property
    def _by_id(self) -> dict[int, Record]:
        return {rec.id: rec for rec in self.records}

    @cached_property
    def groups(self) -> dict[str, tuple[int, ...]]:
        """Partition of record ids by group label; raises if any label is missing."""
        out: dict[str, list[int]] = {}
        for rec in self.records:
            if rec.group is None:
                raise ValueError(f"record {rec.id} has no group label")
            out.setdefault(rec.group, []).append(rec.id)
        return {label: tuple(ids) for label, ids in out.items()}


def restrict(dataset: Dataset, excluded_ids: Iterable[int]) -> Dataset:
    """Sub-dataset over the complement of ``excluded_ids``, original ids preserved."""
    excluded = frozenset(excluded_ids)
    if not excluded & dataset.id_set:
        return dataset
    kept = tuple(rec for rec in dataset.records if rec.id not in excluded)
    return Dataset(
        kind=dataset.kind,
        records=kept,
        lp_b=dataset.lp_b,
        lp_sense=dataset.lp_sense,
        lp_form=dataset.lp_form,
        graph=dataset.graph,
    )


@dataclass(frozen=True)
class GroundTruth:
    """Per-id validity mask. Schemes must go through the oracle; the harness reads it freely."""

    valid_mask: tuple[bool, ...]

    @classmethod
    def all_valid(cls, n: int) -> "GroundTruth":
        return cls(tuple([True] * n))

    @classmethod
    def from_invalid_ids(cls, n: int, invalid_ids: Iterable[int]) -> "GroundTruth":
        bad = set(invalid_ids)
        return cls(tuple(i not in bad for i in range(n)))

    @cached_property
    def mask_array(self) -> np.ndarray:
        return np.array(self.valid_mask, dtype=bool)

    def is_valid(self, record_id: int) -> bool:
        return self.valid_mask[record_id]

    def invalid_ids(self) -> tuple[int, ...]:
        return tuple(i for i, ok in enumerate(self.valid_mask) if not ok)

    def valid_ids(self) -> tuple[int, ...]:
        return tuple(i for i, ok in enumerate(self.valid_mask) if ok)


@dataclass
class BudgetLedger:
    """Verification accounting. Weak mode charges every call; strong mode charges
    only calls that return valid (invalid lookups are free)."""

    mode: str
    verifications_charged: int = 0
    invalid_found: int = 0
    rounds: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (WEAK, STRONG):
            raise ValueError(f"unknown budget mode {self.mode!r}")


class VerificationOracle:
    """Sole gateway to the validity mask.

    Re-verifying an id charges again on every call; schemes memoize locally when
    they want to avoid double charges.
    """

    def __init__(self, truth: GroundTruth, mode: str = WEAK):
        self.truth = truth
        self.ledger = BudgetLedger(mode=mode)
        self.queried: set[int] = set()
        self._mask = truth.valid_mask

    @property
    def mode(self) -> str:
        return self.ledger.mode

    def verify(self, record_id: int) -> bool:
        if not 0 <= record_id < len(self._mask):
            raise ValueError(f"unknown record id {record_id}")
        valid = self._mask[record_id]
        self.queried.add(record_id)
        if valid:
            self.ledger.verifications_charged += 1
        else:
            self.ledger.invalid_found += 1
            if self.ledger.mode == WEAK:
                self.ledger.verifications_charged += 1
        return valid

    def verify_batch(self, record_ids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Vectorized ``verify``; same per-call charging semantics."""
        ids = np.asarray(record_ids, dtype=int)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self._mask)):
            raise ValueError("unknown record id in batch")
        valid = self.truth.mask_array[ids]
        n_valid = int(valid.sum())
        n_invalid = int(ids.size - n_valid)
        self.queried.update(int(i) for i in np.unique(ids))
        self.ledger.invalid_found += n_invalid
        if self.ledger.mode == WEAK:
            self.ledger.verifications_charged += int(ids.size)
        else:
            self.ledger.verifications_charged += n_valid
        return valid

    def note_round(self) -> None:
        self.ledger.rounds += 1


@dataclass(frozen=True)
class CertifyOutcome:
    """Result of one scheme run.

    Schemes only emit ``certified`` or ``invalid-found``; the harness relabels a
    certified run as ``failed`` when the true ratio falls outside the tolerance
    band.
    """

    verdict: str
    value: float | Fraction | None = None
    invalid_ids: tuple[int, ...] = ()
    verifications_used: int = 0

    @classmethod
    def certified(cls, value, verifications_used: int = 0) -> "CertifyOutcome":
        return cls(CERTIFIED, value=value, verifications_used=verifications_used)

    @classmethod
    def found_invalid(cls, ids: Iterable[int], verifications_used: int) -> "CertifyOutcome":
        ids = tuple(ids)
        if not ids:
            raise ValueError("invalid-found outcome needs at least one id")
        return cls(INVALID_FOUND, invalid_ids=ids, verifications_used=verifications_used)

    @property
    def is_certified(self) -> bool:
        return self.verdict == CERTIFIED

    @property
    def is_invalid_found(self) -> bool:
        return self.verdict == INVALID_FOUND


# ---------------------------------------------------------------------------
# Convenience constructors


def make_scalar_dataset(values: Sequence[float], groups: Sequence[str] | None = None) -> Dataset:
    if groups is not None and len(groups) != len(values):
        raise ValueError("groups must align with values")
    records = tuple(
        Record(id=i, payload=float(v), group=None if groups is None else groups[i])
        for i, v in enumerate(values)
    )
    return Dataset(kind=SCALAR, records=records)


def make_points_dataset(points: Sequence[Sequence[float]]) -> Dataset:
    records = tuple(Record(id=i, payload=tuple(float(x) for x in p)) for i, p in enumerate(points))
    return Dataset(kind=POINTS, records=records)


def make_terminals_dataset(graph: Graph, vertices: Sequence[int]) -> Dataset:
    for v in vertices:
        if not 0 <= v < graph.n:
            raise DatasetFormatError(f"terminal vertex {v} outside graph")
    records = tuple(Record(id=i, payload=int(v)) for i, v in enumerate(vertices))
    return Dataset(kind=GRAPH_TERMINALS, records=records, graph=graph)


def make_lp_dataset(
    rows: Sequence[tuple[Fraction | int | str, Sequence[Fraction | int | str]]],
    b: Sequence[Fraction | int | str],
    sense: str,
    form: str | None = None,
) -> Dataset:
    records = tuple(
        Record(id=i, payload=LPRow(c=_as_fraction(c), a=tuple(_as_fraction(x) for x in a)))
        for i, (c, a) in enumerate(rows)
    )
    return Dataset(
        kind=LP,
        records=records,
        lp_b=tuple(_as_fraction(x) for x in b),
        lp_sense=sense,
        lp_form=form,
    )


# ---------------------------------------------------------------------------
# File format


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    raise DatasetFormatError(f"cannot interpret {x!r} as a rational")


def _ctx(path, i, rec) -> str:
    rid = rec.get("id", "?") if isinstance(rec, dict) else "?"
    return f"{path}: record #{i} (id={rid})"


def load_dataset(path) -> tuple[Dataset, GroundTruth]:
    """Parse a dataset file; returns the dataset and its embedded validity mask.

    Decimal literals in LP payloads are parsed directly to exact rationals, so
    they round-trip losslessly.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh, parse_float=Fraction)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}:{e.lineno}: malformed JSON: {e.msg}") from None
    except OSError as e:
        raise DatasetFormatError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise DatasetFormatError(f"{path}: top level must be an object")

    kind = doc.get("kind")
    if kind not in KINDS:
        raise DatasetFormatError(f"{path}: unknown kind {kind!r}")
    raw_records = doc.get("records")
    if not isinstance(raw_records, list):
        raise DatasetFormatError(f"{path}: missing or non-list 'records'")

    group_map = {}
    for key, label in (doc.get("groups") or {}).items():
        try:
            group_map[int(key)] = str(label)
        except ValueError:
            raise DatasetFormatError(f"{path}: group key {key!r} is not an id") from None

    records: list[Record] = []
    mask: list[tuple[int, bool]] = []
    for i, rec in enumerate(raw_records):
        if not isinstance(rec, dict) or "id" not in rec or "valid" not in rec:
            raise DatasetFormatError(f"{_ctx(path, i, rec)}: needs 'id' and 'valid' fields")
        rid = rec["id"]
        if not isinstance(rid, int):
            raise DatasetFormatError(f"{_ctx(path, i, rec)}: id must be an integer")
        try:
            payload = _parse_payload(kind, rec)
        except DatasetFormatError as e:
            raise DatasetFormatError(f"{_ctx(path, i, rec)}: {e}") from None
        group = rec.get("group", group_map.get(rid))
        records.append(Record(id=rid, payload=payload, group=group))
        mask.append((rid, bool(rec["valid"])))

    ids = sorted(r.id for r in records)
    if ids and ids != list(range(len(ids))):
        raise DatasetFormatError(f"{path}: record ids must be unique and contiguous from 0, got {ids}")
    records.sort(key=lambda r: r.id)

    lp_b = lp_sense = lp_form = None
    if kind == LP:
        lp = doc.get("lp")
        if not isinstance(lp, dict) or "b" not in lp or "sense" not in lp:
            raise DatasetFormatError(f"{path}: lp datasets need an 'lp' object with 'b' and 'sense'")
        lp_b = tuple(_as_fraction(x) for x in lp["b"])
        lp_sense = lp["sense"]
        if lp_sense not in ("packing", "covering", "general"):
            raise DatasetFormatError(f"{path}: unknown lp sense {lp_sense!r}")
        lp_form = lp.get("form")
        m = len(lp_b)
        for rec in records:
            if len(rec.payload.a) != m:
                raise DatasetFormatError(
                    f"{path}: record id={rec.id} row has {len(rec.payload.a)} entries, expected {m}"
                )

    graph = None
    if kind == GRAPH_TERMINALS:
        g = doc.get("graph")
        if not isinstance(g, dict) or "vertices" not in g or "edges" not in g:
            raise DatasetFormatError(f"{path}: graph-terminal datasets need a 'graph' object")
        graph = Graph(
            n=int(g["vertices"]),
            edges=tuple((int(u), int(v), float(w)) for u, v, w in g["edges"]),
        )
        for rec in records:
            if not 0 <= rec.payload < graph.n:
                raise DatasetFormatError(f"{path}: record id={rec.id} names vertex {rec.payload} outside graph")

    try:
        dataset = Dataset(
            kind=kind, records=tuple(records), lp_b=lp_b, lp_sense=lp_sense, lp_form=lp_form, graph=graph
        )
    except DatasetFormatError as e:
        raise DatasetFormatError(f"{path}: {e}") from None
    truth = GroundTruth(tuple(ok for _, ok in sorted(mask)))
    return dataset, truth


def _parse_payload(kind: str, rec: dict):
    if kind == SCALAR:
        if "value" not in rec:
            raise DatasetFormatError("scalar record needs a 'value' field")
        v = float(rec["value"])
        if not math.isfinite(v) or v < 0:
            raise DatasetFormatError(f"scalar value must be finite and >= 0, got {v}")
        return v
    if kind == LP:
        if "c" not in rec or "a" not in rec:
            raise DatasetFormatError("lp record needs 'c' and 'a' fields")
        return LPRow(c=_lp_number(rec["c"]), a=tuple(_lp_number(x) for x in rec["a"]))
    if kind == POINTS:
        if "point" not in rec:
            raise DatasetFormatError("points record needs a 'point' field")
        return tuple(float(x) for x in rec["point"])
    if kind == GRAPH_TERMINALS:
        if "vertex" not in rec:
            raise DatasetFormatError("graph-terminal record needs a 'vertex' field")
        return int(rec["vertex"])
    raise DatasetFormatError(f"unknown kind {kind!r}")


def _lp_number(x) -> Fraction:
    # json numbers arrive as int or Fraction (parse_float); "p/q" strings also accepted
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, str):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError):
            raise DatasetFormatError(f"bad rational literal {x!r}") from None
    raise DatasetFormatError(f"bad LP number {x!r}")


def _fraction_out(x: Fraction):
    return int(x) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def dump_dataset(dataset: Dataset, truth: GroundTruth, path) -> None:
    """Write a dataset plus mask in the format ``load_dataset`` reads."""
    recs = []
    groups = {}
    for rec in dataset.records:
        entry: dict = {"id": rec.id, "valid": bool(truth.is_valid(rec.id))}
        if dataset.kind == SCALAR:
            entry["value"] = rec.payload
        elif dataset.kind == LP:
            entry["c"] = _fraction_out(rec.payload.c)
            entry["a"] = [_fraction_out(x) for x in rec.payload.a]
        elif dataset.kind == POINTS:
            entry["point"] = list(rec.payload)
        elif dataset.kind == GRAPH_TERMINALS:
            entry["vertex"] = rec.payload
        if rec.group is not None:
            groups[str(rec.id)] = rec.group
        recs.append(entry)
    doc: dict = {"kind": dataset.kind, "records": recs}
    if groups:
        doc["groups"] = groups
    if dataset.kind == LP:
        doc["lp"] = {"b": [_fraction_out(x) for x in dataset.lp_b], "sense": dataset.lp_sense}
        if dataset.lp_form:
            doc["lp"]["form"] = dataset.lp_form
    if dataset.kind == GRAPH_TERMINALS:
        doc["graph"] = {
            "vertices": dataset.graph.n,
            "edges": [[u, v, w] for u, v, w in dataset.graph.edges],
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
