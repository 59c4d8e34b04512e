"""Anatomization: l-diverse grouping, identifier/sensitive tables and their join."""

from __future__ import annotations

import csv
import heapq
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import AttributeSchema, DataError, Dataset, Kind, Role, format_value


class AnatomizationError(DataError):
    """No l-diverse group can be formed, or tables do not fit together."""


@dataclass(frozen=True)
class GroupPartition:
    groups: tuple[tuple[int, tuple[int, ...]], ...]
    suppressed: tuple[int, ...]
    l: int

    @property
    def size(self) -> int:
        return sum(len(members) for _, members in self.groups)

    def to_dict(self) -> dict[str, Any]:
        return {
            "l": self.l,
            "groups": [{"gid": gid, "rows": list(members)} for gid, members in self.groups],
            "suppressed": list(self.suppressed),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> GroupPartition:
        return cls(
            tuple((int(g["gid"]), tuple(int(r) for r in g["rows"])) for g in raw["groups"]),
            tuple(int(r) for r in raw["suppressed"]),
            int(raw["l"]),
        )


def build_groups(train: Dataset, l: int, seed: int | None = None, allow_empty: bool = False) -> GroupPartition:
    """Greedy bucketization into groups of exactly ``l`` distinct sensitive values.

    Rows are bucketed by sensitive value. Each step draws the front row of
    each of the ``l`` largest buckets (ties by sensitive value order); when
    fewer than ``l`` buckets are non-empty the leftovers are suppressed.
    Buckets start in row-id order and are shuffled once when ``seed`` is given.
    """
    if l < 2:
        raise ValueError(f"l must be >= 2, got {l}")
    sens = train.columns[train.sensitive.name]
    ids = train.row_ids
    rng = np.random.default_rng(seed) if seed is not None else None
    buckets: dict[Any, list[int]] = {}
    for value in sorted(set(sens)):
        members = np.sort(ids[sens == value])
        if rng is not None:
            members = rng.permutation(members)
        # reversed so pop() yields the front
        buckets[value] = [int(r) for r in members[::-1]]

    if len(buckets) < l and not allow_empty:
        raise AnatomizationError(
            f"sensitive attribute {train.sensitive.name!r} has {len(buckets)} distinct values, need >= {l}"
        )

    order = {v: i for i, v in enumerate(buckets)}
    heap = [(-len(rows), order[v], v) for v, rows in buckets.items() if rows]
    heapq.heapify(heap)
    groups = []
    while len(heap) >= l:
        drawn = [heapq.heappop(heap) for _ in range(l)]
        members = []
        for _, rank, value in drawn:
            members.append(buckets[value].pop())
            if buckets[value]:
                heapq.heappush(heap, (-len(buckets[value]), rank, value))
        groups.append((len(groups) + 1, tuple(members)))
    suppressed = tuple(sorted(r for rows in buckets.values() for r in rows))
    return GroupPartition(tuple(groups), suppressed, l)


@dataclass(frozen=True)
class DiversityReport:
    ok: bool
    l: int
    # gid -> (group size, count of the most frequent sensitive value)
    groups: Mapping[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def violations(self) -> list[int]:
        return [gid for gid, (size, top) in self.groups.items() if self.l * top > size]


def _diversity(per_group: Mapping[int, list[Any]], l: int) -> DiversityReport:
    report = {}
    for gid, values in per_group.items():
        top = max(Counter(values).values()) if values else 0
        report[gid] = (len(values), top)
    # freq/size <= 1/l  <=>  l*freq <= size, exact in integers
    ok = all(l * top <= size for size, top in report.values())
    return DiversityReport(ok, l, report)


def verify_l_diversity(partition: GroupPartition, train: Dataset) -> DiversityReport:
    sens = train.columns[train.sensitive.name]
    lookup = {int(r): i for i, r in enumerate(train.row_ids)}
    per_group = {}
    for gid, members in partition.groups:
        per_group[gid] = [sens[lookup[r]] for r in members if r in lookup]
    return _diversity(per_group, partition.l)


@dataclass(frozen=True, eq=False)
class IdentifierTable:
    """Rows of (class label, quasi-identifiers..., gid)."""

    class_attr: AttributeSchema
    quasi: tuple[AttributeSchema, ...]
    columns: Mapping[str, np.ndarray]
    gid: np.ndarray
    # source row ids; kept in memory for tracing, never written out
    row_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.gid)


@dataclass(frozen=True, eq=False)
class SensitiveTable:
    sensitive: AttributeSchema
    gid: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.gid)


def emit_tables(train: Dataset, partition: GroupPartition) -> tuple[IdentifierTable, SensitiveTable]:
    members = [r for _, group in partition.groups for r in group]
    pos = train.positions_of(members)
    gid = np.repeat(
        np.array([g for g, _ in partition.groups], dtype=np.int64),
        [len(group) for _, group in partition.groups],
    )
    quasi = train.quasi_identifiers
    klass = train.class_attr
    cols = {a.name: train.columns[a.name][pos] for a in (klass, *quasi)}
    it = IdentifierTable(klass, quasi, cols, gid, train.row_ids[pos])
    st = SensitiveTable(train.sensitive, gid.copy(), train.columns[train.sensitive.name][pos])
    return it, st


def verify_tables(it: IdentifierTable, st: SensitiveTable, l: int) -> DiversityReport:
    """l-diversity check from the published tables alone (no access to the source data)."""
    per_group: dict[int, list[Any]] = {int(g): [] for g in np.unique(it.gid)}
    for g, v in zip(st.gid, st.values):
        per_group.setdefault(int(g), []).append(v)
    dangling = set(np.unique(st.gid).tolist()) ^ set(np.unique(it.gid).tolist())
    report = _diversity(per_group, l)
    if dangling:
        return DiversityReport(False, l, report.groups)
    return report


@dataclass(frozen=True, eq=False)
class AnatomizedDataset:
    """The IT/ST join: one row per (IT row, ST row) pair sharing a gid."""

    data: Dataset
    l: int
    origin_gid: np.ndarray
    # source row id of the IT side of each joined row
    source_row_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.data)


def join_anatomized(it: IdentifierTable, st: SensitiveTable, l: int | None = None) -> AnatomizedDataset:
    """Inner join on gid, keeping quasi-identifiers, the sensitive value and the class label.

    Joined rows are ordered by gid, then IT order, then ST order, and get
    fresh sequential row ids.
    """
    it_gids = set(np.unique(it.gid).tolist())
    st_gids = set(np.unique(st.gid).tolist())
    if it_gids != st_gids:
        raise AnatomizationError(f"dangling gids: {sorted(it_gids ^ st_gids)[:10]}")

    it_order = np.argsort(it.gid, kind="stable")
    st_order = np.argsort(st.gid, kind="stable")
    uniq, st_counts = np.unique(st.gid, return_counts=True)
    st_start = np.concatenate([[0], np.cumsum(st_counts)[:-1]])
    slot = np.searchsorted(uniq, it.gid[it_order])
    reps = st_counts[slot]
    it_idx = np.repeat(it_order, reps)
    total = int(reps.sum())
    block_start = np.repeat(np.cumsum(reps) - reps, reps)
    st_pos = np.repeat(st_start[slot], reps) + (np.arange(total) - block_start)
    st_idx = st_order[st_pos]

    schema = (*it.quasi, st.sensitive, it.class_attr)
    cols = {a.name: it.columns[a.name][it_idx] for a in (*it.quasi, it.class_attr)}
    cols[st.sensitive.name] = st.values[st_idx]
    data = Dataset(tuple(schema), cols, np.arange(total))
    if l is None:
        l = int(st_counts.min()) if len(st_counts) else 0
    return AnatomizedDataset(data, l, it.gid[it_idx], it.row_ids[it_idx])


def anatomize(train: Dataset, l: int, seed: int | None = None) -> tuple[GroupPartition, IdentifierTable, SensitiveTable, AnatomizedDataset]:
    partition = build_groups(train, l, seed)
    it, st = emit_tables(train, partition)
    return partition, it, st, join_anatomized(it, st, l)


# --- serialization -----------------------------------------------------------


def write_tables(it: IdentifierTable, st: SensitiveTable, it_path: str | Path, st_path: str | Path) -> None:
    with open(it_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = [it.class_attr.name, *(a.name for a in it.quasi)]
        w.writerow([*names, "gid"])
        for i in range(len(it)):
            w.writerow([*(format_value(it.columns[n][i]) for n in names), int(it.gid[i])])
    with open(st_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gid", st.sensitive.name])
        for g, v in zip(st.gid, st.values):
            w.writerow([int(g), format_value(v)])


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    return [h.strip() for h in rows[0]], rows[1:]


def read_tables(
    it_path: str | Path, st_path: str | Path, schema: tuple[AttributeSchema, ...] | None = None
) -> tuple[IdentifierTable, SensitiveTable]:
    """Load IT/ST files. Without a schema, the first IT column is taken as the
    class, the rest as categorical quasi-identifiers."""
    it_header, it_rows = _read_rows(it_path)
    st_header, st_rows = _read_rows(st_path)
    if it_header[-1] != "gid" or len(st_header) != 2 or st_header[0] != "gid":
        raise DataError("IT must end with a gid column and ST must be (gid, sensitive)")
    if schema is None:
        klass = AttributeSchema(it_header[0], Kind.CATEGORICAL, Role.CLASS)
        quasi = tuple(AttributeSchema(n, Kind.CATEGORICAL, Role.QUASI_IDENTIFYING) for n in it_header[1:-1])
        sens = AttributeSchema(st_header[1], Kind.CATEGORICAL, Role.SENSITIVE)
    else:
        by_name = {a.name: a for a in schema}
        try:
            klass = by_name[it_header[0]]
            quasi = tuple(by_name[n] for n in it_header[1:-1])
            sens = by_name[st_header[1]]
        except KeyError as exc:
            raise DataError(f"table column {exc.args[0]!r} not in schema") from None
    cols: dict[str, np.ndarray] = {}
    for j, attr in enumerate((klass, *quasi)):
        raw = [r[j].strip() for r in it_rows]
        if attr.kind is Kind.NUMERIC:
            try:
                cols[attr.name] = np.array([float(v) for v in raw])
            except ValueError as exc:
                raise DataError(f"{it_path}: non-numeric {attr.name!r}: {exc}") from None
        else:
            cols[attr.name] = np.array(raw, dtype=object)
    try:
        it_gid = np.array([int(r[-1]) for r in it_rows], dtype=np.int64)
        st_gid = np.array([int(r[0]) for r in st_rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"bad gid: {exc}") from None
    st_vals = [r[1].strip() for r in st_rows]
    values = np.array([float(v) for v in st_vals]) if sens.kind is Kind.NUMERIC else np.array(st_vals, dtype=object)
    it = IdentifierTable(klass, quasi, cols, it_gid, np.arange(len(it_rows)))
    return it, SensitiveTable(sens, st_gid, values)


def write_partition(partition: GroupPartition, path: str | Path) -> None:
    Path(path).write_text(json.dumps(partition.to_dict(), indent=1) + "\n")
