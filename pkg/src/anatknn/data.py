"""Typed tabular datasets: schema, CSV ingestion, normalization and splitting."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"?", ""})


class DataError(ValueError):
    """Raised for unreadable, malformed or schema-violating input data."""


class Kind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class Role(str, enum.Enum):
    QUASI_IDENTIFYING = "quasi_identifying"
    SENSITIVE = "sensitive"
    CLASS = "class"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    kind: Kind
    role: Role

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "role", Role(self.role))

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "kind": self.kind.value, "role": self.role.value}


Schema = tuple[AttributeSchema, ...]


def validate_schema(schema: Sequence[AttributeSchema]) -> None:
    names = [a.name for a in schema]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate attribute names in schema: {names}")
    sensitive = [a for a in schema if a.role is Role.SENSITIVE]
    klass = [a for a in schema if a.role is Role.CLASS]
    if len(sensitive) != 1:
        raise DataError(f"schema needs exactly one sensitive attribute, got {len(sensitive)}")
    if len(klass) != 1:
        raise DataError(f"schema needs exactly one class attribute, got {len(klass)}")
    if klass[0].kind is not Kind.CATEGORICAL:
        raise DataError(f"class attribute {klass[0].name!r} must be categorical")


def load_schema(path: str | Path) -> Schema:
    """Read a JSON schema: either a list of attributes or ``{"attributes": [...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("attributes")
    if not isinstance(raw, list):
        raise DataError(f"schema {path} must hold a list of attributes")
    try:
        schema = tuple(AttributeSchema(a["name"], a["kind"], a["role"]) for a in raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad attribute entry in schema {path}: {exc}") from exc
    validate_schema(schema)
    return schema


def dump_schema(schema: Sequence[AttributeSchema], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"attributes": [a.to_dict() for a in schema]}, indent=2) + "\n")


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store aligned to a schema.

    Numeric columns are float64 arrays, categorical and excluded columns are
    object arrays of strings. ``row_ids`` are stable identifiers assigned at
    ingestion and carried through every subset.
    """

    schema: Schema
    columns: Mapping[str, np.ndarray]
    row_ids: np.ndarray

    def __post_init__(self) -> None:
        schema = tuple(self.schema)
        validate_schema(schema)
        n = len(self.row_ids)
        cols: dict[str, np.ndarray] = {}
        for attr in schema:
            if attr.name not in self.columns:
                raise DataError(f"missing column {attr.name!r}")
            values = self.columns[attr.name]
            if attr.kind is Kind.NUMERIC and attr.role is not Role.EXCLUDED:
                col = np.array(values, dtype=np.float64)
                if not np.all(np.isfinite(col)):
                    raise DataError(f"non-finite value in numeric column {attr.name!r}")
            else:
                col = np.array([str(v) for v in values], dtype=object)
            if len(col) != n:
                raise DataError(f"column {attr.name!r} has {len(col)} rows, expected {n}")
            cols[attr.name] = _frozen(col)
        ids = np.array(self.row_ids, dtype=np.int64)
        if len(np.unique(ids)) != n:
            raise DataError("row ids must be unique")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "row_ids", _frozen(ids))

    def __len__(self) -> int:
        return len(self.row_ids)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def attribute(self, name: str) -> AttributeSchema:
        for attr in self.schema:
            if attr.name == name:
                return attr
        raise KeyError(name)

    @property
    def quasi_identifiers(self) -> tuple[AttributeSchema, ...]:
        return tuple(a for a in self.schema if a.role is Role.QUASI_IDENTIFYING)

    @property
    def sensitive(self) -> AttributeSchema:
        return next(a for a in self.schema if a.role is Role.SENSITIVE)

    @property
    def class_attr(self) -> AttributeSchema:
        return next(a for a in self.schema if a.role is Role.CLASS)

    @property
    def features(self) -> tuple[AttributeSchema, ...]:
        """Attributes that enter the distance: quasi-identifiers then the sensitive one."""
        return (*self.quasi_identifiers, self.sensitive)

    @property
    def labels(self) -> np.ndarray:
        return self.columns[self.class_attr.name]

    def class_labels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    def take(self, positions: Iterable[int] | np.ndarray) -> Dataset:
        """Subset by row position, preserving row ids."""
        idx = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.schema,
            {name: col[idx] for name, col in self.columns.items()},
            self.row_ids[idx],
        )

    def positions_of(self, row_ids: Iterable[int]) -> np.ndarray:
        lookup = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            return np.array([lookup[int(r)] for r in row_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown row id {exc.args[0]}") from None

    def row(self, position: int) -> dict[str, Any]:
        return {name: col[position] for name, col in self.columns.items()}

    def rows(self) -> Iterator[dict[str, Any]]:
        for i in range(len(self)):
            yield self.row(i)

    def equals(self, other: Dataset) -> bool:
        if self.schema != other.schema or not np.array_equal(self.row_ids, other.row_ids):
            return False
        return all(np.array_equal(self.columns[a.name], other.columns[a.name]) for a in self.schema)

    def fingerprint(self) -> str:
        """Content hash over schema, ids and values; used to prove test folds stay untouched."""
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps([a.to_dict() for a in self.schema]).encode())
        h.update(self.row_ids.tobytes())
        for attr in self.schema:
            col = self.columns[attr.name]
            if col.dtype == object:
                h.update("\x1f".join(col).encode())
            else:
                h.update(col.tobytes())
        return h.hexdigest()

    def check_binary_class(self) -> None:
        labels = self.class_labels()
        if len(labels) != 2:
            raise DataError(
                f"class attribute {self.class_attr.name!r} must have exactly 2 labels, got {list(labels)}"
            )


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise DataError("nothing to concatenate")
    schema = datasets[0].schema
    if any(d.schema != schema for d in datasets):
        raise DataError("cannot concatenate datasets with different schemas")
    return Dataset(
        schema,
        {a.name: np.concatenate([d.columns[a.name] for d in datasets]) for a in schema},
        np.concatenate([d.row_ids for d in datasets]),
    )


@dataclass(frozen=True)
class LoadResult:
    dataset: Dataset
    dropped: int


def load_csv(
    path: str | Path,
    schema: Sequence[AttributeSchema],
    missing_policy: str = "drop_row",
) -> LoadResult:
    """Read a headered CSV file into a :class:`Dataset`.

    Cells are whitespace-stripped; ``?`` and empty cells count as missing.
    Only non-excluded attributes are checked for missing values. Row ids are
    assigned in file order, before any row is dropped.
    """
    if missing_policy not in ("drop_row", "error"):
        raise ValueError(f"unknown missing policy {missing_policy!r}")
    schema = tuple(schema)
    validate_schema(schema)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh, skipinitialspace=True)
            header = next(reader, None)
            records = [r for r in reader if r and any(cell.strip() for cell in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in header]
    if header != [a.name for a in schema]:
        raise DataError(f"header {header} does not match schema {[a.name for a in schema]}")

    checked = [i for i, a in enumerate(schema) if a.role is not Role.EXCLUDED]
    kept: list[list[str]] = []
    kept_ids: list[int] = []
    dropped = 0
    for line_no, rec in enumerate(records):
        if len(rec) != len(schema):
            raise DataError(f"{path}: data row {line_no + 1} has {len(rec)} fields, expected {len(schema)}")
        rec = [cell.strip() for cell in rec]
        if any(rec[i] in MISSING_TOKENS for i in checked):
            if missing_policy == "error":
                raise DataError(f"{path}: missing value in data row {line_no + 1}")
            dropped += 1
            continue
        kept.append(rec)
        kept_ids.append(line_no)
    if dropped:
        logger.info("dropped %d of %d rows with missing values from %s", dropped, len(records), path)
    if not kept:
        raise DataError(f"{path}: no usable rows")

    columns: dict[str, np.ndarray] = {}
    for j, attr in enumerate(schema):
        raw = [rec[j] for rec in kept]
        if attr.kind is Kind.NUMERIC and attr.role is not Role.EXCLUDED:
            try:
                columns[attr.name] = np.array([float(v) for v in raw], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric token in column {attr.name!r}: {exc}") from None
        else:
            columns[attr.name] = np.array(raw, dtype=object)
    return LoadResult(Dataset(schema, columns, np.array(kept_ids)), dropped)


def format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v.is_integer() and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    return str(value)


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write the canonical serialization: schema column order, one header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([a.name for a in data.schema])
        cols = [data.columns[a.name] for a in data.schema]
        for i in range(len(data)):
            writer.writerow([format_value(c[i]) for c in cols])


@dataclass(frozen=True)
class NormalizationStats:
    numeric: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    categories: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def scale(self, name: str, values: np.ndarray) -> np.ndarray:
        """Min-max scale; a constant column maps to 0."""
        lo, hi = self.numeric[name]
        values = np.asarray(values, dtype=np.float64)
        if hi == lo:
            return np.zeros_like(values)
        return (values - lo) / (hi - lo)

    def to_dict(self) -> dict[str, Any]:
        return {
            "numeric": {k: list(v) for k, v in self.numeric.items()},
            "categories": {k: list(v) for k, v in self.categories.items()},
        }


def fit_normalization(train: Dataset) -> NormalizationStats:
    if len(train) == 0:
        raise DataError("cannot fit normalization on an empty dataset")
    numeric: dict[str, tuple[float, float]] = {}
    categories: dict[str, tuple[str, ...]] = {}
    for attr in train.schema:
        if attr.role is Role.EXCLUDED:
            continue
        col = train.columns[attr.name]
        if attr.kind is Kind.NUMERIC:
            numeric[attr.name] = (float(col.min()), float(col.max()))
        else:
            categories[attr.name] = tuple(sorted(set(col)))
    return NormalizationStats(numeric, categories)


def split_folds(data: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold split.

    Rows of each class are shuffled with ``seed`` and dealt round-robin, the
    deal continuing across classes, so both per-class and total fold sizes
    differ by at most one.
    """
    n = len(data)
    if folds < 2 or folds > n:
        raise DataError(f"folds must be in [2, {n}], got {folds}")
    rng = np.random.default_rng(seed)
    labels = data.labels
    order = []
    for label in data.class_labels():
        members = np.flatnonzero(labels == label)
        order.append(rng.permutation(members))
    dealt = np.concatenate(order)
    assignment = np.empty(n, dtype=np.int64)
    assignment[dealt] = np.arange(n) % folds
    out = []
    for f in range(folds):
        test_idx = np.flatnonzero(assignment == f)
        train_idx = np.flatnonzero(assignment != f)
        out.append((data.take(train_idx), data.take(test_idx)))
    return out


def split_partitions(data: Dataset, parts: int, seed: int) -> list[Dataset]:
    n = len(data)
    if parts < 2 or parts > n:
        raise DataError(f"parts must be in [2, {n}], got {parts}")
    perm = np.random.default_rng(seed).permutation(n)
    return [data.take(np.sort(chunk)) for chunk in np.array_split(perm, parts)]


def from_records(
    schema: Sequence[AttributeSchema],
    records: Sequence[Mapping[str, Any]] | Sequence[Sequence[Any]],
    row_ids: Sequence[int] | None = None,
) -> Dataset:
    """Build a dataset from in-memory rows (mappings or schema-ordered sequences)."""
    schema = tuple(schema)
    columns: dict[str, list[Any]] = {a.name: [] for a in schema}
    for rec in records:
        for j, attr in enumerate(schema):
            columns[attr.name].append(rec[attr.name] if isinstance(rec, Mapping) else rec[j])
    ids = np.arange(len(records)) if row_ids is None else np.asarray(row_ids)
    return Dataset(schema, {k: np.array(v, dtype=object) for k, v in columns.items()}, ids)


def is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() in MISSING_TOKENS
