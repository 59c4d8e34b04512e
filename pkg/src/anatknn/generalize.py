"""Full-domain generalization to k-anonymity, the comparison baseline for anatomy."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .data import AttributeSchema, DataError, Dataset, Kind, NormalizationStats, Role, fit_normalization, format_value

ROOT = "*"


class GeneralizationError(DataError):
    pass


@dataclass(frozen=True)
class CategoricalHierarchy:
    """Value tree; ``parent`` maps every non-root node to its parent."""

    attribute: str
    parent: Mapping[str, str]
    root: str = ROOT

    @classmethod
    def from_tree(cls, attribute: str, tree: Mapping[str, Any] | Sequence[Any]) -> CategoricalHierarchy:
        parent: dict[str, str] = {}

        def walk(node: Any, up: str | None) -> None:
            if isinstance(node, Mapping):
                for name, children in node.items():
                    if up is not None:
                        parent[name] = up
                    walk(children, name)
            elif isinstance(node, (list, tuple)):
                for child in node:
                    walk(child, up)
            else:
                parent[str(node)] = up

        if not isinstance(tree, Mapping) or len(tree) != 1:
            raise GeneralizationError(f"hierarchy for {attribute!r} needs a single root node")
        root = next(iter(tree))
        walk(tree, None)
        return cls(attribute, parent, root)

    @classmethod
    def flat(cls, attribute: str, values: Sequence[str]) -> CategoricalHierarchy:
        return cls(attribute, {str(v): ROOT for v in values}, ROOT)

    @property
    def leaves(self) -> frozenset[str]:
        inner = set(self.parent.values())
        return frozenset(n for n in self.parent if n not in inner)

    def ancestors(self, value: str) -> list[str]:
        """``value`` followed by its ancestors up to the root."""
        if value != self.root and value not in self.parent:
            raise GeneralizationError(f"value {value!r} not in hierarchy for {self.attribute!r}")
        chain = [value]
        while chain[-1] != self.root:
            chain.append(self.parent[chain[-1]])
        return chain

    @property
    def height(self) -> int:
        return max((len(self.ancestors(v)) - 1 for v in self.leaves), default=0)

    def at_level(self, value: str, level: int) -> str:
        chain = self.ancestors(value)
        return chain[min(level, len(chain) - 1)]

    def covers(self, node: str, value: str) -> bool:
        return node in self.ancestors(value)


@dataclass(frozen=True)
class NumericHierarchy:
    """Ladder of interval partitions, finest first.

    Each ladder is a sorted breakpoint list ``b0 < ... < bm`` giving intervals
    ``[b_i, b_{i+1})`` with the last one closed. Level 0 keeps exact values;
    the level above the last ladder is the single interval over the domain.
    """

    attribute: str
    ladders: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        ladders = tuple(tuple(float(b) for b in ladder) for ladder in self.ladders)
        for ladder in ladders:
            if len(ladder) < 2 or any(b >= c for b, c in zip(ladder, ladder[1:])):
                raise GeneralizationError(f"breakpoints for {self.attribute!r} must be increasing: {ladder}")
        object.__setattr__(self, "ladders", ladders)

    @property
    def height(self) -> int:
        return len(self.ladders) + 1

    def intervals(self, values: np.ndarray, level: int, domain: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
        values = np.asarray(values, dtype=np.float64)
        if level == 0:
            return values.copy(), values.copy()
        if level > len(self.ladders):
            lo, hi = domain
            return np.full(values.shape, lo), np.full(values.shape, hi)
        b = np.asarray(self.ladders[level - 1])
        if values.size and (values.min() < b[0] or values.max() > b[-1]):
            bad = values[(values < b[0]) | (values > b[-1])][0]
            raise GeneralizationError(f"value {bad} outside hierarchy domain [{b[0]}, {b[-1]}] of {self.attribute!r}")
        idx = np.clip(np.searchsorted(b, values, side="right") - 1, 0, len(b) - 2)
        return b[idx], b[idx + 1]


Hierarchy = CategoricalHierarchy | NumericHierarchy


def load_hierarchies(path: str | Path) -> dict[str, Hierarchy]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GeneralizationError(f"cannot read hierarchies {path}: {exc}") from exc
    out: dict[str, Hierarchy] = {}
    for name, spec in raw.get("attributes", raw).items():
        if spec.get("kind") == "categorical":
            out[name] = CategoricalHierarchy.from_tree(name, spec["tree"])
        elif spec.get("kind") == "numeric":
            out[name] = NumericHierarchy(name, tuple(tuple(l) for l in spec["ladders"]))
        else:
            raise GeneralizationError(f"hierarchy {name!r} has unknown kind {spec.get('kind')!r}")
    return out


def default_hierarchies(data: Dataset, bins: Sequence[int] = (16, 4)) -> dict[str, Hierarchy]:
    """Flat value->"*" trees for categoricals and equal-width ladders for numerics."""
    out: dict[str, Hierarchy] = {}
    for attr in data.quasi_identifiers:
        col = data.columns[attr.name]
        if attr.kind is Kind.CATEGORICAL:
            out[attr.name] = CategoricalHierarchy.flat(attr.name, sorted(set(col)))
        else:
            lo, hi = float(col.min()), float(col.max())
            if hi == lo:
                hi = lo + 1.0
            out[attr.name] = NumericHierarchy(attr.name, tuple(tuple(np.linspace(lo, hi, b + 1)) for b in bins))
    return out


@dataclass(frozen=True, eq=False)
class AnonymizedDataset:
    """Generalized rows.

    Numeric quasi-identifiers are ``(lo, hi)`` interval arrays, categorical
    ones hold hierarchy node names. The sensitive attribute and class stay
    exact. ``stats`` come from the source training data.
    """

    schema: tuple[AttributeSchema, ...]
    intervals: Mapping[str, tuple[np.ndarray, np.ndarray]]
    nodes: Mapping[str, np.ndarray]
    exact: Mapping[str, np.ndarray]
    row_ids: np.ndarray
    k: int
    levels: Mapping[str, int]
    hierarchies: Mapping[str, Hierarchy]
    stats: NormalizationStats
    suppressed: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.row_ids)

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
        return (*self.quasi_identifiers, self.sensitive)

    @property
    def labels(self) -> np.ndarray:
        return self.exact[self.class_attr.name]

    def qi_keys(self) -> list[tuple]:
        parts = []
        for attr in self.quasi_identifiers:
            if attr.name in self.intervals:
                lo, hi = self.intervals[attr.name]
                parts.extend([lo, hi])
            else:
                parts.append(self.nodes[attr.name])
        return list(zip(*parts)) if parts else [()] * len(self)

    def cell(self, name: str, i: int) -> str:
        if name in self.intervals:
            lo, hi = self.intervals[name]
            if lo[i] == hi[i]:
                return format_value(lo[i])
            return f"[{format_value(lo[i])},{format_value(hi[i])}]"
        if name in self.nodes:
            return str(self.nodes[name][i])
        return format_value(self.exact[name][i])


def _qi_codes(data: Dataset, hierarchies: Mapping[str, Hierarchy], levels: Mapping[str, int], domains) -> np.ndarray:
    cols = []
    for attr in data.quasi_identifiers:
        h = hierarchies[attr.name]
        col = data.columns[attr.name]
        if isinstance(h, NumericHierarchy):
            lo, _ = h.intervals(col, levels[attr.name], domains[attr.name])
            cols.append(np.unique(lo, return_inverse=True)[1])
        else:
            uniq, inverse = np.unique(col, return_inverse=True)
            mapped = np.array([h.at_level(v, levels[attr.name]) for v in uniq], dtype=object)
            cols.append(np.unique(mapped, return_inverse=True)[1][inverse])
    if not cols:
        return np.zeros(len(data), dtype=np.int64)
    return np.unique(np.stack(cols, axis=1), axis=0, return_inverse=True)[1].reshape(-1)


def _violations(codes: np.ndarray, k: int) -> tuple[int, int]:
    counts = np.bincount(codes)
    small = counts[(counts > 0) & (counts < k)]
    return len(small), int(small.sum())


def generalize(
    train: Dataset,
    k: int,
    hierarchies: Mapping[str, Hierarchy],
    max_suppression: float = 0.0,
) -> AnonymizedDataset:
    """Greedy full-domain ascent to k-anonymity.

    At each step every attribute that can still climb is tried one level up;
    the one leaving the fewest violating equivalence classes (then fewest
    violating rows, then schema order) is kept. The ascent stops once no class
    is smaller than ``k``, or once the violating rows fit the suppression
    budget ``max_suppression * N``; those rows are then suppressed.
    """
    n = len(train)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise GeneralizationError(f"k={k} exceeds the {n} training rows")
    quasi = train.quasi_identifiers
    missing = [a.name for a in quasi if a.name not in hierarchies]
    if missing:
        raise GeneralizationError(f"no hierarchy for {missing}")
    for attr in quasi:
        h = hierarchies[attr.name]
        if isinstance(h, CategoricalHierarchy):
            for v in set(train.columns[attr.name]):
                h.ancestors(v)
        elif attr.kind is not Kind.NUMERIC:
            raise GeneralizationError(f"numeric hierarchy given for categorical {attr.name!r}")

    domains = {}
    for attr in quasi:
        h = hierarchies[attr.name]
        if isinstance(h, NumericHierarchy):
            col = train.columns[attr.name]
            lo, hi = float(col.min()), float(col.max())
            if h.ladders:
                lo, hi = min(lo, h.ladders[-1][0]), max(hi, h.ladders[-1][-1])
            domains[attr.name] = (lo, hi)
    levels = {a.name: 0 for a in quasi}
    budget = int(math.floor(max_suppression * n))

    codes = _qi_codes(train, hierarchies, levels, domains)
    n_bad, rows_bad = _violations(codes, k)
    while n_bad and rows_bad > budget:
        best = None
        for attr in quasi:
            if levels[attr.name] >= hierarchies[attr.name].height:
                continue
            trial = dict(levels)
            trial[attr.name] += 1
            trial_codes = _qi_codes(train, hierarchies, trial, domains)
            score = _violations(trial_codes, k)
            if best is None or score < best[0]:
                best = (score, attr.name, trial_codes)
        if best is None:
            break
        (n_bad, rows_bad), name, codes = best
        levels[name] += 1

    counts = np.bincount(codes)
    keep = counts[codes] >= k
    kept = train.take(np.flatnonzero(keep))
    suppressed = tuple(int(r) for r in train.row_ids[~keep])

    intervals, nodes = {}, {}
    for attr in quasi:
        h = hierarchies[attr.name]
        col = kept.columns[attr.name]
        if isinstance(h, NumericHierarchy):
            intervals[attr.name] = h.intervals(col, levels[attr.name], domains[attr.name])
        else:
            lookup = {v: h.at_level(v, levels[attr.name]) for v in set(col)}
            nodes[attr.name] = np.array([lookup[v] for v in col], dtype=object)
    exact = {a.name: kept.columns[a.name] for a in (train.sensitive, train.class_attr)}
    schema = (*quasi, train.sensitive, train.class_attr)
    return AnonymizedDataset(
        schema, intervals, nodes, exact, kept.row_ids, k, levels, dict(hierarchies),
        fit_normalization(train), suppressed,
    )


@dataclass(frozen=True)
class AnonymityReport:
    ok: bool
    k: int
    # qi tuple -> class size, only for classes smaller than k
    violating: Mapping[tuple, int] = field(default_factory=dict)


def verify_k_anonymity(data: AnonymizedDataset, k: int | None = None) -> AnonymityReport:
    k = data.k if k is None else k
    sizes = Counter(data.qi_keys())
    bad = {key: size for key, size in sizes.items() if size < k}
    return AnonymityReport(not bad, k, bad)


def generalized_distance(
    u: Mapping[str, Any],
    v: Mapping[str, Any],
    stats: NormalizationStats,
    schema: Sequence[AttributeSchema],
    hierarchies: Mapping[str, Hierarchy],
    weights: Mapping[str, float] | None = None,
) -> float:
    """Squared distance from a generalized row ``u`` to an exact row ``v``.

    Numeric cells of ``u`` may be ``(lo, hi)`` intervals (compared through the
    normalized midpoint) or exact numbers; categorical cells may be hierarchy
    nodes (0 when ``v``'s value lies beneath the node, else 1).
    """
    total = 0.0
    for attr in schema:
        if attr.role not in (Role.QUASI_IDENTIFYING, Role.SENSITIVE):
            continue
        w = 1.0 if weights is None else float(weights.get(attr.name, 1.0))
        a, b = u[attr.name], v[attr.name]
        if attr.kind is Kind.NUMERIC:
            if isinstance(a, (tuple, list)):
                a = (float(a[0]) + float(a[1])) / 2.0
            diff = stats.scale(attr.name, np.array([float(a)]))[0] - stats.scale(attr.name, np.array([float(b)]))[0]
            total += w * diff * diff
        else:
            h = hierarchies.get(attr.name)
            if h is None or a == b:
                total += w * (0.0 if a == b else 1.0)
            else:
                if b not in h.parent and b != h.root:
                    raise GeneralizationError(f"value {b!r} outside hierarchy of {attr.name!r}")
                total += w * (0.0 if h.covers(a, b) else 1.0)
    return total


def write_anonymized(data: AnonymizedDataset, path: str | Path) -> None:
    names = [a.name for a in data.schema]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(data)):
            w.writerow([data.cell(n, i) for n in names])
