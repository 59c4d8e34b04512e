"""k-nearest-neighbor classification with a quadratic (weighted squared) distance.

Training data may be an exact :class:`Dataset`, an anatomized join, or a
generalized :class:`AnonymizedDataset`; queries are always exact rows.
Distances are squared: neighbor order is the same as for the metric itself.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .anatomy import AnatomizedDataset
from .data import AttributeSchema, DataError, Dataset, Kind, NormalizationStats, fit_normalization
from .generalize import AnonymizedDataset, CategoricalHierarchy

TrainingData = Union[Dataset, AnatomizedDataset, AnonymizedDataset]

# relative slack on the tree's search radius; candidates are re-ranked exactly
_RADIUS_SLACK = 1e-7


class TiePolicy(str, enum.Enum):
    """How equal distances are ordered.

    ``lowest_row_id`` prefers the smaller ingestion id (for anatomized training
    data, the id of the source IT row); ``seeded_random`` ranks rows by a
    permutation drawn from the model seed.
    """

    LOWEST_ROW_ID = "lowest_row_id"
    SEEDED_RANDOM = "seeded_random"


@dataclass(frozen=True)
class DistanceSpec:
    """Diagonal shape matrix over min-max normalized attributes.

    ``weights=None`` is the identity. Categorical attributes contribute
    ``weight * [u != v]``, numeric ones ``weight * (u - v)**2``.
    """

    stats: NormalizationStats
    weights: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.weights is not None:
            bad = {k: w for k, w in self.weights.items() if not w >= 0}
            if bad:
                raise ValueError(f"weights must be nonnegative: {bad}")

    def weight(self, name: str) -> float:
        if self.weights is None:
            return 1.0
        return float(self.weights[name])

    def check(self, attributes: Sequence[AttributeSchema]) -> None:
        if self.weights is None:
            return
        names = {a.name for a in attributes}
        if set(self.weights) != names:
            raise ValueError(f"weights cover {sorted(self.weights)}, attributes are {sorted(names)}")


@dataclass(frozen=True, eq=False)
class _Axis:
    attr: AttributeSchema
    weight: float
    # numeric: normalized training values; categorical: codes into `table` rows
    values: np.ndarray
    # categorical only: contribution[train code, query code]; last column = unseen value
    table: np.ndarray | None = None
    query_vocab: Mapping[str, int] = field(default_factory=dict)
    train_vocab: tuple[str, ...] = ()
    plain: bool = True


def _categorical_axis(attr, weight, train_values, query_vocab, hierarchy=None):
    train_vocab, codes = np.unique(np.asarray(train_values, dtype=object), return_inverse=True)
    table = np.ones((len(train_vocab), len(query_vocab) + 1))
    plain = hierarchy is None
    for i, node in enumerate(train_vocab):
        for value, j in query_vocab.items():
            if hierarchy is None:
                table[i, j] = 0.0 if node == value else 1.0
            elif value == node or (value in hierarchy.parent and hierarchy.covers(node, value)):
                table[i, j] = 0.0
    return _Axis(attr, weight, codes.astype(np.int64), table, query_vocab, tuple(train_vocab), plain)


def _build_axes(train: TrainingData, spec: DistanceSpec) -> tuple[list[_Axis], np.ndarray, np.ndarray, Sequence[AttributeSchema]]:
    """Return (axes, labels, row ids, feature attributes)."""
    if isinstance(train, AnatomizedDataset):
        train = train.data
    features = train.features
    spec.check(features)
    axes = []
    for attr in features:
        w = spec.weight(attr.name)
        if attr.kind is Kind.NUMERIC:
            if isinstance(train, AnonymizedDataset) and attr.name in train.intervals:
                lo, hi = train.intervals[attr.name]
                raw = (lo + hi) / 2.0
            else:
                raw = train.exact[attr.name] if isinstance(train, AnonymizedDataset) else train.columns[attr.name]
            axes.append(_Axis(attr, w, spec.stats.scale(attr.name, raw)))
        else:
            vocab = {v: j for j, v in enumerate(spec.stats.categories[attr.name])}
            if isinstance(train, AnonymizedDataset) and attr.name in train.nodes:
                h = train.hierarchies[attr.name]
                assert isinstance(h, CategoricalHierarchy)
                axes.append(_categorical_axis(attr, w, train.nodes[attr.name], vocab, h))
            else:
                col = train.exact[attr.name] if isinstance(train, AnonymizedDataset) else train.columns[attr.name]
                axes.append(_categorical_axis(attr, w, col, vocab))
    return axes, np.asarray(train.labels), np.asarray(train.row_ids), features


def _sq_distances(axes: Sequence[_Axis], rows: np.ndarray | slice, query: Sequence[float | int]) -> np.ndarray:
    """Distances from one encoded query to the selected training rows.

    Accumulates axis by axis in feature order; the accelerated search and the
    exhaustive scan both go through here, so equal inputs give bit-equal output.
    """
    total = None
    for axis, q in zip(axes, query):
        if axis.table is None:
            diff = axis.values[rows] - q
            term = axis.weight * (diff * diff)
        else:
            term = axis.weight * axis.table[axis.values[rows], q]
        total = term if total is None else total + term
    return total


@dataclass(frozen=True, eq=False)
class KnnModel:
    train: TrainingData
    k: int = 1
    distance: DistanceSpec | None = None
    tie_policy: TiePolicy = TiePolicy.LOWEST_ROW_ID
    seed: int = 0
    # "auto": kd-tree over distinct rows when every axis is a plain metric, else a distinct-row scan
    index: str = "auto"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tie_policy", TiePolicy(self.tie_policy))
        if self.distance is None:
            if isinstance(self.train, AnonymizedDataset):
                stats = self.train.stats
            else:
                data = self.train.data if isinstance(self.train, AnatomizedDataset) else self.train
                stats = fit_normalization(data)
            object.__setattr__(self, "distance", DistanceSpec(stats))
        axes, labels, row_ids, features = _build_axes(self.train, self.distance)
        n = len(row_ids)
        if n == 0:
            raise DataError("training data is empty")
        if not 1 <= self.k <= n:
            raise ValueError(f"k must be in [1, {n}], got {self.k}")
        if self.k % 2 == 0:
            warnings.warn(f"even k={self.k}: majority votes can tie", stacklevel=3)
        if self.index not in ("auto", "kdtree", "scan"):
            raise ValueError(f"unknown index {self.index!r}")

        classes, label_codes = np.unique(labels, return_inverse=True)
        if self.tie_policy is TiePolicy.LOWEST_ROW_ID and isinstance(self.train, AnatomizedDataset):
            # joined rows inherit the ingestion id of their IT row, so ties follow
            # the source data rather than the order in which groups were formed
            rank = np.argsort(np.lexsort((np.arange(n), self.train.source_row_ids)), kind="stable")
        elif self.tie_policy is TiePolicy.LOWEST_ROW_ID:
            rank = np.argsort(np.argsort(row_ids, kind="stable"), kind="stable")
        else:
            rank = np.random.default_rng(self.seed).permutation(n)

        # distinct feature vectors, members of each sorted by tie rank
        key = np.stack([a.values.astype(np.float64) for a in axes], axis=1)
        uniq_key, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.lexsort((rank, inverse))
        counts = np.bincount(inverse, minlength=len(uniq_key))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        representative = order[offsets[:-1]]

        plain = all(a.plain for a in axes)
        use_tree = self.index == "kdtree" or (self.index == "auto" and plain)
        if use_tree and not plain:
            raise ValueError("kd-tree index needs exact training data (no generalized values)")
        tree = cKDTree(self._embed_rows(axes, representative)) if use_tree else None

        for name, value in dict(
            _axes=axes, _features=features, _labels=label_codes, _classes=classes, _row_ids=row_ids,
            _rank=rank, _order=order, _offsets=offsets, _counts=counts, _repr=representative, _tree=tree,
        ).items():
            object.__setattr__(self, name, value)

    # --- encoding ------------------------------------------------------------

    @staticmethod
    def _slots(a: _Axis) -> tuple[np.ndarray, int]:
        """One-hot slot of each training vocabulary entry, and the block width.

        Query codes occupy slots ``0..Q`` (``Q`` = unseen value); training
        values outside the query vocabulary get slots of their own.
        """
        unseen = a.table.shape[1] - 1
        slots, extra = [], 0
        for v in a.train_vocab:
            if v in a.query_vocab:
                slots.append(a.query_vocab[v])
            else:
                extra += 1
                slots.append(unseen + extra)
        return np.array(slots, dtype=np.int64), unseen + 1 + extra

    def _embed_rows(self, axes: Sequence[_Axis], rows: np.ndarray) -> np.ndarray:
        blocks = []
        for a in axes:
            if a.table is None:
                blocks.append(np.sqrt(a.weight) * a.values[rows][:, None])
            else:
                slots, width = self._slots(a)
                onehot = np.zeros((len(rows), width))
                onehot[np.arange(len(rows)), slots[a.values[rows]]] = 1.0
                blocks.append(np.sqrt(a.weight / 2.0) * onehot)
        return np.hstack(blocks)

    def _embed_queries(self, codes: list[np.ndarray]) -> np.ndarray:
        blocks = []
        for a, q in zip(self._axes, codes):
            if a.table is None:
                blocks.append(np.sqrt(a.weight) * q[:, None])
            else:
                _, width = self._slots(a)
                onehot = np.zeros((len(q), width))
                onehot[np.arange(len(q)), q] = 1.0
                blocks.append(np.sqrt(a.weight / 2.0) * onehot)
        return np.hstack(blocks)

    def encode(self, queries: Dataset | Mapping[str, Any]) -> list[np.ndarray]:
        """Per-axis query encodings: normalized floats or vocabulary codes."""
        single = isinstance(queries, Mapping)
        out = []
        for a in self._axes:
            try:
                raw = queries[a.attr.name]
            except KeyError:
                raise DataError(f"query lacks attribute {a.attr.name!r}") from None
            raw = np.atleast_1d(np.asarray(raw, dtype=object if a.table is not None else np.float64))
            if a.table is None:
                out.append(self.distance.stats.scale(a.attr.name, raw.astype(np.float64)))
            else:
                unseen = a.table.shape[1] - 1
                out.append(np.array([a.query_vocab.get(v, unseen) for v in raw], dtype=np.int64))
        if single and any(len(c) != 1 for c in out):
            raise DataError("single query must hold scalar values")
        return out

    # --- search --------------------------------------------------------------

    def _select(self, uniq: np.ndarray, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pick k training positions from candidate distinct vectors by (distance, tie rank)."""
        k = self.k
        by_dist = np.argsort(dist, kind="stable")
        uniq, dist = uniq[by_dist], dist[by_dist]
        cum = np.cumsum(self._counts[uniq])
        j = int(np.searchsorted(cum, k))
        dk = dist[j]
        inner = uniq[dist < dk]
        boundary = uniq[dist == dk]

        def members(u: np.ndarray) -> np.ndarray:
            if len(u) == 0:
                return np.empty(0, dtype=np.int64)
            return np.concatenate([self._order[self._offsets[x] : self._offsets[x + 1]] for x in u])

        rows_in = members(inner)
        d_in = np.repeat(dist[dist < dk], self._counts[inner])
        need = k - len(rows_in)
        rows_b = members(boundary)
        if len(boundary) > 1:
            rows_b = rows_b[np.argsort(self._rank[rows_b], kind="stable")]
        rows = np.concatenate([rows_in, rows_b[:need]])
        dists = np.concatenate([d_in, np.full(need, dk)])
        final = np.lexsort((self._rank[rows], dists))
        return rows[final], dists[final]

    def _search(self, codes: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        m = len(codes[0])
        rows_out = np.empty((m, self.k), dtype=np.int64)
        dist_out = np.empty((m, self.k))
        n_uniq = len(self._repr)
        if self._tree is not None:
            emb = self._embed_queries(codes)
            kk = min(self.k, n_uniq)
            dd, ii = self._tree.query(emb, k=kk)
            dd, ii = dd.reshape(m, kk), ii.reshape(m, kk)
            cum = np.cumsum(self._counts[ii], axis=1)
            reach = dd[np.arange(m), np.argmax(cum >= self.k, axis=1)]
            balls = self._tree.query_ball_point(emb, reach * (1 + _RADIUS_SLACK) + 1e-12)
            for i in range(m):
                cand = np.asarray(balls[i], dtype=np.int64)
                q = [c[i] for c in codes]
                d = _sq_distances(self._axes, self._repr[cand], q)
                rows_out[i], dist_out[i] = self._select(cand, d)
        else:
            all_u = np.arange(n_uniq)
            reps = self._repr
            for i in range(m):
                q = [c[i] for c in codes]
                d = _sq_distances(self._axes, reps, q)
                rows_out[i], dist_out[i] = self._select(all_u, d)
        return rows_out, dist_out


def neighbors(model: KnnModel, query: Mapping[str, Any]) -> list[tuple[int, float]]:
    """The k nearest training rows as ``(row id, squared distance)``, nearest first."""
    rows, dists = model._search(model.encode(query))
    return [(int(model._row_ids[r]), float(d)) for r, d in zip(rows[0], dists[0])]


def neighbors_batch(model: KnnModel, queries: Dataset) -> tuple[np.ndarray, np.ndarray]:
    rows, dists = model._search(model.encode(queries))
    return model._row_ids[rows], dists


def brute_force_neighbors(model: KnnModel, query: Mapping[str, Any]) -> list[tuple[int, float]]:
    """Exhaustive per-row scan, independent of the distinct-row index."""
    codes = model.encode(query)
    q = [c[0] for c in codes]
    d = _sq_distances(model._axes, slice(None), q)
    top = np.lexsort((model._rank, d))[: model.k]
    return [(int(model._row_ids[r]), float(d[r])) for r in top]


def _vote(model: KnnModel, rows: np.ndarray) -> np.ndarray:
    """Majority label per query row; a tied vote goes to the tied class seen first."""
    labels = model._labels[rows]
    n_cls = len(model._classes)
    counts = np.zeros((len(rows), n_cls), dtype=np.int64)
    for c in range(n_cls):
        counts[:, c] = (labels == c).sum(axis=1)
    best = counts.max(axis=1, keepdims=True)
    tied = counts[np.arange(len(rows))[:, None], labels] == best
    first = np.argmax(tied, axis=1)
    return labels[np.arange(len(rows)), first]


def classify(model: KnnModel, query: Mapping[str, Any]) -> str:
    rows, _ = model._search(model.encode(query))
    return str(model._classes[_vote(model, rows)[0]])


def predict(model: KnnModel, queries: Dataset) -> np.ndarray:
    rows, _ = model._search(model.encode(queries))
    return model._classes[_vote(model, rows)]


def error_rate(model: KnnModel, test: Dataset) -> float:
    if len(test) == 0:
        raise DataError("test set is empty")
    return float(np.mean(predict(model, test) != test.labels))
