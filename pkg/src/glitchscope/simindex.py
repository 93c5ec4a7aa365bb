"""Exact k-nearest-neighbor search over an embedding store.

The corpora this harness targets are small (a few thousand vectors), so the
index is an exhaustive scan: every query computes its similarity to every
stored vector and sorts. That keeps results exact and lets the oracle tests
compare against an independent full scan. Ties are broken by ascending id so
output is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
from sklearn.base import BaseEstimator

from .datastore import EmbeddingStore
from .errors import ValidationError
from .validation import check_nonzero, check_same_dim, check_vector

MetricName = Literal["cosine", "l2"]
METRICS: tuple[str, ...] = ("cosine", "l2")


def cosine(a, b) -> float:
    """Cosine similarity dot(a,b)/(|a||b|). Requires nonzero, equal-dim vectors."""
    va = check_vector(a, "a")
    vb = check_vector(b, "b")
    check_same_dim(va, vb)
    check_nonzero(va, "a")
    check_nonzero(vb, "b")
    return float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))


def l2(a, b) -> float:
    """Euclidean distance between two equal-dimension vectors."""
    va = check_vector(a, "a")
    vb = check_vector(b, "b")
    check_same_dim(va, vb)
    return float(math.sqrt(float(np.sum((va - vb) ** 2))))


@dataclass(frozen=True)
class NeighborList:
    """Ranked top-k result for one query, best entry first.

    Scores are similarities for cosine (descending) and distances for l2
    (ascending).
    """

    query_id: str
    metric: str
    entries: tuple[tuple[str, float], ...]

    def ids(self) -> tuple[str, ...]:
        return tuple(id_ for id_, _ in self.entries)

    def validate(self) -> None:
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}")
        ids = self.ids()
        if len(set(ids)) != len(ids):
            raise ValidationError(f"neighbor list for {self.query_id!r} has duplicate ids")
        scores = [s for _, s in self.entries]
        ordered = all(x >= y for x, y in zip(scores, scores[1:])) if self.metric == "cosine" \
            else all(x <= y for x, y in zip(scores, scores[1:]))
        if not ordered:
            raise ValidationError(f"neighbor list for {self.query_id!r} is not sorted for {self.metric}")


class ExactNearestNeighbors(BaseEstimator):
    """Exhaustive-scan nearest-neighbor index with deterministic tie-breaks.

    Parameters
    ----------
    metric : "cosine" or "l2"
    k : default number of neighbors returned by :meth:`kneighbors`
    exclude_self : drop the query row from its own result list
    """

    def __init__(self, metric: str = "cosine", k: int = 10, exclude_self: bool = True):
        self.metric = metric
        self.k = k
        self.exclude_self = exclude_self

    def fit(self, store: EmbeddingStore) -> "ExactNearestNeighbors":
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if not isinstance(store, EmbeddingStore):
            raise ValidationError("fit expects an EmbeddingStore")
        matrix = store.vectors.astype(np.float64)
        norms = np.linalg.norm(matrix, axis=1)
        if self.metric == "cosine":
            zero_rows = np.flatnonzero(norms == 0.0)
            if zero_rows.size:
                bad = ", ".join(repr(store.ids[i]) for i in zero_rows[:5])
                raise ValidationError(f"cosine metric requires nonzero vectors; zero rows: {bad}")
        self.store_ = store
        self.matrix_ = matrix
        self.norms_ = norms
        self.row_of_ = store.index_of()
        # Rank of each row's id in ascending id order, used as the tie-break key.
        order = sorted(range(len(store.ids)), key=lambda i: store.ids[i])
        ranks = np.empty(len(order), dtype=np.int64)
        for rank, row in enumerate(order):
            ranks[row] = rank
        self.id_rank_ = ranks
        return self

    def kneighbors(self, query_id: str, k: int | None = None,
                   exclude_self: bool | None = None) -> NeighborList:
        if not hasattr(self, "store_"):
            raise ValidationError("index is not fitted; call fit(store) first")
        if query_id not in self.row_of_:
            raise ValidationError(f"unknown query id {query_id!r}")
        k = self.k if k is None else k
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        exclude_self = self.exclude_self if exclude_self is None else exclude_self

        row = self.row_of_[query_id]
        q = self.matrix_[row]
        if self.metric == "cosine":
            qn = self.norms_[row]
            key = -(self.matrix_ @ q) / (self.norms_ * qn)
        else:
            diff = self.matrix_ - q
            key = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # lexsort: last key is primary; id rank settles exact float ties.
        order = np.lexsort((self.id_rank_, key))
        entries: list[tuple[str, float]] = []
        for idx in order:
            if exclude_self and idx == row:
                continue
            score = -key[idx] if self.metric == "cosine" else key[idx]
            entries.append((self.store_.ids[idx], float(score)))
            if len(entries) == k:
                break
        return NeighborList(query_id=query_id, metric=self.metric, entries=tuple(entries))


def query_topk(store: EmbeddingStore, query_id: str, k: int,
               metric: str = "cosine", exclude_self: bool = True) -> NeighborList:
    """One-shot top-k query; builds a throwaway index.

    Use :class:`ExactNearestNeighbors` directly when issuing many queries
    against the same store.
    """
    index = ExactNearestNeighbors(metric=metric, k=k, exclude_self=exclude_self).fit(store)
    return index.kneighbors(query_id)


def write_neighbor_lists(lists: Iterable[NeighborList], path: str | Path) -> None:
    """Batch output: one line per query with the ordered (id, score) pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for nl in lists:
            fh.write(json.dumps(
                {"query_id": nl.query_id, "metric": nl.metric,
                 "entries": [[i, s] for i, s in nl.entries]},
                ensure_ascii=False,
            ))
            fh.write("\n")


def read_neighbor_lists(path: str | Path) -> list[NeighborList]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(NeighborList(
                query_id=obj["query_id"], metric=obj["metric"],
                entries=tuple((str(i), float(s)) for i, s in obj["entries"]),
            ))
    return out
