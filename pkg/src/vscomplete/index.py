"""Exact inner-product search over unit-norm title embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ValueSet
from .embed import EmbeddingTable
from .errors import DataError, DimensionMismatch, MissingEmbedding, MissingTitleEmbedding
from .persistence import read_artifact, write_artifact


@dataclass
class VectorIndex:
    dim: int
    ids: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.ids), self.dim):
            raise DimensionMismatch(f"index matrix shape {self.matrix.shape} does not match {len(self.ids)} ids x dim {self.dim}")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("index ids must be unique")
        self._pos = {oid: i for i, oid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, oid: str) -> int:
        return self._pos[oid]

    def save(self, path: str | Path) -> None:
        write_artifact(path, "index", {"dim": self.dim, "ids": self.ids}, {"matrix": self.matrix})

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        meta, arrays = read_artifact(path, "index")
        return cls(meta["dim"], meta["ids"], np.array(arrays["matrix"]))


def build_index(titles: EmbeddingTable, sets: list[ValueSet]) -> VectorIndex:
    """One row per value set, in corpus order."""
    rows = np.empty((len(sets), titles.dim))
    for i, vs in enumerate(sets):
        try:
            rows[i] = titles.get(vs.title)
        except MissingEmbedding:
            raise MissingTitleEmbedding(vs.oid) from None
    return VectorIndex(titles.dim, [vs.oid for vs in sets], rows)


def query_top_k(index: VectorIndex, query: np.ndarray, k: int = 10, exclude: str | None = None) -> list[tuple[str, float]]:
    """Top-``k`` rows by inner product; ties go to the earlier-inserted row."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimensionMismatch(f"query has shape {query.shape}, index dim is {index.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = index.matrix @ query
    return _top_k(index, sims, k, exclude)


def query_top_k_batch(index: VectorIndex, queries: np.ndarray, k: int = 10, exclude: list[str | None] | None = None):
    """Vectorized :func:`query_top_k` over the rows of ``queries``."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != index.dim:
        raise DimensionMismatch(f"queries have shape {queries.shape}, index dim is {index.dim}")
    exclude = exclude or [None] * len(queries)
    out = []
    block = 1024
    for start in range(0, len(queries), block):
        sims = queries[start : start + block] @ index.matrix.T
        for j, row in enumerate(sims):
            out.append(_top_k(index, row, k, exclude[start + j]))
    return out


def _top_k(index: VectorIndex, sims: np.ndarray, k: int, exclude: str | None) -> list[tuple[str, float]]:
    order = np.argsort(-sims, kind="stable")
    skip = index._pos.get(exclude, -1) if exclude is not None else -1
    result = []
    for i in order:
        if i == skip:
            continue
        result.append((index.ids[i], float(sims[i])))
        if len(result) == k:
            break
    return result
