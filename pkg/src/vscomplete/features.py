"""Per-pair feature vectors: [title emb | display emb | system one-hot | similarity]."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed import EmbeddingTable, display_key
from .errors import DimensionMismatch
from .persistence import read_artifact, write_artifact
from .pool import CandidatePool

SYSTEM_SLOTS = ("SNOMED-CT", "ICD-10-CM", "RxNorm", "LOINC", "CPT", "ICD-10-PCS", "HCPCS", "OTHER")
_SLOT = {s: i for i, s in enumerate(SYSTEM_SLOTS[:-1])}
N_SYSTEMS = len(SYSTEM_SLOTS)


def feature_dim(d: int) -> int:
    return 2 * d + N_SYSTEMS + 1


def system_slot(system: str) -> int:
    return _SLOT.get(system, N_SYSTEMS - 1)


def one_hot_system(system: str) -> np.ndarray:
    v = np.zeros(N_SYSTEMS)
    v[system_slot(system)] = 1.0
    return v


def assemble_features(pool: CandidatePool, title: str, titles: EmbeddingTable, displays: EmbeddingTable):
    """Return ``(X, y)`` for one pool; row order follows ``pool.entries``."""
    if titles.dim != displays.dim:
        raise DimensionMismatch(f"title dim {titles.dim} != display dim {displays.dim}")
    d = titles.dim
    n = len(pool.entries)
    X = np.zeros((n, feature_dim(d)))
    X[:, :d] = titles.get(title)
    if n:
        X[:, d : 2 * d] = displays.matrix[displays.rows(display_key(e.display) for e in pool.entries)]
        X[np.arange(n), 2 * d + np.array([system_slot(e.system) for e in pool.entries])] = 1.0
        X[:, -1] = [e.similarity for e in pool.entries]
    y = np.array([e.label for e in pool.entries], dtype=np.float64)
    return X, y


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    rows: list[tuple[str, str, str]]  # (target oid, code, system)
    dim: int

    def save(self, path: str | Path) -> None:
        write_artifact(
            path, "features",
            {"embedding_dim": self.dim, "feature_dim": feature_dim(self.dim), "systems": list(SYSTEM_SLOTS), "rows": self.rows},
            {"X": self.X, "y": self.y},
        )

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        meta, arrays = read_artifact(path, "features")
        return cls(arrays["X"], arrays["y"], [tuple(r) for r in meta["rows"]], meta["embedding_dim"])

    def row_oids(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows], dtype=object)


def assemble_feature_matrix(pools: list[CandidatePool], titles: EmbeddingTable, displays: EmbeddingTable,
                            title_of: dict[str, str] | None = None) -> FeatureMatrix:
    """Stack every pool's features in pools-file order.

    Target titles come from the pools themselves unless ``title_of`` is given.
    """
    title_of = title_of or {p.target_oid: p.target_title for p in pools}
    n = sum(len(p.entries) for p in pools)
    d = titles.dim
    X = np.empty((n, feature_dim(d)))
    y = np.empty(n)
    rows = []
    start = 0
    for p in pools:
        Xp, yp = assemble_features(p, title_of[p.target_oid], titles, displays)
        X[start : start + len(yp)] = Xp
        y[start : start + len(yp)] = yp
        start += len(yp)
        rows.extend((p.target_oid, e.code, e.system) for e in p.entries)
    return FeatureMatrix(X, y, rows, d)
