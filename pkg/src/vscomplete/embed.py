"""String embeddings: a deterministic hashing encoder and file-backed tables."""

from __future__ import annotations

import base64
import hashlib
import logging
import re
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import BadHeader, DimensionMismatch, DuplicateKey, MissingEmbedding

log = logging.getLogger(__name__)

DEFAULT_DIM = 768
NORM_TOL = 1e-6
EMPTY_DISPLAY = "<EMPTY>"

_WORD_RE = re.compile(r"\w+")


@lru_cache(maxsize=1 << 16)
def _feature_hash(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")


def _features(text: str) -> list[str]:
    words = _WORD_RE.findall(text.lower())
    feats = ["w:" + w for w in words]
    for w in words:
        padded = f"#{w}#"
        feats.extend("c:" + padded[i : i + 3] for i in range(len(padded) - 2))
    return feats


def hash_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of word unigrams and character trigrams.

    Returns a unit vector; text without any features maps to e_0.
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    vec = np.zeros(dim)
    for feat in _features(text):
        h = _feature_hash(feat)
        vec[(h >> 1) % dim] += 1.0 if h & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return vec / norm


class Provider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim)


class EmbeddingTable:
    """Immutable map from exact strings to unit-norm vectors of one dimension."""

    def __init__(self, dim: int, keys: list[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64).reshape(len(keys), dim)
        self.dim = dim
        self.keys = list(keys)
        self.matrix = matrix
        self._row = {}
        for i, k in enumerate(self.keys):
            if k in self._row:
                raise DuplicateKey(f"duplicate embedding key {k!r}")
            self._row[k] = i

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self._row

    def row(self, key: str) -> int:
        try:
            return self._row[key]
        except KeyError:
            raise MissingEmbedding(key) from None

    def get(self, key: str) -> np.ndarray:
        return self.matrix[self.row(key)]

    def rows(self, keys: Iterable[str]) -> np.ndarray:
        return np.array([self.row(k) for k in keys], dtype=np.int64)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim={self.dim}\n")
            for key, vec in zip(self.keys, self.matrix):
                raw = key.encode("utf-8")
                fh.write(f"{len(raw)}:{base64.b64encode(raw).decode('ascii')}\t")
                fh.write(" ".join(map(repr, vec.tolist())))
                fh.write("\n")


class TableEmbedder:
    """Provider backed by a loaded table; unknown strings are an error."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim

    def embed(self, text: str) -> np.ndarray:
        return self.table.get(text)


def load_embedding_table(path: str | Path) -> EmbeddingTable:
    keys: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        m = re.fullmatch(r"dim=(\d+)", header)
        if not m or int(m.group(1)) < 1:
            raise BadHeader(f"{path}: expected 'dim=<d>' header, got {header[:40]!r}")
        dim = int(m.group(1))
        seen: set[str] = set()
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                prefix, values = line.split("\t", 1)
                length, b64 = prefix.split(":", 1)
                raw = base64.b64decode(b64, validate=True)
                if len(raw) != int(length):
                    raise ValueError("length prefix does not match key")
                key = raw.decode("utf-8")
                vec = np.array(values.split(), dtype=np.float64)
            except ValueError as exc:
                raise BadHeader(f"{path}:{lineno}: malformed record ({exc})") from exc
            if vec.shape != (dim,):
                raise DimensionMismatch(f"{path}:{lineno}: {vec.size} values under dim={dim}")
            if key in seen:
                raise DuplicateKey(f"{path}:{lineno}: duplicate key {key!r}")
            if not np.all(np.isfinite(vec)):
                raise DimensionMismatch(f"{path}:{lineno}: non-finite value")
            norm = np.linalg.norm(vec)
            if abs(norm - 1.0) > NORM_TOL:
                log.warning("%s:%d: re-normalizing vector with norm %.6g", path, lineno, norm)
                vec = vec / norm if norm > 0 else np.eye(dim)[0]
            seen.add(key)
            keys.append(key)
            rows.append(vec)
    return EmbeddingTable(dim, keys, np.array(rows).reshape(len(rows), dim))


def embed_unique_strings(strings: Iterable[str], provider: Provider) -> EmbeddingTable:
    """Embed each distinct string once, in first-occurrence order."""
    keys = list(dict.fromkeys(strings))
    matrix = np.empty((len(keys), provider.dim))
    for i, key in enumerate(keys):
        vec = np.asarray(provider.embed(key), dtype=np.float64)
        if vec.shape != (provider.dim,):
            raise DimensionMismatch(f"provider returned shape {vec.shape} for {key!r}")
        matrix[i] = vec
    return EmbeddingTable(provider.dim, keys, matrix)


def display_key(display: str) -> str:
    """Key under which a candidate display string is embedded."""
    return display if display else EMPTY_DISPLAY
