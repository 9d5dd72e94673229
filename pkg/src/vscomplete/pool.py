"""Candidate pools: union of the codes of the K retrieved value sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import ValueSet
from .errors import EmptyPools, EmptyRetrieval, MalformedDocument


@dataclass
class CandidateEntry:
    code: str
    system: str
    display: str
    similarity: float
    source_oid: str
    label: int

    @property
    def key(self) -> tuple[str, str]:
        return (self.code, self.system)


@dataclass
class CandidatePool:
    target_oid: str
    entries: list[CandidateEntry] = field(default_factory=list)
    rr_at_k: float = 0.0
    target_title: str = ""
    truth_size: int = 0

    def keys(self) -> list[tuple[str, str]]:
        return [e.key for e in self.entries]

    @property
    def positives(self) -> int:
        return sum(e.label for e in self.entries)

    def to_record(self) -> dict:
        return {
            "target_oid": self.target_oid,
            "target_title": self.target_title,
            "truth_size": self.truth_size,
            "rr_at_k": self.rr_at_k,
            "entries": [
                {"code": e.code, "system": e.system, "display": e.display, "similarity": e.similarity,
                 "source_oid": e.source_oid, "label": e.label}
                for e in self.entries
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CandidatePool":
        entries = [
            CandidateEntry(str(e["code"]), str(e["system"]), str(e["display"]), float(e["similarity"]),
                           str(e["source_oid"]), int(e["label"]))
            for e in rec["entries"]
        ]
        return cls(str(rec["target_oid"]), entries, float(rec["rr_at_k"]), str(rec.get("target_title", "")),
                   int(rec.get("truth_size", 0)))


def build_candidate_pool(target: ValueSet, retrieved: list[tuple[ValueSet, float]]) -> CandidatePool:
    """Pool the codes of ``retrieved`` (in retrieval order) for ``target``.

    A code found in several sets keeps the highest similarity; on equal
    similarity the earlier-retrieved source (and its display) wins.
    """
    if not retrieved:
        raise EmptyRetrieval(f"no retrieved sets for {target.oid}")
    truth = target.code_keys()
    by_key: dict[tuple[str, str], CandidateEntry] = {}
    for vs, sim in retrieved:
        for c in vs.codes:
            cur = by_key.get(c.key)
            if cur is None:
                by_key[c.key] = CandidateEntry(c.code, c.system, c.display, float(sim), vs.oid, int(c.key in truth))
            elif sim > cur.similarity:
                cur.similarity, cur.display, cur.source_oid = float(sim), c.display, vs.oid
    entries = list(by_key.values())
    covered = sum(e.label for e in entries)
    return CandidatePool(target.oid, entries, covered / len(truth) if truth else 0.0, target.title, len(truth))


def pool_positive_rate(pools: list[CandidatePool]) -> float:
    total = sum(len(p.entries) for p in pools)
    if not pools or total == 0:
        raise EmptyPools("no candidate entries")
    return sum(p.positives for p in pools) / total


def build_all_pools(sets: list[ValueSet], index, titles, k: int = 10) -> list[CandidatePool]:
    """Retrieve and pool for every set in ``sets`` (output in corpus order)."""
    from .index import query_top_k_batch

    by_oid = {vs.oid: vs for vs in sets}
    queries = titles.matrix[titles.rows(vs.title for vs in sets)]
    hits = query_top_k_batch(index, queries, k, [vs.oid for vs in sets])
    return [build_candidate_pool(vs, [(by_oid[oid], sim) for oid, sim in hit]) for vs, hit in zip(sets, hits)]


def write_pools(pools: Iterable[CandidatePool], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pools:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False))
            fh.write("\n")


def read_pools(path: str | Path) -> list[CandidatePool]:
    pools = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pools.append(CandidatePool.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedDocument(f"{path}:{lineno}: bad pool record ({exc})") from exc
    return pools
