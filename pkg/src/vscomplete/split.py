"""Publisher-holdout, type x publisher-bin stratified train/val/test splits."""

from __future__ import annotations

import csv
import math
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ValueSet
from .errors import InvalidRatios, MalformedDocument

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)
PUBLISHER_BIN_THRESHOLD = 50
MIN_STRATUM = 3
OTHER_BIN = "OTHER"


@dataclass
class ManifestRow:
    oid: str
    split: str
    rr_at_k: float
    vs_type: str
    publisher: str


class SplitManifest:
    def __init__(self, rows: list[ManifestRow]):
        self.rows = rows
        self._by_oid = {r.oid: r for r in rows}

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, oid: str) -> ManifestRow:
        return self._by_oid[oid]

    def __contains__(self, oid: str) -> bool:
        return oid in self._by_oid

    def oids(self, split: str) -> list[str]:
        return [r.oid for r in self.rows if r.split == split]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["oid", "split", "rr_at_k", "vs_type", "publisher"])
            for r in self.rows:
                w.writerow([r.oid, r.split, repr(r.rr_at_k), r.vs_type, r.publisher])

    @classmethod
    def read_csv(cls, path: str | Path) -> "SplitManifest":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["oid", "split", "rr_at_k", "vs_type", "publisher"]:
                raise MalformedDocument(f"{path}: unexpected manifest header {reader.fieldnames}")
            rows = []
            for lineno, rec in enumerate(reader, 2):
                if rec["split"] not in SPLITS:
                    raise MalformedDocument(f"{path}:{lineno}: unknown split {rec['split']!r}")
                rows.append(ManifestRow(rec["oid"], rec["split"], float(rec["rr_at_k"]), rec["vs_type"], rec["publisher"]))
        return cls(rows)


def publisher_bin(publisher: str, counts: dict[str, int], threshold: int = PUBLISHER_BIN_THRESHOLD) -> str:
    return publisher if counts.get(publisher, 0) >= threshold else OTHER_BIN


def largest_remainder(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Integer apportionment of ``n``; remainder ties go to the earlier split."""
    quotas = [n * r for r in ratios]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _stratum_rng(seed: int, key: tuple[str, str]) -> np.random.Generator:
    tag = zlib.crc32("\x1f".join(key).encode("utf-8"))
    return np.random.default_rng([seed, tag])


def assign_splits(
    sets: list[ValueSet],
    held_out_publishers: list[str] = (),
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 13,
    rr_at_k: dict[str, float] | None = None,
    bin_threshold: int = PUBLISHER_BIN_THRESHOLD,
) -> SplitManifest:
    """Assign each set to exactly one split; output rows follow corpus order."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    held = set(held_out_publishers)
    rr_at_k = rr_at_k or {}
    split_of: dict[str, str] = {}

    remaining = [vs for vs in sets if vs.publisher not in held]
    for vs in sets:
        if vs.publisher in held:
            split_of[vs.oid] = "test"

    counts = Counter(vs.publisher for vs in remaining)
    strata: dict[tuple[str, str], list[str]] = defaultdict(list)
    for vs in remaining:
        strata[(vs.vs_type, publisher_bin(vs.publisher, counts, bin_threshold))].append(vs.oid)

    for key in sorted(strata):
        members = strata[key]
        if len(members) < MIN_STRATUM:
            for oid in members:
                split_of[oid] = "train"
            continue
        shuffled = list(members)
        _stratum_rng(seed, key).shuffle(shuffled)
        start = 0
        for name, size in zip(SPLITS, largest_remainder(len(shuffled), ratios)):
            for oid in shuffled[start : start + size]:
                split_of[oid] = name
            start += size

    return SplitManifest(
        [ManifestRow(vs.oid, split_of[vs.oid], float(rr_at_k.get(vs.oid, 0.0)), vs.vs_type, vs.publisher) for vs in sets]
    )
