"""Value-set corpus: records, FHIR ingestion, filtering, typing and statistics."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    DataError,
    EmptyCorpus,
    MalformedDocument,
    MissingExpansion,
    MissingTitle,
)

log = logging.getLogger(__name__)

VS_TYPES = (
    "Condition/Clinical",
    "Condition/Diagnosis",
    "Medication",
    "Lab/Observation",
    "Procedure",
    "Other",
)

MIN_SET_SIZE = 3

# Canonical short forms. Keys are matched after stripping a trailing slash.
SYSTEM_ALIASES: dict[str, str] = {
    "http://snomed.info/sct": "SNOMED-CT",
    "urn:oid:2.16.840.1.113883.6.96": "SNOMED-CT",
    "SNOMED-CT": "SNOMED-CT",
    "SNOMEDCT": "SNOMED-CT",
    "SNOMEDCT_US": "SNOMED-CT",
    "http://hl7.org/fhir/sid/icd-10-cm": "ICD-10-CM",
    "urn:oid:2.16.840.1.113883.6.90": "ICD-10-CM",
    "ICD-10-CM": "ICD-10-CM",
    "ICD10CM": "ICD-10-CM",
    "http://www.nlm.nih.gov/research/umls/rxnorm": "RxNorm",
    "urn:oid:2.16.840.1.113883.6.88": "RxNorm",
    "RxNorm": "RxNorm",
    "RXNORM": "RxNorm",
    "http://loinc.org": "LOINC",
    "urn:oid:2.16.840.1.113883.6.1": "LOINC",
    "LOINC": "LOINC",
    "http://www.ama-assn.org/go/cpt": "CPT",
    "urn:oid:2.16.840.1.113883.6.12": "CPT",
    "CPT": "CPT",
    "http://www.cms.gov/Medicare/Coding/ICD10": "ICD-10-PCS",
    "urn:oid:2.16.840.1.113883.6.4": "ICD-10-PCS",
    "ICD-10-PCS": "ICD-10-PCS",
    "ICD10PCS": "ICD-10-PCS",
    "https://www.cms.gov/Medicare/Coding/HCPCSReleaseCodeSets": "HCPCS",
    "http://www.cms.gov/Medicare/Coding/HCPCSReleaseCodeSets": "HCPCS",
    "urn:oid:2.16.840.1.113883.6.285": "HCPCS",
    "HCPCS": "HCPCS",
}


def normalize_system_uri(uri: str) -> str:
    """Map a code-system URI or alias to its canonical short form.

    Unknown inputs are returned unchanged, so the function is idempotent.
    """
    return SYSTEM_ALIASES.get(uri.rstrip("/"), SYSTEM_ALIASES.get(uri, uri))


@dataclass(frozen=True)
class CodeEntry:
    code: str
    system: str
    display: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.code, self.system)


@dataclass
class ValueSet:
    oid: str
    title: str
    publisher: str = ""
    description: str = ""
    vs_type: str = "Other"
    codes: list[CodeEntry] = field(default_factory=list)

    def code_keys(self) -> set[tuple[str, str]]:
        return {c.key for c in self.codes}

    def to_record(self) -> dict:
        return {
            "oid": self.oid,
            "title": self.title,
            "description": self.description,
            "publisher": self.publisher,
            "vs_type": self.vs_type,
            "codes": [{"code": c.code, "system": c.system, "display": c.display} for c in self.codes],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ValueSet":
        try:
            codes = [CodeEntry(str(c["code"]), str(c["system"]), str(c.get("display") or "")) for c in rec["codes"]]
            vs = cls(
                oid=str(rec["oid"]),
                title=str(rec["title"]),
                publisher=str(rec.get("publisher") or ""),
                description=str(rec.get("description") or ""),
                vs_type=str(rec.get("vs_type") or "Other"),
                codes=codes,
            )
        except (KeyError, TypeError) as exc:
            raise MalformedDocument(f"corpus record missing field: {exc}") from exc
        if vs.vs_type not in VS_TYPES:
            raise MalformedDocument(f"unknown vs_type {vs.vs_type!r} for {vs.oid}")
        return vs


def _dedup_codes(codes: Iterable[CodeEntry], oid: str) -> list[CodeEntry]:
    seen: set[tuple[str, str]] = set()
    out = []
    for c in codes:
        if c.key in seen:
            log.warning("value set %s: duplicate code %s|%s dropped", oid, c.code, c.system)
            continue
        seen.add(c.key)
        out.append(c)
    return out


_OID_RE = re.compile(r"(\d+(?:\.\d+)+)$")


def _oid_from_url(url: str) -> str | None:
    for segment in reversed(re.split(r"[/:]", url)):
        m = _OID_RE.fullmatch(segment)
        if m:
            return m.group(1)
    return None


def parse_fhir_valueset(document: str | dict) -> ValueSet:
    """Parse one FHIR ValueSet (with expansion) into a :class:`ValueSet`."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict) or doc.get("resourceType") != "ValueSet":
        raise MalformedDocument("resourceType is not ValueSet")

    oid = _oid_from_url(doc["url"]) if isinstance(doc.get("url"), str) else None
    oid = oid or doc.get("id")
    if not oid:
        raise MalformedDocument("ValueSet has neither an OID-bearing url nor an id")
    title = doc.get("title") or doc.get("name")
    if not title:
        raise MissingTitle(f"ValueSet {oid} has no title or name")
    contains = (doc.get("expansion") or {}).get("contains")
    if not contains:
        raise MissingExpansion(f"ValueSet {oid} has no expansion.contains")

    codes = []
    for item in _flatten_contains(contains):
        if not item.get("code") or not item.get("system"):
            continue
        codes.append(CodeEntry(str(item["code"]), normalize_system_uri(str(item["system"])), str(item.get("display") or "")))
    return ValueSet(
        oid=str(oid),
        title=str(title),
        publisher=str(doc.get("publisher") or ""),
        description=str(doc.get("description") or ""),
        vs_type=infer_value_set_type(str(title)),
        codes=_dedup_codes(codes, str(oid)),
    )


def _flatten_contains(items: list[dict]) -> Iterable[dict]:
    # expansion.contains may nest
    for item in items:
        yield item
        if item.get("contains"):
            yield from _flatten_contains(item["contains"])


def to_fhir_valueset(vs: ValueSet) -> dict:
    """Inverse of :func:`parse_fhir_valueset` for canonical records."""
    return {
        "resourceType": "ValueSet",
        "id": vs.oid,
        "title": vs.title,
        "publisher": vs.publisher,
        "description": vs.description,
        "expansion": {"contains": [{"system": c.system, "code": c.code, "display": c.display} for c in vs.codes]},
    }


def filter_corpus(sets: list[ValueSet]) -> list[ValueSet]:
    return [vs for vs in sets if len(vs.codes) >= MIN_SET_SIZE]


# Ordered by priority; first matching rule wins. Each rule has exact words and
# word suffixes, compared case-insensitively against the title's word tokens.
TYPE_RULES: tuple[tuple[str, frozenset[str], tuple[str, ...]], ...] = (
    (
        "Medication",
        frozenset({"medication", "medications", "drug", "drugs", "rx", "pharmacologic", "pharmacotherapy",
                   "insulin", "insulins", "antibiotic", "antibiotics", "vaccine", "vaccines", "immunization",
                   "immunizations", "therapy", "therapies"}),
        ("statin", "statins", "pril", "sartan", "olol", "mab", "cillin", "mycin", "azole", "prazole", "vir"),
    ),
    (
        "Lab/Observation",
        frozenset({"lab", "labs", "laboratory", "test", "tests", "testing", "assay", "assays", "result",
                   "results", "observation", "observations", "panel", "measurement", "screening"}),
        (),
    ),
    (
        "Procedure",
        frozenset({"procedure", "procedures", "surgery", "surgeries", "surgical", "operation", "transplant",
                   "replacement", "imaging", "intervention", "interventions"}),
        ("ectomy", "ectomies", "oscopy", "oscopies", "otomy", "plasty", "ostomy"),
    ),
    (
        "Condition/Diagnosis",
        frozenset({"diagnosis", "diagnoses", "dx"}),
        (),
    ),
    (
        "Condition/Clinical",
        frozenset({"disease", "diseases", "disorder", "disorders", "condition", "conditions", "syndrome",
                   "syndromes", "infection", "infections", "cancer", "cancers", "neoplasm", "neoplasms",
                   "injury", "injuries", "diabetes", "asthma", "hypertension", "pregnancy", "failure",
                   "fracture", "fractures", "sepsis", "stroke", "dementia", "depression", "obesity", "tumor"}),
        ("itis", "emia", "pathy", "osis", "oma", "algia"),
    ),
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def infer_value_set_type(title: str) -> str:
    words = _WORD_RE.findall(title.lower())
    for vs_type, exact, suffixes in TYPE_RULES:
        for w in words:
            if w in exact or (suffixes and len(w) > 4 and w.endswith(suffixes)):
                return vs_type
    return "Other"


@dataclass
class CorpusStats:
    set_count: int
    size_quantiles: dict[int, int]
    description_coverage: float
    single_system_fraction: float
    systems_per_set_histogram: dict[int, int]
    publisher_counts: dict[str, int]
    type_counts: dict[str, int]
    size_histogram: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "set_count": self.set_count,
            "size_quantiles": {str(k): v for k, v in self.size_quantiles.items()},
            "description_coverage": self.description_coverage,
            "single_system_fraction": self.single_system_fraction,
            "systems_per_set_histogram": {str(k): v for k, v in self.systems_per_set_histogram.items()},
            "publisher_counts": self.publisher_counts,
            "type_counts": self.type_counts,
            "size_histogram": self.size_histogram,
        }


QUANTILES = (0, 5, 25, 50, 75, 95, 99, 100)
SIZE_BINS = ((1, 5), (6, 15), (16, 50), (51, 150), (151, None))


def size_bin_label(size: int) -> str:
    for lo, hi in SIZE_BINS:
        if hi is None:
            if size >= lo:
                return f">{lo - 1}"
        elif lo <= size <= hi:
            return f"{lo}-{hi}"
    return "0"


def nearest_rank(sorted_values: list[int], pct: float) -> int:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[rank - 1]


def corpus_stats(sets: list[ValueSet]) -> CorpusStats:
    if not sets:
        raise EmptyCorpus("cannot summarize an empty corpus")
    n = len(sets)
    sizes = sorted(len(vs.codes) for vs in sets)
    systems_per_set = Counter(len({c.system for c in vs.codes}) for vs in sets)
    type_counts = Counter(vs.vs_type for vs in sets)
    publishers = Counter(vs.publisher for vs in sets)
    size_hist = Counter(size_bin_label(len(vs.codes)) for vs in sets)
    return CorpusStats(
        set_count=n,
        size_quantiles={q: nearest_rank(sizes, q) for q in QUANTILES},
        description_coverage=sum(1 for vs in sets if vs.description.strip()) / n,
        single_system_fraction=systems_per_set.get(1, 0) / n,
        systems_per_set_histogram=dict(sorted(systems_per_set.items())),
        publisher_counts=dict(sorted(publishers.items(), key=lambda kv: (-kv[1], kv[0]))),
        type_counts={t: type_counts.get(t, 0) for t in VS_TYPES},
        size_histogram={label: size_hist.get(label, 0) for label in (size_bin_label(lo) for lo, _ in SIZE_BINS)},
    )


# --- canonical line-delimited JSON ---------------------------------------

def read_corpus(path: str | Path) -> list[ValueSet]:
    """Read a canonical corpus; errors name the offending line number."""
    sets = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vs = ValueSet.from_record(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedDocument(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            except DataError as exc:
                raise MalformedDocument(f"{path}:{lineno}: {exc}") from exc
            if vs.oid in seen:
                raise MalformedDocument(f"{path}:{lineno}: duplicate oid {vs.oid}")
            seen.add(vs.oid)
            vs.codes = _dedup_codes(vs.codes, vs.oid)
            sets.append(vs)
    return sets


def write_corpus(sets: Iterable[ValueSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for vs in sets:
            fh.write(json.dumps(vs.to_record(), ensure_ascii=False, sort_keys=False))
            fh.write("\n")


def ingest_fhir_dir(directory: str | Path) -> list[ValueSet]:
    """Parse every ``*.json`` ValueSet under ``directory`` (sorted by name).

    Documents without an expansion are excluded with a warning; other parse
    failures are fatal and name the file. Filtering is left to the caller.
    """
    sets = []
    seen: set[str] = set()
    for path in sorted(Path(directory).glob("*.json")):
        try:
            vs = parse_fhir_valueset(path.read_text(encoding="utf-8"))
        except MissingExpansion as exc:
            log.warning("%s: %s; skipped", path.name, exc)
            continue
        except DataError as exc:
            raise type(exc)(f"{path.name}: {exc}") from exc
        if vs.oid in seen:
            raise MalformedDocument(f"{path.name}: duplicate oid {vs.oid}")
        seen.add(vs.oid)
        sets.append(vs)
    return sets
