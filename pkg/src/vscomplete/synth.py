"""Seeded synthetic value-set corpora with a realistic shape.

Each topic (e.g. "chronic nephropathy") owns one code catalogue per code
system. A value set picks a topic and a facet ("Medications" -> RxNorm,
"Lab Tests" -> LOINC, ...), draws a log-normal size and fills most of its
codes from its own catalogue, weighted so that a few core codes recur across
sets, and the remainder from neighbouring topics that share the same noun.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .corpus import CodeEntry, ValueSet, infer_value_set_type
from .errors import InvalidConfig

ADJECTIVES = ("chronic", "acute", "congenital", "recurrent", "severe", "juvenile", "hereditary", "secondary")
NOUNS = (
    "nephropathy", "asthma", "hepatitis", "arthritis", "anemia", "diabetes", "melanoma", "bronchitis",
    "cardiomyopathy", "pancreatitis", "neuropathy", "glaucoma", "leukemia", "dermatitis", "colitis",
    "osteoporosis", "hypertension", "epilepsy", "thyroiditis", "lymphoma", "sinusitis", "gastritis",
    "psoriasis", "myocarditis",
)
QUALIFIERS = (
    "left", "right", "bilateral", "mild", "moderate", "unspecified", "early", "late", "persistent",
    "localized", "generalized", "primary", "with complication", "without complication", "episode",
    "oral", "injectable", "topical", "extended release", "serum", "urine", "panel", "open", "laparoscopic",
)

# facet modifier, primary system, secondary system (used by multi-system sets), weight
FACETS = (
    ("Disorders", "SNOMED-CT", "ICD-10-CM", 0.30),
    ("Diagnosis", "ICD-10-CM", "SNOMED-CT", 0.25),
    ("Medications", "RxNorm", "HCPCS", 0.20),
    ("Lab Tests", "LOINC", "SNOMED-CT", 0.15),
    ("Procedures", "CPT", "ICD-10-PCS", 0.10),
)
FACET_TERMS = {
    "Disorders": "disorder",
    "Diagnosis": "diagnosis code",
    "Medications": "tablet",
    "Lab Tests": "measurement",
    "Procedures": "procedure",
}
TITLE_VARIANTS = ("", "", "", " (eCQM)", " Extended", " Grouping", " Codes")
LEAD_PUBLISHERS = ("Clinical Architecture", "CSTE Steward", "The Joint Commission", "NCQA", "Mathematica", "Lantana")


@dataclass
class SynthConfig:
    topic_count: int = 40
    sets_per_topic: int = 50
    seed: int = 7
    size_median: float = 9.0
    size_p95: float = 312.0
    catalogue_size: int = 400
    own_topic_fraction: float = 0.8
    popularity_exponent: float = 1.0
    multi_system_fraction: float = 0.15
    description_fraction: float = 0.196
    publisher_count: int = 80
    publisher_zipf: float = 0.8

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidConfig(f"unknown synthetic-corpus fields: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        problems = []
        if self.topic_count < 1:
            problems.append("topic_count must be >= 1")
        if self.sets_per_topic < 1:
            problems.append("sets_per_topic must be >= 1")
        if not 0 < self.size_median <= self.size_p95:
            problems.append("need 0 < size_median <= size_p95")
        if self.catalogue_size < 3:
            problems.append("catalogue_size must be >= 3")
        if not 0.7 <= self.own_topic_fraction <= 1.0:
            problems.append("own_topic_fraction must lie in [0.7, 1]")
        if not 0.0 <= self.multi_system_fraction <= 0.2:
            problems.append("multi_system_fraction must lie in [0, 0.2]")
        if not 0.0 <= self.description_fraction <= 1.0:
            problems.append("description_fraction must lie in [0, 1]")
        if self.publisher_count < 2 or self.publisher_zipf <= 0:
            problems.append("need publisher_count >= 2 and publisher_zipf > 0")
        if problems:
            raise InvalidConfig("; ".join(problems))

    @property
    def size_sigma(self) -> float:
        # log-normal spread putting the 95th percentile at size_p95
        return math.log(self.size_p95 / self.size_median) / 1.6448536269514722


# Small-catalogue preset used by the end-to-end benchmark: same median, a
# bounded tail so that candidate pools stay within desk-scale memory.
BENCHMARK_CONFIG = dict(topic_count=40, sets_per_topic=50, seed=7, size_median=9.0, size_p95=30.0, catalogue_size=36)


def topic_name(i: int) -> str:
    adj = ADJECTIVES[i % len(ADJECTIVES)]
    group = i // len(ADJECTIVES)
    noun = NOUNS[group % len(NOUNS)]
    cycle = group // len(NOUNS)
    return f"{adj} {noun}" + (f" type {cycle + 1}" if cycle else "")


def topic_neighbors(i: int, topic_count: int) -> list[int]:
    """Topics sharing the same noun; falls back to index neighbours."""
    group = i // len(ADJECTIVES)
    same = [j for j in range(group * len(ADJECTIVES), min((group + 1) * len(ADJECTIVES), topic_count)) if j != i]
    if same:
        return same
    return [j for j in (i - 1, i + 1) if 0 <= j < topic_count] or [i]


def _format_code(system: str, serial: int) -> str:
    if system == "ICD-10-CM":
        return f"{chr(65 + serial % 26)}{serial // 26 % 100:02d}.{serial // 2600}"
    if system == "LOINC":
        return f"{10000 + serial}-{serial % 10}"
    if system == "CPT":
        return f"{10000 + serial:05d}"
    if system == "ICD-10-PCS":
        return f"0{chr(65 + serial % 26)}{serial // 26:05d}"
    if system == "HCPCS":
        return f"{chr(65 + serial % 26)}{serial // 26:04d}"
    if system == "RxNorm":
        return str(100000 + serial)
    return str(10000000 + serial)


class _Catalogues:
    """Lazily built per-(topic, system) code catalogues."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self._cache: dict[tuple[int, str], list[CodeEntry]] = {}
        self._serial: dict[str, int] = {}
        weights = 1.0 / np.arange(1, cfg.catalogue_size + 1) ** cfg.popularity_exponent
        self.weights = weights / weights.sum()

    def get(self, topic: int, system: str) -> list[CodeEntry]:
        key = (topic, system)
        if key not in self._cache:
            name = topic_name(topic)
            term = next((FACET_TERMS[f] for f, s, _, _ in FACETS if s == system), "finding")
            entries = []
            for j in range(self.cfg.catalogue_size):
                serial = self._serial.get(system, 0)
                self._serial[system] = serial + 1
                qual = QUALIFIERS[j % len(QUALIFIERS)]
                display = f"{name} {term} {qual} {j // len(QUALIFIERS) + 1}"
                entries.append(CodeEntry(_format_code(system, serial), system, display))
            self._cache[key] = entries
        return self._cache[key]

    def sample(self, rng: np.random.Generator, topic: int, system: str, k: int) -> list[CodeEntry]:
        cat = self.get(topic, system)
        k = min(k, len(cat))
        if k <= 0:
            return []
        idx = rng.choice(len(cat), size=k, replace=False, p=self.weights)
        return [cat[i] for i in sorted(idx)]


def generate_synthetic_corpus(cfg: SynthConfig) -> list[ValueSet]:
    """Build a deterministic corpus of ``topic_count * sets_per_topic`` sets."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    cats = _Catalogues(cfg)
    # build all catalogues up front so code serials do not depend on draw order
    for t in range(cfg.topic_count):
        for _, system, secondary, _ in FACETS:
            cats.get(t, system)
            cats.get(t, secondary)

    publishers = list(LEAD_PUBLISHERS[: cfg.publisher_count])
    publishers += [f"Steward {i:03d}" for i in range(len(publishers), cfg.publisher_count)]
    pub_w = 1.0 / np.arange(1, cfg.publisher_count + 1) ** cfg.publisher_zipf
    pub_w /= pub_w.sum()
    facet_w = np.array([f[3] for f in FACETS])
    facet_w /= facet_w.sum()

    topics = np.repeat(np.arange(cfg.topic_count), cfg.sets_per_topic)
    rng.shuffle(topics)

    sets = []
    for i, topic in enumerate(topics.tolist()):
        modifier, system, secondary, _ = FACETS[rng.choice(len(FACETS), p=facet_w)]
        size = int(round(math.exp(rng.normal(math.log(cfg.size_median), cfg.size_sigma))))
        size = max(1, min(size, cfg.catalogue_size))
        n_own = max(1, math.ceil(cfg.own_topic_fraction * size))
        n_other = size - n_own

        multi = rng.random() < cfg.multi_system_fraction and n_own >= 2
        n_secondary = max(1, n_own // 3) if multi else 0
        codes = cats.sample(rng, topic, system, n_own - n_secondary)
        codes += cats.sample(rng, topic, secondary, n_secondary)
        if n_other:
            neigh = topic_neighbors(topic, cfg.topic_count)
            picks = rng.choice(len(neigh), size=n_other)
            for j, count in zip(*np.unique(picks, return_counts=True)):
                codes += cats.sample(rng, neigh[j], system, int(count))

        seen: set[tuple[str, str]] = set()
        unique = [c for c in codes if not (c.key in seen or seen.add(c.key))]

        variant = TITLE_VARIANTS[rng.integers(len(TITLE_VARIANTS))]
        title = f"{topic_name(topic).title()} {modifier}{variant}"
        described = rng.random() < cfg.description_fraction
        sets.append(
            ValueSet(
                oid=f"2.16.840.1.113762.1.4.{1000 + i}",
                title=title,
                publisher=publishers[rng.choice(cfg.publisher_count, p=pub_w)],
                description=f"Codes representing {title.lower()}." if described else "",
                vs_type=infer_value_set_type(title),
                codes=unique,
            )
        )
    return sets
