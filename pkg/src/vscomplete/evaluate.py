"""Evaluation reports for pooled classifiers and externally generated code lists."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ValueSet, normalize_system_uri, size_bin_label, SIZE_BINS
from .errors import MalformedDocument, MissingManifestRow
from .metrics import auroc, average_precision, macro_aggregate, pair_precision
from .pool import CandidatePool, pool_positive_rate
from .split import SplitManifest, publisher_bin

log = logging.getLogger(__name__)

SIZE_BIN_LABELS = tuple(size_bin_label(lo) for lo, _ in SIZE_BINS)


@dataclass
class PredictionSet:
    oid: str
    predicted: list[tuple[str, str]] = field(default_factory=list)


def prf_from_counts(tp: int, n_pred: int, n_true: int) -> tuple[float, float, float]:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def truth_size_from_pool(pool: CandidatePool) -> int | None:
    """|codes(target)| as recorded in the pool, else recovered from RR@K."""
    if pool.truth_size:
        return pool.truth_size
    if pool.rr_at_k <= 0:
        return None
    return int(round(pool.positives / pool.rr_at_k))


def retrieval_only_baseline(pools: list[CandidatePool]) -> list[np.ndarray]:
    """Predict every pool entry as a member."""
    return [np.ones(len(p.entries), dtype=bool) for p in pools]


def pool_set_scores(pools: list[CandidatePool], decisions: list[np.ndarray],
                    truth_sizes: dict[str, int | None]) -> dict[str, tuple[float, float, float]]:
    out = {}
    for p, d in zip(pools, decisions):
        labels = np.fromiter((e.label for e in p.entries), dtype=bool, count=len(p.entries))
        tp = int((labels & d).sum())
        n_true = truth_sizes.get(p.target_oid)
        if n_true is None:
            # no pooled positives: recall and precision are both zero regardless of size
            out[p.target_oid] = (0.0, 0.0, 0.0)
        else:
            out[p.target_oid] = prf_from_counts(tp, int(d.sum()), n_true)
    return out


def stratified_report(per_set: dict[str, tuple[float, float, float]], manifest: SplitManifest,
                      truth_sizes: dict[str, int | None], bin_threshold: int = 50) -> dict:
    """Macro blocks by value-set type, true-size bin and publisher bin."""
    for oid in per_set:
        if oid not in manifest:
            raise MissingManifestRow(f"value set {oid} is not in the manifest")
    counts = Counter(r.publisher for r in manifest.rows)
    groups: dict[str, dict[str, list]] = {"vs_type": defaultdict(list), "size_bin": defaultdict(list),
                                          "publisher_bin": defaultdict(list)}
    for oid, prf in per_set.items():
        row = manifest[oid]
        size = truth_sizes.get(oid)
        groups["vs_type"][row.vs_type].append(prf)
        groups["size_bin"][size_bin_label(size) if size else "unknown"].append(prf)
        groups["publisher_bin"][publisher_bin(row.publisher, counts, bin_threshold)].append(prf)
    return {name: {k: macro_aggregate(v) for k, v in sorted(g.items())} for name, g in groups.items()}


def rr1_precision(per_set: dict[str, tuple[float, float, float]], rr: dict[str, float]) -> dict:
    subset = [per_set[oid][0] for oid in per_set if rr.get(oid) == 1.0]
    return {"precision": float(np.mean(subset)) if subset else None, "n": len(subset)}


def evaluate_pools(pools: list[CandidatePool], scores: np.ndarray | None, decisions: list[np.ndarray],
                   manifest: SplitManifest, truth_sizes: dict[str, int | None]) -> dict:
    """Report block for one method over ``pools``; ``scores`` enables pair metrics."""
    labels = np.concatenate([[e.label for e in p.entries] for p in pools]).astype(bool)
    flat = np.concatenate(decisions) if decisions else np.empty(0, dtype=bool)
    per_set = pool_set_scores(pools, decisions, truth_sizes)
    block = {
        "value_set_level": macro_aggregate(list(per_set.values())),
        "pair_precision": pair_precision(flat, labels),
        "strata": stratified_report(per_set, manifest, truth_sizes),
        "rr1_precision": rr1_precision(per_set, {p.target_oid: p.rr_at_k for p in pools}),
    }
    if scores is not None:
        block["pair_level"] = {"auroc": auroc(scores, labels), "average_precision": average_precision(scores, labels),
                               "n_pairs": int(len(labels))}
    return block


def evaluate_classifier(pools: list[CandidatePool], probs: np.ndarray, threshold: float, manifest: SplitManifest,
                        truth_sizes: dict[str, int | None] | None = None) -> dict:
    """Classifier and retrieval-only blocks over the same pools."""
    if truth_sizes is None:
        truth_sizes = {p.target_oid: truth_size_from_pool(p) for p in pools}
    lengths = np.cumsum([0] + [len(p.entries) for p in pools])
    decisions = [probs[a:b] >= threshold for a, b in zip(lengths[:-1], lengths[1:])]
    return {
        "n_value_sets": len(pools),
        "pool_positive_rate": pool_positive_rate(pools),
        "mean_rr_at_k": float(np.mean([p.rr_at_k for p in pools])),
        "threshold": threshold,
        "classifier": evaluate_pools(pools, probs, decisions, manifest, truth_sizes),
        "retrieval_only": evaluate_pools(pools, None, retrieval_only_baseline(pools), manifest, truth_sizes),
    }


# --- external generator outputs ------------------------------------------

def read_predictions(path: str | Path) -> list[PredictionSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs = [(str(p["code"]), normalize_system_uri(str(p["system"]))) for p in rec["predictions"]]
                out.append(PredictionSet(str(rec["oid"]), list(dict.fromkeys(pairs))))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedDocument(f"{path}:{lineno}: bad prediction record ({exc})") from exc
    return out


def write_predictions(preds: list[PredictionSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({"oid": p.oid, "predictions": [{"code": c, "system": s} for c, s in p.predicted]}))
            fh.write("\n")


def score_external_predictions(predictions: list[PredictionSet], truth: dict[str, ValueSet],
                               universe: set[tuple[str, str]], manifest: SplitManifest | None = None) -> dict:
    """Score code lists against ``truth``; sets without predictions score zero.

    ``universe`` is every (code, system) pair of the evaluation corpus; the
    hallucination rate is the share of predicted pairs outside it.
    """
    per_set: dict[str, tuple[float, float, float]] = {}
    total = absent = 0
    by_oid: dict[str, PredictionSet] = {}
    for p in predictions:
        pairs = list(dict.fromkeys((c, normalize_system_uri(s)) for c, s in p.predicted))
        total += len(pairs)
        absent += sum(1 for pair in pairs if pair not in universe)
        if p.oid not in truth:
            log.warning("predictions for unknown value set %s scored as (0, 0, 0)", p.oid)
            per_set[p.oid] = (0.0, 0.0, 0.0)
            continue
        by_oid.setdefault(p.oid, PredictionSet(p.oid)).predicted.extend(pairs)
    for oid, vs in truth.items():
        pred = set(by_oid[oid].predicted) if oid in by_oid else set()
        true = vs.code_keys()
        per_set[oid] = prf_from_counts(len(pred & true), len(pred), len(true))

    report = {
        "n_value_sets": len(per_set),
        "value_set_level": macro_aggregate(list(per_set.values())),
        "hallucination_rate": absent / total if total else 0.0,
        "n_predicted_pairs": total,
    }
    if manifest is not None:
        known = {oid: prf for oid, prf in per_set.items() if oid in truth}
        sizes = {oid: len(truth[oid].codes) for oid in known}
        report["strata"] = stratified_report(known, manifest, sizes)
        report["rr1_precision"] = rr1_precision(known, {oid: manifest[oid].rr_at_k for oid in known})
    return report


def write_report(report: dict, path: str | Path) -> list[Path]:
    """Write ``report`` as JSON plus one flat CSV per stratification; returns CSV paths."""
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = []
    for method, block in _strata_blocks(report):
        for name, strata in block.items():
            out = path.with_name(f"{path.stem}.{method + '.' if method else ''}{name}.csv")
            with open(out, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["stratum", "n", "precision", "recall", "f1", "se_f1"])
                for key, m in strata.items():
                    w.writerow([key, m["n"], m["precision"], m["recall"], m["f1"], m["se_f1"]])
            written.append(out)
    return written


def _strata_blocks(report: dict):
    if "strata" in report:
        yield "", report["strata"]
    for method in ("classifier", "retrieval_only"):
        if method in report and "strata" in report[method]:
            yield method, report[method]["strata"]
