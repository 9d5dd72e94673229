"""Pipeline stages, configuration, and the cached end-to-end runner."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .corpus import corpus_stats, filter_corpus, ingest_fhir_dir, read_corpus, write_corpus
from .embed import (DEFAULT_DIM, EmbeddingTable, HashEmbedder, TableEmbedder, display_key, embed_unique_strings,
                    load_embedding_table)
from .errors import ConfigErrors, DataError, EmptySplit, InvalidConfig
from .evaluate import evaluate_classifier, read_predictions, score_external_predictions, write_report
from .features import FeatureMatrix, assemble_feature_matrix
from .index import VectorIndex, build_index
from .model import TrainConfig, init_model, load_model, predict, save_model, train, tune_threshold
from .features import feature_dim
from .persistence import file_digest
from .pool import build_all_pools, read_pools, write_pools
from .split import DEFAULT_RATIOS, SplitManifest, assign_splits
from .synth import BENCHMARK_CONFIG, SynthConfig, generate_synthetic_corpus

log = logging.getLogger(__name__)

DEFAULT_HOLDOUT = ["Clinical Architecture", "CSTE Steward"]
PATH_KEYS = {
    "corpus": "corpus.jsonl",
    "embeddings": "embs.tbl",
    "index": "index.bin",
    "pools": "pools.jsonl",
    "manifest": "manifest.csv",
    "features": "feats.bin",
    "model": "model.bin",
    "report": "report.json",
    "stats": "stats.json",
    "summary": "summary.json",
}


# --- individual stages ---------------------------------------------------

def stage_ingest(fhir_dir: Path, out: Path) -> dict:
    sets = ingest_fhir_dir(fhir_dir)
    kept = filter_corpus(sets)
    write_corpus(kept, out)
    log.info("ingest: %d value sets parsed, %d kept (>= 3 codes)", len(sets), len(kept))
    return {"parsed": len(sets), "kept": len(kept)}


def stage_gen_synth(cfg: SynthConfig, out: Path, apply_filter: bool = True) -> dict:
    sets = generate_synthetic_corpus(cfg)
    kept = filter_corpus(sets) if apply_filter else sets
    write_corpus(kept, out)
    log.info("gen-synth: %d value sets generated, %d written", len(sets), len(kept))
    return {"generated": len(sets), "kept": len(kept)}


def stage_stats(corpus: Path, out: Path, figures: bool = True) -> dict:
    stats = corpus_stats(read_corpus(corpus)).to_dict()
    Path(out).write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    _write_histogram_csvs(stats, Path(out))
    if figures:
        plotting.plot_size_histogram(stats, Path(out).with_suffix(".sizes.png"))
    return stats


def _write_histogram_csvs(stats: dict, out: Path) -> None:
    for name in ("size_quantiles", "size_histogram", "systems_per_set_histogram", "publisher_counts", "type_counts"):
        lines = ["key,count"] + [f"{_csv_field(k)},{v}" for k, v in stats[name].items()]
        out.with_name(f"{out.stem}.{name}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_field(value) -> str:
    value = str(value)
    return f'"{value}"' if "," in value or '"' in value else value


def corpus_strings(sets) -> list[str]:
    out = [vs.title for vs in sets]
    out += [display_key(c.display) for vs in sets for c in vs.codes]
    return out


def stage_embed(corpus: Path, out: Path, provider: str = "hash", dim: int = DEFAULT_DIM,
                table: Path | None = None) -> dict:
    sets = read_corpus(corpus)
    if provider == "hash":
        prov = HashEmbedder(dim)
    elif provider == "file":
        if table is None:
            raise InvalidConfig("provider 'file' needs a source embedding table")
        prov = TableEmbedder(load_embedding_table(table))
    else:
        raise InvalidConfig(f"unknown embedding provider {provider!r}")
    embs = embed_unique_strings(corpus_strings(sets), prov)
    embs.save(out)
    log.info("embed: %d unique strings, dim %d", len(embs), embs.dim)
    return {"strings": len(embs), "dim": embs.dim}


def stage_index(embeddings: Path, corpus: Path, out: Path) -> dict:
    index = build_index(load_embedding_table(embeddings), read_corpus(corpus))
    index.save(out)
    log.info("index: %d rows", len(index))
    return {"rows": len(index)}


def stage_pool(corpus: Path, index: Path, embeddings: Path, k: int, out: Path) -> dict:
    sets = read_corpus(corpus)
    pools = build_all_pools(sets, VectorIndex.load(index), load_embedding_table(embeddings), k)
    write_pools(pools, out)
    entries = sum(len(p.entries) for p in pools)
    log.info("pool: %d pools, %d candidate pairs, mean RR@%d %.3f", len(pools), entries, k,
             np.mean([p.rr_at_k for p in pools]))
    return {"pools": len(pools), "pairs": entries}


def stage_split(corpus: Path, pools: Path | None, holdout: list[str], seed: int, out: Path,
                ratios=DEFAULT_RATIOS) -> dict:
    sets = read_corpus(corpus)
    rr = {p.target_oid: p.rr_at_k for p in read_pools(pools)} if pools else None
    manifest = assign_splits(sets, holdout, tuple(ratios), seed, rr)
    manifest.write_csv(out)
    counts = {s: len(manifest.oids(s)) for s in ("train", "val", "test")}
    log.info("split: %s", counts)
    return counts


def stage_features(pools: Path, title_embs: Path, display_embs: Path, out: Path) -> dict:
    titles = load_embedding_table(title_embs)
    displays = titles if Path(display_embs) == Path(title_embs) else load_embedding_table(display_embs)
    fm = assemble_feature_matrix(read_pools(pools), titles, displays)
    fm.save(out)
    log.info("features: %d rows x %d", fm.X.shape[0], fm.X.shape[1])
    return {"rows": int(fm.X.shape[0]), "dim": int(fm.X.shape[1])}


def _split_rows(fm: FeatureMatrix, manifest: SplitManifest) -> dict[str, np.ndarray]:
    split_of = {r.oid: r.split for r in manifest.rows}
    labels = np.array([split_of.get(r[0], "") for r in fm.rows])
    missing = {r[0] for r, s in zip(fm.rows, labels) if s == ""}
    if missing:
        raise DataError(f"{len(missing)} feature rows belong to value sets absent from the manifest")
    return {s: np.flatnonzero(labels == s) for s in ("train", "val", "test")}


def stage_train(features: Path, manifest: Path, cfg: TrainConfig, out: Path, figures: bool = True) -> dict:
    fm = FeatureMatrix.load(features)
    rows = _split_rows(fm, SplitManifest.read_csv(manifest))
    if len(rows["train"]) == 0 or len(rows["val"]) == 0:
        raise EmptySplit("training needs non-empty train and validation splits")
    model = init_model((feature_dim(fm.dim), 512, 256, 64, 1), seed=cfg.seed, dropout=cfg.dropout)
    X_val, y_val = fm.X[rows["val"]], fm.y[rows["val"]]
    model, history = train(model, fm.X[rows["train"]], fm.y[rows["train"]], X_val, y_val, cfg)
    probs, _ = predict(model, 0.5, X_val)
    threshold = tune_threshold(probs, y_val)
    save_model(out, model, threshold, cfg, history)
    if figures:
        plotting.plot_training_history(history, Path(out).with_suffix(".history.png"))
    best = min(history, key=lambda h: h["val_loss"])
    log.info("train: %d epochs, best val loss %.5f at epoch %d, threshold %.4f", len(history), best["val_loss"],
             best["epoch"], threshold)
    return {"epochs": len(history), "best_epoch": best["epoch"], "threshold": threshold}


def stage_eval(model_path: Path, features: Path, pools_path: Path, manifest_path: Path, out: Path,
               split: str = "test", figures: bool = True) -> dict:
    model, meta = load_model(model_path)
    fm = FeatureMatrix.load(features)
    manifest = SplitManifest.read_csv(manifest_path)
    rows = _split_rows(fm, manifest)[split]
    wanted = set(manifest.oids(split))
    pools = [p for p in read_pools(pools_path) if p.target_oid in wanted]
    probs, _ = predict(model, meta["threshold"], fm.X[rows])
    report = evaluate_classifier(pools, probs, meta["threshold"], manifest)
    report["split"] = split
    write_report(report, out)
    if figures:
        for stratum in ("vs_type", "size_bin", "publisher_bin"):
            plotting.plot_strata(report, stratum, Path(out).with_suffix(f".{stratum}.png"))
    return report


def stage_eval_predictions(predictions: Path, corpus: Path, manifest_path: Path | None, out: Path,
                           split: str = "test") -> dict:
    sets = read_corpus(corpus)
    universe = {c.key for vs in sets for c in vs.codes}
    manifest = SplitManifest.read_csv(manifest_path) if manifest_path else None
    wanted = set(manifest.oids(split)) if manifest else {vs.oid for vs in sets}
    truth = {vs.oid: vs for vs in sets if vs.oid in wanted}
    report = score_external_predictions(read_predictions(predictions), truth, universe, manifest)
    write_report(report, out)
    return report


# --- configuration -------------------------------------------------------

@dataclass
class PipelineConfig:
    workdir: Path = Path("run")
    paths: dict[str, Path] = field(default_factory=dict)
    source: str = "synthetic"
    synthetic: SynthConfig = field(default_factory=lambda: SynthConfig(**BENCHMARK_CONFIG))
    fhir_dir: Path | None = None
    input_corpus: Path | None = None
    k: int = 10
    dim: int = DEFAULT_DIM
    provider: str = "hash"
    embedding_table: Path | None = None
    holdout: list[str] = field(default_factory=lambda: list(DEFAULT_HOLDOUT))
    split_seed: int = 13
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    train: TrainConfig = field(default_factory=TrainConfig)
    figures: bool = True

    def path(self, key: str) -> Path:
        return self.paths[key]


def validate_config(source: str | Path | dict, overrides: dict | None = None) -> PipelineConfig:
    """Check every field, apply defaults, and raise one :class:`ConfigErrors`
    listing all problems. ``overrides`` (e.g. from the command line) win over
    the file."""
    errors: list[str] = []
    if isinstance(source, dict):
        raw, base = dict(source), Path(".")
    else:
        base = Path(source).parent
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigErrors([f"cannot read config {source}: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigErrors(["config must be a JSON object"])
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    for key in sorted(set(raw) - known):
        errors.append(f"{key}: unknown field")

    cfg = PipelineConfig()
    workdir = Path(raw.get("workdir", "run"))
    cfg.workdir = workdir if workdir.is_absolute() else base / workdir

    def _int(name, minimum):
        val = raw.get(name, getattr(cfg, name))
        if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
            errors.append(f"{name}: must be an integer >= {minimum}, got {val!r}")
            return getattr(cfg, name)
        return val

    cfg.k = _int("k", 1)
    cfg.dim = _int("dim", 8)
    cfg.split_seed = _int("split_seed", 0)

    cfg.source = raw.get("source", cfg.source)
    if cfg.source not in ("synthetic", "fhir", "jsonl"):
        errors.append(f"source: must be one of synthetic, fhir, jsonl, got {cfg.source!r}")
    if cfg.source == "fhir":
        if not raw.get("fhir_dir"):
            errors.append("fhir_dir: required when source is 'fhir'")
        else:
            cfg.fhir_dir = base / raw["fhir_dir"]
    if cfg.source == "jsonl":
        if not raw.get("input_corpus"):
            errors.append("input_corpus: required when source is 'jsonl'")
        else:
            cfg.input_corpus = base / raw["input_corpus"]

    if "synthetic" in raw:
        try:
            cfg.synthetic = SynthConfig.from_dict({**BENCHMARK_CONFIG, **raw["synthetic"]})
        except (InvalidConfig, TypeError) as exc:
            errors.append(f"synthetic: {exc}")

    cfg.provider = raw.get("provider", cfg.provider)
    if cfg.provider not in ("hash", "file"):
        errors.append(f"provider: must be 'hash' or 'file', got {cfg.provider!r}")
    if cfg.provider == "file":
        if not raw.get("embedding_table"):
            errors.append("embedding_table: required when provider is 'file'")
        else:
            cfg.embedding_table = base / raw["embedding_table"]

    holdout = raw.get("holdout", cfg.holdout)
    if not isinstance(holdout, list) or not all(isinstance(h, str) for h in holdout):
        errors.append("holdout: must be a list of publisher names")
    else:
        cfg.holdout = holdout

    ratios = raw.get("ratios", list(cfg.ratios))
    if not (isinstance(ratios, list) and len(ratios) == 3 and all(isinstance(r, (int, float)) and r >= 0 for r in ratios)
            and abs(sum(ratios) - 1.0) < 1e-9):
        errors.append(f"ratios: must be three non-negative numbers summing to 1, got {ratios!r}")
    else:
        cfg.ratios = tuple(float(r) for r in ratios)

    if "train" in raw:
        try:
            cfg.train = TrainConfig.from_dict(raw["train"])
        except (InvalidConfig, TypeError) as exc:
            errors.append(f"train: {exc}")

    cfg.figures = bool(raw.get("figures", True))

    paths = raw.get("paths", {})
    if not isinstance(paths, dict):
        errors.append("paths: must be an object")
        paths = {}
    for key in sorted(set(paths) - set(PATH_KEYS)):
        errors.append(f"paths.{key}: unknown artifact")
    cfg.paths = {k: cfg.workdir / paths.get(k, default) for k, default in PATH_KEYS.items()}

    if errors:
        raise ConfigErrors(errors)
    return cfg


# --- cached runner -------------------------------------------------------

class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _fingerprint(inputs: list[Path], params: dict) -> str:
    h = hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode())
    for p in inputs:
        h.update(str(p.name).encode())
        h.update(file_digest(p).encode())
    return h.hexdigest()


def _stage_plan(cfg: PipelineConfig):
    """(name, inputs, outputs, params, action) in execution order."""
    p = cfg.path
    if cfg.source == "synthetic":
        corpus_stage = ("gen-synth", [], [p("corpus")], dataclasses.asdict(cfg.synthetic),
                        lambda: stage_gen_synth(cfg.synthetic, p("corpus")))
    elif cfg.source == "fhir":
        files = sorted(Path(cfg.fhir_dir).glob("*.json"))
        corpus_stage = ("ingest", files, [p("corpus")], {}, lambda: stage_ingest(cfg.fhir_dir, p("corpus")))
    else:
        corpus_stage = ("ingest", [cfg.input_corpus], [p("corpus")], {},
                        lambda: write_corpus(filter_corpus(read_corpus(cfg.input_corpus)), p("corpus")))
    emb_inputs = [p("corpus")] + ([cfg.embedding_table] if cfg.embedding_table else [])
    return [
        corpus_stage,
        ("stats", [p("corpus")], [p("stats")], {}, lambda: stage_stats(p("corpus"), p("stats"), cfg.figures)),
        ("embed", emb_inputs, [p("embeddings")], {"provider": cfg.provider, "dim": cfg.dim},
         lambda: stage_embed(p("corpus"), p("embeddings"), cfg.provider, cfg.dim, cfg.embedding_table)),
        ("index", [p("embeddings"), p("corpus")], [p("index")], {},
         lambda: stage_index(p("embeddings"), p("corpus"), p("index"))),
        ("pool", [p("corpus"), p("index"), p("embeddings")], [p("pools")], {"k": cfg.k},
         lambda: stage_pool(p("corpus"), p("index"), p("embeddings"), cfg.k, p("pools"))),
        ("split", [p("corpus"), p("pools")], [p("manifest")],
         {"holdout": cfg.holdout, "seed": cfg.split_seed, "ratios": cfg.ratios},
         lambda: stage_split(p("corpus"), p("pools"), cfg.holdout, cfg.split_seed, p("manifest"), cfg.ratios)),
        ("features", [p("pools"), p("embeddings")], [p("features")], {},
         lambda: stage_features(p("pools"), p("embeddings"), p("embeddings"), p("features"))),
        ("train", [p("features"), p("manifest")], [p("model")], dataclasses.asdict(cfg.train),
         lambda: stage_train(p("features"), p("manifest"), cfg.train, p("model"), cfg.figures)),
        ("eval", [p("model"), p("features"), p("pools"), p("manifest")], [p("report")], {},
         lambda: stage_eval(p("model"), p("features"), p("pools"), p("manifest"), p("report"), "test", cfg.figures)),
    ]


def run_all(cfg: PipelineConfig) -> dict:
    """Run every stage, skipping those whose recorded input fingerprint still
    matches and whose outputs exist; any stage downstream of one that ran is
    re-run. Returns the headline summary (also written to ``summary.json``)."""
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    stamps = cfg.workdir / ".stamps"
    stamps.mkdir(exist_ok=True)
    executed: list[str] = []
    upstream_ran = False
    for name, inputs, outputs, params, action in _stage_plan(cfg):
        stamp = stamps / f"{name}.json"
        try:
            fp = _fingerprint(inputs, params)
        except OSError as exc:
            raise StageError(name, exc) from exc
        fresh = (not upstream_ran and stamp.exists() and all(o.exists() for o in outputs)
                 and json.loads(stamp.read_text()).get("fingerprint") == fp)
        if fresh:
            log.info("%s: up to date, skipped", name)
            continue
        started = time.perf_counter()
        try:
            action()
        except Exception as exc:
            raise StageError(name, exc) from exc
        stamp.write_text(json.dumps({"fingerprint": fp}) + "\n")
        log.info("%s: done in %.1fs", name, time.perf_counter() - started)
        executed.append(name)
        upstream_ran = True

    report = json.loads(cfg.path("report").read_text())
    summary = headline_summary(report, cfg)
    cfg.path("summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["executed_stages"] = executed
    return summary


def headline_summary(report: dict, cfg: PipelineConfig) -> dict:
    cls, base = report["classifier"], report["retrieval_only"]
    return {
        "k": cfg.k,
        "embedding_dim": cfg.dim,
        "test_value_sets": report["n_value_sets"],
        "pool_positive_rate": report["pool_positive_rate"],
        "mean_rr_at_k": report["mean_rr_at_k"],
        "threshold": report["threshold"],
        "mlp_auroc": cls["pair_level"]["auroc"],
        "mlp_average_precision": cls["pair_level"]["average_precision"],
        "mlp_macro_f1": cls["value_set_level"]["f1"],
        "mlp_macro_precision": cls["value_set_level"]["precision"],
        "mlp_macro_recall": cls["value_set_level"]["recall"],
        "retrieval_only_macro_f1": base["value_set_level"]["f1"],
        "retrieval_only_macro_precision": base["value_set_level"]["precision"],
        "retrieval_only_macro_recall": base["value_set_level"]["recall"],
        "f1_gain_over_retrieval_only": cls["value_set_level"]["f1"] - base["value_set_level"]["f1"],
        "report": str(cfg.path("report").name),
    }
