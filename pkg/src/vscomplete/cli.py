"""Command-line entry point: ``vscomplete <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline, plotting
from .errors import ConfigErrors, DataError, InvalidConfig
from .model import TrainConfig
from .persistence import read_header
from .synth import BENCHMARK_CONFIG, SynthConfig
from .theory import TheoryConfig, estimate_recovery

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("vscomplete")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "message": record.getMessage()})


def _setup_logging(level: str, json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read {path}: {exc}") from exc


def _parse_sweep(spec: str) -> list[int]:
    """``"100,200,400"`` or ``"start:stop:step"`` (stop inclusive)."""
    try:
        if ":" in spec:
            start, stop, step = (int(x) for x in spec.split(":"))
            return list(range(start, stop + 1, step))
        return [int(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --sweep value {spec!r}") from exc


# --- handlers ------------------------------------------------------------

def cmd_ingest(a):
    pipeline.stage_ingest(Path(a.fhir_dir), Path(a.out))


def cmd_gen_synth(a):
    raw = _load_json(a.config)
    if a.preset == "benchmark":
        raw = {**BENCHMARK_CONFIG, **raw}
    if a.seed is not None:
        raw["seed"] = a.seed
    pipeline.stage_gen_synth(SynthConfig.from_dict(raw), Path(a.out), apply_filter=not a.no_filter)


def cmd_stats(a):
    stats = pipeline.stage_stats(Path(a.corpus), Path(a.out), figures=not a.no_figures)
    print(json.dumps({k: stats[k] for k in ("set_count", "size_quantiles", "description_coverage",
                                             "single_system_fraction")}))


def cmd_embed(a):
    pipeline.stage_embed(Path(a.corpus), Path(a.out), a.provider, a.dim, Path(a.table) if a.table else None)


def cmd_index(a):
    pipeline.stage_index(Path(a.embs), Path(a.corpus), Path(a.out))


def cmd_pool(a):
    pipeline.stage_pool(Path(a.corpus), Path(a.index), Path(a.embs), a.k, Path(a.out))


def cmd_split(a):
    counts = pipeline.stage_split(Path(a.corpus), Path(a.pools) if a.pools else None, a.holdout or [], a.seed,
                                  Path(a.out))
    print(json.dumps(counts))


def cmd_features(a):
    pipeline.stage_features(Path(a.pools), Path(a.title_embs), Path(a.display_embs or a.title_embs), Path(a.out))


def cmd_train(a):
    raw = _load_json(a.config)
    for key in ("seed", "max_epochs", "batch_size", "learning_rate"):
        if getattr(a, key) is not None:
            raw[key] = getattr(a, key)
    result = pipeline.stage_train(Path(a.features), Path(a.manifest), TrainConfig.from_dict(raw), Path(a.out),
                                  figures=not a.no_figures)
    print(json.dumps(result))


def cmd_eval(a):
    report = pipeline.stage_eval(Path(a.model), Path(a.features), Path(a.pools), Path(a.manifest), Path(a.out),
                                 a.split, figures=not a.no_figures)
    print(json.dumps({"mlp_macro_f1": report["classifier"]["value_set_level"]["f1"],
                      "retrieval_only_macro_f1": report["retrieval_only"]["value_set_level"]["f1"],
                      "auroc": report["classifier"]["pair_level"]["auroc"]}))


def cmd_eval_predictions(a):
    report = pipeline.stage_eval_predictions(Path(a.predictions), Path(a.corpus),
                                             Path(a.manifest) if a.manifest else None, Path(a.out), a.split)
    print(json.dumps({"macro_f1": report["value_set_level"]["f1"], "hallucination_rate": report["hallucination_rate"]}))


def theory_configs(raw: dict | list) -> tuple[list[TheoryConfig], list[int] | None]:
    if isinstance(raw, list):
        return [TheoryConfig.from_dict(c) for c in raw], None
    if "configs" in raw:
        base = raw.get("defaults", {})
        return [TheoryConfig.from_dict({**base, **c}) for c in raw["configs"]], raw.get("sweep_n")
    return [TheoryConfig.from_dict(raw)], None


def cmd_simulate_theory(a):
    configs, sweep = theory_configs(_load_json(a.config) if a.config else {})
    if a.sweep:
        sweep = _parse_sweep(a.sweep)
    if a.trials is not None:
        configs = [dataclasses.replace(c, trials=a.trials) for c in configs]
    rows = []
    for cfg in configs:
        for n in (sweep or [cfg.n]):
            cfg_n = dataclasses.replace(cfg, n=int(n))
            result = estimate_recovery(cfg_n)
            rows.append(result.row())
            log.info("N=%d K=%d gamma=%g n=%d: direct %.4f (bound %.3g), pooled %.4f (bound %.3g), violations %d",
                     cfg_n.N, cfg_n.K, cfg_n.gamma, cfg_n.n, result.p_fail_direct_mc, result.bound_direct,
                     result.p_fail_rasc_mc, result.bound_rasc, result.dominance_violations)
    with open(a.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if not a.no_figures:
        plotting.plot_recovery_curves(rows, Path(a.out).with_suffix(".png"))


def cmd_run_all(a):
    overrides = {"workdir": a.workdir, "k": a.k, "dim": a.dim, "split_seed": a.split_seed,
                 "holdout": a.holdout, "provider": a.provider}
    if a.no_figures:
        overrides["figures"] = False
    if a.config:
        cfg = pipeline.validate_config(a.config, overrides)
    else:
        cfg = pipeline.validate_config({}, overrides)
    if a.train_seed is not None or a.max_epochs is not None:
        if a.train_seed is not None:
            cfg.train.seed = a.train_seed
        if a.max_epochs is not None:
            cfg.train.max_epochs = a.max_epochs
        cfg.train.validate()
    summary = pipeline.run_all(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_inspect(a):
    header = read_header(a.file)
    meta = dict(header.get("meta", {}))
    if "rows" in meta:
        meta["rows"] = f"<{len(meta['rows'])} rows>"
    if "ids" in meta:
        meta["ids"] = f"<{len(meta['ids'])} ids>"
    if "history" in meta:
        meta["history"] = f"<{len(meta['history'])} epochs>"
    print(json.dumps({"version": header["version"], "kind": header["kind"], "arrays": header["arrays"],
                      "payload_sha256": header["payload_sha256"], "meta": meta}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vscomplete", description="Retrieval-grounded value-set completion toolkit.")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--json-logs", action="store_true", help="emit logs as JSON lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a directory of FHIR ValueSet JSON files")
    p.add_argument("--fhir-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-synth", help="generate a seeded synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--preset", choices=("default", "benchmark"), default="default")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-filter", action="store_true", help="keep sets with fewer than 3 codes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("stats", help="corpus statistics as JSON + CSV tables")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("embed", help="embed every unique title and display string")
    p.add_argument("--corpus", required=True)
    p.add_argument("--provider", choices=("hash", "file"), default="hash")
    p.add_argument("--table", help="source table for --provider file")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build the exact title index")
    p.add_argument("--embs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("pool", help="retrieve top-K sets and build candidate pools")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--embs", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("split", help="assign train/val/test with publisher holdout")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pools")
    p.add_argument("--holdout", action="append")
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("features", help="assemble the pair feature matrix")
    p.add_argument("--pools", required=True)
    p.add_argument("--title-embs", required=True)
    p.add_argument("--display-embs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the MLP and tune its threshold")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pools", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-predictions", help="score externally generated code lists")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_predictions)

    p = sub.add_parser("simulate-theory", help="Monte Carlo check of the recovery bounds")
    p.add_argument("--config")
    p.add_argument("--sweep", help="n grid: '100,200,400' or 'start:stop:step'")
    p.add_argument("--trials", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_theory)

    p = sub.add_parser("run-all", help="run every stage with content-hash caching")
    p.add_argument("--config")
    p.add_argument("--workdir")
    p.add_argument("--k", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--provider", choices=("hash", "file"))
    p.add_argument("--split-seed", type=int)
    p.add_argument("--train-seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--holdout", action="append")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("inspect", help="print an artifact header")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level, args.json_logs)
    try:
        args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except pipeline.StageError as exc:
        log.error("stage %s failed: %s", exc.stage, exc.cause)
        return EXIT_DATA if isinstance(exc.cause, (DataError, OSError)) else EXIT_INTERNAL
    except ConfigErrors as exc:
        for err in exc.errors:
            log.error("config: %s", err)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
