import json
import shutil

import pytest

from vscomplete import pipeline
from vscomplete.errors import ConfigErrors
from vscomplete.pipeline import run_all, validate_config

SMALL = {
    "synthetic": {"topic_count": 6, "sets_per_topic": 20, "seed": 3, "size_p95": 20.0, "catalogue_size": 24},
    "dim": 32,
    "train": {"max_epochs": 3, "batch_size": 256, "learning_rate": 1e-3},
    "figures": False,
}


def small_config(workdir, **extra):
    return validate_config({**SMALL, "workdir": str(workdir), **extra})


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("run")
    summary = run_all(small_config(workdir))
    return workdir, summary


def test_defaults_applied():
    cfg = validate_config({})
    assert cfg.k == 10 and cfg.dim == 768 and cfg.split_seed == 13
    assert cfg.holdout == ["Clinical Architecture", "CSTE Steward"]
    assert cfg.path("model").name == "model.bin"


def test_k_zero_names_field():
    with pytest.raises(ConfigErrors) as err:
        validate_config({"k": 0})
    assert any(e.startswith("k:") for e in err.value.errors)


def test_errors_are_aggregated():
    with pytest.raises(ConfigErrors) as err:
        validate_config({"k": 0, "dim": "big", "provider": "neural", "bogus": 1, "ratios": [0.5, 0.5, 0.5]})
    fields = {e.split(":")[0] for e in err.value.errors}
    assert fields == {"k", "dim", "provider", "bogus", "ratios"}


def test_conditional_requirements():
    with pytest.raises(ConfigErrors) as err:
        validate_config({"source": "fhir", "provider": "file"})
    assert {e.split(":")[0] for e in err.value.errors} == {"fhir_dir", "embedding_table"}


def test_overrides_beat_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"k": 5, "dim": 64}))
    cfg = validate_config(tmp_path / "c.json", {"k": 7, "dim": None})
    assert cfg.k == 7 and cfg.dim == 64
    assert cfg.workdir == tmp_path / "run"


def test_run_produces_report_and_summary(finished_run):
    workdir, summary = finished_run
    assert summary["executed_stages"] == ["gen-synth", "stats", "embed", "index", "pool", "split", "features",
                                          "train", "eval"]
    for name in ("corpus.jsonl", "embs.tbl", "index.bin", "pools.jsonl", "manifest.csv", "feats.bin", "model.bin",
                 "report.json", "summary.json", "stats.json"):
        assert (workdir / name).exists(), name
    assert 0.0 <= summary["mlp_auroc"] <= 1.0
    assert summary["retrieval_only_macro_recall"] == pytest.approx(summary["mean_rr_at_k"], abs=1e-12)


def test_second_run_skips_everything(finished_run):
    workdir, _ = finished_run
    before = (workdir / "report.json").read_bytes()
    again = run_all(small_config(workdir))
    assert again["executed_stages"] == []
    assert (workdir / "report.json").read_bytes() == before


def test_deleting_model_reruns_train_and_eval_only(finished_run, tmp_path):
    src, _ = finished_run
    workdir = tmp_path / "copy"
    shutil.copytree(src, workdir)
    before = (workdir / "report.json").read_bytes()
    (workdir / "model.bin").unlink()
    summary = run_all(small_config(workdir))
    assert summary["executed_stages"] == ["train", "eval"]
    assert (workdir / "report.json").read_bytes() == before


def test_changing_k_reruns_from_pool(finished_run, tmp_path):
    src, _ = finished_run
    workdir = tmp_path / "copy"
    shutil.copytree(src, workdir)
    summary = run_all(small_config(workdir, k=5))
    assert summary["executed_stages"] == ["pool", "split", "features", "train", "eval"]


def test_independent_runs_are_byte_identical(finished_run, tmp_path):
    src, _ = finished_run
    run_all(small_config(tmp_path))
    for name in ("report.json", "manifest.csv", "pools.jsonl", "summary.json"):
        assert (tmp_path / name).read_bytes() == (src / name).read_bytes(), name


def test_malformed_jsonl_source_fails_in_ingest(tmp_path, finished_run):
    src, _ = finished_run
    lines = (src / "corpus.jsonl").read_text().splitlines()
    lines.insert(4, "{oops")
    (tmp_path / "in.jsonl").write_text("\n".join(lines) + "\n")
    cfg = small_config(tmp_path / "w", source="jsonl", input_corpus=str(tmp_path / "in.jsonl"))
    with pytest.raises(pipeline.StageError) as err:
        run_all(cfg)
    assert err.value.stage == "ingest"
    assert "in.jsonl:5" in str(err.value)
