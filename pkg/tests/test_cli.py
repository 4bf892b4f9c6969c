import json

import pytest

from conftest import write_run_config
from tripkg.cli import main, sha256_file
from tripkg.config import load_config
from tripkg.errors import ConfigError


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_run_config(root)
    assert main(["pipeline", "--synth", "--config", str(cfg), "--baselines", "random", "hotness", "md_svd",
                 "cf_user", "epr", "pepr"]) == 0
    return root, cfg


def test_pipeline_artifacts(pipeline_run):
    root, _ = pipeline_run
    out = root / "out"
    for name in ("observed.csv", "future.csv", "profiles.csv", "graph.tkg", "model.npz", "train_log.jsonl",
                 "rankings_embedding.csv", "rankings_combined.csv", "rankings_random.csv"):
        assert (out / name).exists(), name
    report = json.loads((out / "eval" / "embedding" / "report.json").read_text())
    assert report["method"] == "embedding"
    assert report["counts"]["pairs"] > 0
    for method in ("hotness", "md_svd", "cf_user", "epr", "pepr"):
        assert (out / "eval" / method / "U.csv").exists()


def test_manifest_hash_chain(pipeline_run):
    root, _ = pipeline_run
    out = root / "out"
    ev = json.loads((out / "eval" / "embedding" / "evaluate.manifest.json").read_text())
    tr = json.loads((out / "train.manifest.json").read_text())
    bg = json.loads((out / "build-graph.manifest.json").read_text())
    assert ev["inputs"]["model"]["sha256"] == tr["outputs"]["model"]["sha256"] == sha256_file(out / "model.npz")
    assert tr["inputs"]["graph"]["sha256"] == bg["outputs"]["graph"]["sha256"] == sha256_file(out / "graph.tkg")


def test_evaluate_rerun_identical(pipeline_run):
    root, cfg = pipeline_run
    d = root / "out" / "eval" / "embedding"
    before = {n: (d / n).read_bytes() for n in ("report.json", "U.csv", "H.csv", "iprime.csv")}
    assert main(["evaluate", "--config", str(cfg)]) == 0
    assert {n: (d / n).read_bytes() for n in before} == before


def test_rank_without_model(tmp_path, capsys):
    cfg = write_run_config(tmp_path, individuals=30)
    assert main(["synth", "--config", str(cfg)]) == 0
    assert main(["ingest", "--config", str(cfg)]) == 0
    assert main(["build-graph", "--config", str(cfg)]) == 0
    assert main(["rank", "--config", str(cfg)]) == 5
    assert "run train first" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\ndimension = 4\n")
    assert main(["ingest", "--config", str(bad)]) == 2
    assert "dimension" in capsys.readouterr().err
    assert main(["ingest", "--set", "train.margin=0"]) == 2
    assert main(["ingest", "--config", str(tmp_path / "missing.ini")]) == 2


def test_load_config_overrides():
    cfg = load_config(None, {"train.dim": "8", "run.seed": "4", "graph.private": "false"})
    assert cfg.train.dim == 8
    assert cfg.train.seed == cfg.synth.seed == 4
    assert cfg.graph.options().private is False
    with pytest.raises(ConfigError):
        load_config(None, {"nosuch.key": "1"})


def test_missing_input_is_config_error(tmp_path, capsys):
    cfg = write_run_config(tmp_path)
    assert main(["ingest", "--config", str(cfg)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_malformed_trips_is_data_error(tmp_path, capsys):
    cfg = write_run_config(tmp_path, individuals=20)
    assert main(["synth", "--config", str(cfg)]) == 0
    trips = tmp_path / "data" / "trips.csv"
    trips.write_text(trips.read_text() + "V9,2019-08-05,08:00:00,1,999\n")
    assert main(["ingest", "--config", str(cfg)]) == 3
    assert "999" in capsys.readouterr().err
