import json
import os

import numpy as np
import pytest
import yaml

from windnow.cli import main


def _write_config(path, dataset_dir, output_dir, **overrides):
    doc = {
        "data": {"dataset_dir": str(dataset_dir), "stride": 6, "eval_stride": 9},
        "synth": {"duration_steps": 220, "grid_rows": 3, "grid_cols": 3,
                  "n_stations": 7, "n_withheld": 2, "seed": 11},
        "model": {"embed_dim": 10},
        "training": {"batch_size": 12, "max_epochs": 2, "seed": 1},
        "contrastive": {"queue_capacity": 64},
        "output_dir": str(output_dir),
    }
    for key, value in overrides.items():
        section, _, leaf = key.partition(".")
        if leaf:
            doc.setdefault(section, {})[leaf] = value
        else:
            doc[section] = value
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_config(root / "cfg.yaml", root / "ds", root / "out")
    assert main(["synth", "--config", str(cfg)]) == 0
    return root, cfg


def test_synth_writes_manifest_and_stations(cli_run):
    root, _ = cli_run
    manifest = json.loads((root / "ds" / "manifest.json").read_text())
    assert len(manifest["stations"]) == 7
    assert sum(m["withheld"] for m in manifest["stations"]) == 2
    for m in manifest["stations"]:
        assert (root / "ds" / m["file"]).exists()


def test_build_graph_artifacts(cli_run, capsys):
    root, cfg = cli_run
    assert main(["build-graph", "--config", str(cfg)]) == 0
    out = root / "out"
    nodes = (out / "nodes.csv").read_text().strip().splitlines()
    assert len(nodes) == 1 + 9  # 3x3 grid
    edges = (out / "diffusion_edges.csv").read_text().strip().splitlines()
    assert len(edges) > 1
    for line in edges[1:]:
        assert line.split(",")[3] in ("real", "virtual")
    assert (out / "influence_stats.csv").exists()
    captured = capsys.readouterr().out
    assert "mean real_fraction" in captured


def test_build_graph_deterministic_artifacts(cli_run):
    root, cfg = cli_run
    out = root / "out"
    first = (out / "diffusion_edges.csv").read_bytes()
    assert main(["build-graph", "--config", str(cfg)]) == 0
    assert (out / "diffusion_edges.csv").read_bytes() == first


def test_train_and_evaluate_checkpoint(cli_run):
    root, cfg = cli_run
    assert main(["train", "--config", str(cfg), "--strategy", "augmented"]) == 0
    run_dir = root / "out" / "gcn_diff_augmented_moco"
    assert (run_dir / "checkpoint.npz").exists()
    diag = (run_dir / "diagnostics.csv").read_text().strip().splitlines()
    assert len(diag) == 3  # header + 2 epochs
    assert (run_dir / "config.yaml").exists()

    assert main(["evaluate", "--config", str(cfg),
                 "--checkpoint", str(run_dir / "checkpoint.npz")]) == 0
    eval_json = root / "out" / "evals" / "eval_gcn_diff_augmented_moco.json"
    assert eval_json.exists()
    doc = json.loads(eval_json.read_text())
    assert any(c["variable"] == "dd" for c in doc["cells"])


def test_train_ablation_flags(cli_run):
    root, cfg = cli_run
    assert main(["train", "--config", str(cfg), "--strategy", "none",
                 "--no-diffusion"]) == 0
    assert (root / "out" / "gcn_plain" / "checkpoint.npz").exists()
    assert main(["train", "--config", str(cfg), "--strategy", "multistep",
                 "--no-moco"]) == 0
    assert (root / "out" / "gcn_diff_multistep" / "checkpoint.npz").exists()


def test_baseline_alias_and_evaluate(cli_run):
    root, cfg = cli_run
    assert main(["baseline", "idw", "--config", str(cfg)]) == 0
    assert main(["evaluate", "--config", str(cfg), "--baseline", "knn"]) == 0
    assert (root / "out" / "evals" / "eval_idw.json").exists()
    assert (root / "out" / "evals" / "eval_knn.json").exists()


def test_report_idempotent_bytes(cli_run):
    root, cfg = cli_run
    assert main(["report", "--config", str(cfg)]) == 0
    report_dir = root / "out" / "report"
    files = ["comparison.csv", "comparison.json", "leads.csv", "stations.csv",
             "seasons.csv"]
    first = {f: (report_dir / f).read_bytes() for f in files}
    assert main(["report", "--config", str(cfg)]) == 0
    for f in files:
        assert (report_dir / f).read_bytes() == first[f]
    rows = json.loads((report_dir / "comparison.json").read_text())
    methods = [r["method"] for r in rows]
    assert "idw" in methods and "gcn_diff_augmented_moco" in methods
    # canonical ordering puts learned variants before the baselines
    assert methods.index("gcn_diff_augmented_moco") < methods.index("idw")


def test_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["build-graph", "--config", str(bad)]) == 1


def test_exit_code_usage_error(tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "ds", tmp_path / "out")
    # evaluate needs exactly one of --checkpoint/--baseline
    assert main(["evaluate", "--config", str(cfg)]) == 1


def test_exit_code_data_error(tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "missing_ds",
                        tmp_path / "out")
    assert main(["build-graph", "--config", str(cfg)]) == 2


def test_report_without_evals_is_data_error(tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "ds", tmp_path / "out2")
    assert main(["report", "--config", str(cfg)]) == 2


def test_config_set_override(tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "ds", tmp_path / "out")
    assert main(["synth", "--config", str(cfg),
                 "--set", "synth.duration_steps=120"]) == 0
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert manifest["steps"] == 120


def test_output_root_env_override(tmp_path, monkeypatch):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "ds", "rel_out",
                        **{"synth.duration_steps": 120})
    monkeypatch.setenv("WINDNOW_OUTPUT_ROOT", str(tmp_path / "rooted"))
    assert main(["synth", "--config", str(cfg)]) == 0
    assert main(["build-graph", "--config", str(cfg)]) == 0
    assert (tmp_path / "rooted" / "rel_out" / "nodes.csv").exists()
