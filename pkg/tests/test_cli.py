"""CLI lifecycle on a miniature dataset: synthesis, the three training
stages, generation, editing, evaluation, sweep, and error exit codes."""

import json

import numpy as np
import pytest

from bamm.cli import main
from bamm.data import load_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run the full CLI pipeline once with tiny budgets; reuse across tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.jsonl"
    ckpts = root / "ckpts"
    gen_config = root / "gen.json"
    gen_config.write_text(
        json.dumps(
            {
                "families": [
                    {"name": "wave", "count": 8},
                    {"name": "jump", "count": 8},
                ],
                "length_range": (16, 120),
                "seed": 5,
            }
        )
    )
    labels_json = root / "labels.json"
    assert main(["synth-data", "--config", str(gen_config), "--out", str(data),
                 "--labels-out", str(labels_json)]) == 0

    tok_config = root / "tok.json"
    tok_config.write_text(json.dumps({"steps": 6, "batch_size": 4, "window": 32, "seed": 0}))
    assert main([
        "train-tokenizer", "--data", str(data), "--checkpoint-dir", str(ckpts),
        "--config", str(tok_config), "--labels", str(labels_json),
    ]) == 0

    train_config = root / "train.json"
    train_config.write_text(
        json.dumps({"total_steps": 4, "batch_size": 4, "refiner_batch_size": 4,
                    "log_every": 1, "seed": 0})
    )
    assert main([
        "train-transformer", "--data", str(data), "--checkpoint-dir", str(ckpts),
        "--config", str(train_config),
    ]) == 0
    assert main([
        "train-refiner", "--data", str(data), "--checkpoint-dir", str(ckpts),
        "--config", str(train_config),
    ]) == 0
    return root


def test_synth_data_output_loads(workspace):
    records = load_dataset(workspace / "data.jsonl")
    assert len(records) == 16
    assert {r.label for r in records} == {0, 1}


def test_training_artifacts_exist(workspace):
    ckpts = workspace / "ckpts"
    for name in ("tokenizer.ckpt", "transformer.ckpt", "refiner.ckpt",
                 "norm_stats.json", "labels.json", "transformer_metrics.jsonl"):
        assert (ckpts / name).exists(), name
    meta = json.loads((ckpts / "labels.json").read_text())
    assert meta["labels"] == ["wave", "jump"]


def test_generate_writes_motion_json(workspace, tmp_path):
    out = tmp_path / "motion.json"
    code = main([
        "generate", "--label", "1", "--seed", "7", "--out", str(out),
        "--checkpoint-dir", str(workspace / "ckpts"),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["label"] == 1
    assert len(payload["frames"]) == 4 * len(payload["tokens"])
    assert payload["trace"]["predicted_t"] == len(payload["tokens"])


def test_generate_length_flag_sets_frame_count(workspace, tmp_path):
    out = tmp_path / "fixed.json"
    code = main([
        "generate", "--label", "0", "--length", "48", "--seed", "2", "--out", str(out),
        "--checkpoint-dir", str(workspace / "ckpts"),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert len(payload["frames"]) == 48
    assert len(payload["tokens"]) == 12


def test_generate_deterministic_across_runs(workspace, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        main([
            "generate", "--label", "0", "--seed", "11", "--out", str(out),
            "--checkpoint-dir", str(workspace / "ckpts"),
        ])
        outs.append(out.read_text())
    assert outs[0] == outs[1]


def test_edit_roundtrip(workspace, tmp_path):
    request = tmp_path / "edit.json"
    rng = np.random.default_rng(0)
    request.write_text(
        json.dumps(
            {
                "label": 0,
                "task": "inpaint",
                "frames": rng.normal(size=(48, 12)).tolist(),
            }
        )
    )
    out = tmp_path / "edited.json"
    code = main([
        "edit", "--request", str(request), "--seed", "3", "--out", str(out),
        "--checkpoint-dir", str(workspace / "ckpts"),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["preserved_positions"] == [1, 2, 3, 10, 11, 12]
    assert len(payload["frames"]) == 48


def test_eval_report(workspace, tmp_path):
    out = tmp_path / "report.json"
    code = main([
        "eval", "--data", str(workspace / "data.jsonl"), "--out", str(out),
        "--checkpoint-dir", str(workspace / "ckpts"),
        "--length-samples", "10", "--max-samples", "8",
    ])
    assert code == 0
    report = json.loads(out.read_text())
    assert "recon_mse" in report and report["recon_mse"] >= 0
    assert len(report["length_histogram"]["0"]) == 50


def test_sweep_csv(workspace, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(
        json.dumps(
            {"configs": [{"cfg_s1": 2.0, "n_iterations": 1}, {"cfg_s1": 2.0, "n_iterations": 2}]}
        )
    )
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--data", str(workspace / "data.jsonl"), "--config", str(grid),
        "--out", str(out), "--checkpoint-dir", str(workspace / "ckpts"),
        "--max-samples", "6",
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3  # header + 2 rows


def test_missing_checkpoint_exits_one_naming_artifact(tmp_path, capsys):
    code = main([
        "generate", "--label", "0", "--seed", "0", "--out", str(tmp_path / "x.json"),
        "--checkpoint-dir", str(tmp_path / "empty"),
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "tokenizer" in err and "missing" in err


def test_unknown_subcommand_exits_two(capsys):
    assert main(["frobnicate"]) == 2


def test_unknown_flag_exits_two(capsys):
    assert main(["synth-data", "--bogus"]) == 2


def test_env_var_checkpoint_dir(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("BAMM_CHECKPOINT_DIR", str(workspace / "ckpts"))
    out = tmp_path / "env.json"
    assert main(["generate", "--label", "0", "--seed", "1", "--out", str(out)]) == 0
    assert out.exists()
