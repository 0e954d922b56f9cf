import json

import pytest

from fedsubspace.cli import main


def write_config(tmp_path, **overrides):
    config = dict(
        dataset="synthetic",
        synth_classes=3,
        synth_per_class=8,
        synth_height=3,
        synth_width=4,
        synth_subspace_dim=2,
        clients=2,
        classes_per_client=2,
        rounds=1,
        local_epochs=1,
        pretrain_epochs=0,
        lambda3=0.0,
        knn_k=2,
        channels=[3, 2],
        kernel_sizes=[3, 3],
        strides=[2, 1],
        seed=3,
    )
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


def test_train_requires_seed(tmp_path, capsys):
    cfg = write_config(tmp_path)
    with pytest.raises(SystemExit):
        main(["train", "--config", str(cfg), "--output-dir", str(tmp_path / "run")])


def test_train_evaluate_export_cycle(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_dir = tmp_path / "run"
    rc = main(["train", "--config", str(cfg), "--seed", "9", "--output-dir", str(run_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mean: acc=" in out
    assert (run_dir / "metrics.csv").exists()

    rc = main(["evaluate", str(run_dir)])
    assert rc == 0
    assert "pooled:" in capsys.readouterr().out

    rc = main(["export", str(run_dir)])
    assert rc == 0
    assert "affinity_client_0000.bin" in capsys.readouterr().out


def test_partition_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "parts.json"
    rc = main(["partition", "--config", str(cfg), "--output", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc) == 2
    assert {"client_id", "classes", "sample_indices"} <= set(doc[0])


def test_sweep_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    rc = main(["sweep", "--config", str(cfg), "--axis", "lambda3", "--values", "0,1.0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "lambda3" in out
    assert out.strip().count("\n") >= 2


def test_set_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_dir = tmp_path / "run2"
    rc = main([
        "train", "--config", str(cfg), "--seed", "4",
        "--output-dir", str(run_dir),
        "--set", "rounds=0", "--set", "local_epochs=0",
        "--set", "label=\"smoke\"",
    ])
    assert rc == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["rounds"] == 0
    assert manifest["config"]["label"] == "smoke"
    assert manifest["config"]["seed"] == 4


def test_error_reporting(tmp_path, capsys):
    cfg = write_config(tmp_path, clients=200)   # more clients than samples
    rc = main(["train", "--config", str(cfg), "--seed", "1",
               "--output-dir", str(tmp_path / "x")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
