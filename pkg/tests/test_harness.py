import dataclasses
import json

import numpy as np
import pytest

from fedsubspace import harness, seeding
from fedsubspace.autonet import Hyperparams, init_optimizer_state, train_local
from fedsubspace.errors import ConfigError
from fedsubspace.harness import (
    ExperimentConfig,
    evaluate_run_dir,
    export_views,
    load_dataset,
    make_shards,
    pca_2d,
    raw_kmeans_baseline,
    run_experiment,
    sweep,
)
from fedsubspace.spectral import read_affinity_binary


def tiny_config(**kwargs):
    defaults = dict(
        dataset="synthetic",
        synth_classes=3,
        synth_per_class=10,
        synth_height=3,
        synth_width=4,
        synth_subspace_dim=2,
        synth_noise=0.02,
        clients=2,
        classes_per_client=2,
        rounds=2,
        local_epochs=2,
        pretrain_epochs=1,
        lambda1=0.5,
        lambda2=2.0,
        lambda3=0.0,
        knn_k=3,
        channels=(4, 3),
        kernel_sizes=(3, 3),
        strides=(2, 1),
        learning_rate=1e-3,
        seed=5,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# config


def test_config_json_roundtrip():
    config = tiny_config(resize=(8, 8), label="demo")
    assert ExperimentConfig.from_json(config.to_json()) == config


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"no_such_field": 1})


def test_config_hash_changes_with_fields():
    a = tiny_config()
    b = tiny_config(lambda3=1.0)
    assert a.content_hash() != b.content_hash()
    assert a.content_hash() == tiny_config().content_hash()


def test_method_label():
    assert tiny_config(clients=1).method_label() == "centralized"
    assert tiny_config(clients=3).method_label() == "federated"
    assert tiny_config(label="custom").method_label() == "custom"


# ---------------------------------------------------------------------------
# experiment smoke + determinism


def test_untrained_smoke_run():
    result = run_experiment(tiny_config(rounds=0, local_epochs=0, pretrain_epochs=0))
    assert len(result.per_client) == 2
    assert result.round_reports == []
    assert 0.0 <= result.mean.acc <= 100.0


def test_run_deterministic():
    config = tiny_config()
    a = run_experiment(config)
    b = run_experiment(config)
    assert [r.as_dict() for r in a.per_client] == [r.as_dict() for r in b.per_client]
    assert a.mean == b.mean
    assert a.pooled == b.pooled
    assert a.config_hash == b.config_hash


def test_mean_is_arithmetic_mean():
    result = run_experiment(tiny_config())
    for key in ("acc", "nmi", "ami", "ari"):
        values = [getattr(r, key) for r in result.per_client]
        assert getattr(result.mean, key) == pytest.approx(float(np.mean(values)), abs=1e-9)


def test_lambda3_zero_runs_are_bitwise_equal_regardless_of_graph_knob():
    # Two configs differing only in a field that cannot influence lam3=0 math.
    config_a = tiny_config(lambda3=0.0, knn_k=3)
    config_b = tiny_config(lambda3=0.0, knn_k=4)
    a = run_experiment(config_a)
    b = run_experiment(config_b)
    assert [r.as_dict() for r in a.per_client] == [r.as_dict() for r in b.per_client]
    trace_a = [lb for rep in a.round_reports for lb in rep.traces[0]]
    trace_b = [lb for rep in b.round_reports for lb in rep.traces[0]]
    assert trace_a == trace_b


def test_serial_vs_threaded_identical():
    a = run_experiment(tiny_config(max_workers=0))
    b = run_experiment(tiny_config(max_workers=4))
    assert [r.as_dict() for r in a.per_client] == [r.as_dict() for r in b.per_client]


def test_centralized_matches_direct_loop():
    config = tiny_config(clients=1, classes_per_client=3, participation=1.0,
                         rounds=3, local_epochs=2, pretrain_epochs=2)
    result = run_experiment(config)
    fed_trace = [lb for rep in result.round_reports for lb in rep.traces[0]]

    # Direct loop: same shard, same init streams, pretraining then T*tau
    # epochs; the optimizer resets between phases just like the federation.
    dataset = load_dataset(config)
    (shard,) = make_shards(config, dataset)
    from fedsubspace.federation import init_federation
    server, clients = init_federation([shard], config.federation_config())
    params = clients[0].params
    adjacency = clients[0].adjacency
    warmup = Hyperparams(lam1=0, lam2=0, lam3=0)
    state = init_optimizer_state(params, config.learning_rate, config.momentum)
    params, state, _ = train_local(shard, params, warmup, adjacency,
                                   config.pretrain_epochs, state)
    state = init_optimizer_state(params, config.learning_rate, config.momentum)
    direct_trace = []
    for _ in range(config.rounds):
        params, state, trace = train_local(shard, params, config.hyper(), adjacency,
                                           config.local_epochs, state)
        direct_trace.extend(trace)
    assert fed_trace == direct_trace

    from fedsubspace.harness import evaluate_clients
    per_client, mean, _, _ = evaluate_clients([params.selfexpr.r], [shard], config)
    assert [r.as_dict() for r in per_client] == [r.as_dict() for r in result.per_client]


# ---------------------------------------------------------------------------
# artifacts


def test_run_writes_artifacts(tmp_path):
    config = tiny_config(output_dir=str(tmp_path / "run"), checkpoint_interval=1)
    result = run_experiment(config)
    base = tmp_path / "run"
    assert (base / "manifest.json").exists()
    assert (base / "metrics.csv").exists()
    assert (base / "rounds.csv").exists()
    assert (base / "partition.json").exists()
    assert (base / "checkpoints" / "final" / "client_0000.ckpt").exists()
    assert (base / "checkpoints" / "round_00001" / "global_encoder.ckpt").exists()
    assert (base / "loss" / "client_0000.csv").exists()

    manifest = json.loads((base / "manifest.json").read_text())
    assert manifest["config_hash"] == result.config_hash
    assert manifest["seed"] == config.seed

    lines = (base / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "method,client,acc,nmi,ami,ari"
    assert len(lines) == 1 + 2 + 2   # clients + mean + pooled
    assert lines[-2].split(",")[1] == "mean"
    assert lines[-1].split(",")[1] == "pooled"


def test_evaluate_run_dir_matches_in_memory(tmp_path):
    config = tiny_config(output_dir=str(tmp_path / "run"))
    result = run_experiment(config)
    per_client, mean, pooled = evaluate_run_dir(tmp_path / "run")
    # Checkpoints are float32, so R round-trips with small error; clustering
    # labels and hence the reports must still agree.
    assert [r.as_dict() for r in per_client] == [r.as_dict() for r in result.per_client]
    assert mean == result.mean
    assert pooled == result.pooled


def test_evaluate_run_dir_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        evaluate_run_dir(tmp_path)


# ---------------------------------------------------------------------------
# baseline


def test_baseline_reports_shape():
    config = tiny_config()
    shards = make_shards(config, load_dataset(config))
    reports, mean = raw_kmeans_baseline(shards, config)
    assert len(reports) == config.clients
    assert 0.0 <= mean.acc <= 100.0


# ---------------------------------------------------------------------------
# sweep


def test_sweep_shapes_and_seeds(tmp_path):
    config = tiny_config(output_dir=str(tmp_path / "sweep"))
    results = sweep(config, "lambda3", [0.0, 1.0])
    assert len(results) == 2
    assert results[0].config.lambda3 == 0.0
    assert results[1].config.lambda3 == 1.0
    assert results[0].config.seed != results[1].config.seed
    table = (tmp_path / "sweep" / "sweep.csv").read_text().strip().splitlines()
    assert table[0] == "lambda3,method,acc,nmi,ami,ari"
    assert len(table) == 3


def test_sweep_axis_aliases():
    config = tiny_config()
    results = sweep(config, "m", [1])
    assert results[0].config.clients == 1
    with pytest.raises(ConfigError):
        sweep(config, "bogus", [1])


def test_singleton_sweep_equals_run_experiment():
    config = tiny_config()
    (swept,) = sweep(config, "tau", [2])
    direct = run_experiment(dataclasses.replace(
        config, local_epochs=2, seed=seeding.derive_seed(config.seed, seeding.SWEEP, 0)))
    assert [r.as_dict() for r in swept.per_client] == [r.as_dict() for r in direct.per_client]


# ---------------------------------------------------------------------------
# export


def test_pca_preserves_planar_geometry():
    rng = np.random.default_rng(2)
    basis = np.linalg.qr(rng.standard_normal((7, 2)))[0]
    flat = rng.standard_normal((30, 2))
    points = flat @ basis.T + 5.0
    coords = pca_2d(points)
    dist_before = np.linalg.norm(flat[:, None] - flat[None, :], axis=2)
    dist_after = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
    assert np.allclose(dist_before, dist_after, atol=1e-9)


def test_export_views(tmp_path):
    config = tiny_config(output_dir=str(tmp_path / "run"))
    result = run_experiment(config)
    written = export_views(result)
    names = {p.name for p in written}
    assert "pca_client_0000.csv" in names
    assert "affinity_client_0000.bin" in names

    aff = read_affinity_binary(tmp_path / "run" / "views" / "affinity_client_0000.bin")
    assert aff.shape[0] == aff.shape[1]
    assert np.array_equal(aff, aff.T)

    pca_lines = (tmp_path / "run" / "views" / "pca_client_0000.csv").read_text().splitlines()
    assert pca_lines[0] == "x,y,label"
    assert len(pca_lines) == 1 + aff.shape[0]


def test_export_requires_checkpoints(tmp_path):
    config = tiny_config()   # no output dir
    result = run_experiment(config)
    with pytest.raises(ConfigError):
        export_views(result)


def test_export_label_sorted_block_mass(tmp_path):
    # A converged self-expressive matrix exported after label sorting puts
    # far more mass inside the diagonal blocks than outside them.
    config = ExperimentConfig(
        dataset="synthetic",
        synth_classes=3, synth_per_class=40, synth_height=4, synth_width=5,
        synth_subspace_dim=3, synth_noise=0.01,
        clients=1, classes_per_client=3,
        participation=1.0, rounds=7, local_epochs=100, pretrain_epochs=400,
        lambda1=1e-5, lambda2=0.04, lambda3=0.0,
        knn_k=5, affinity_top_s=3,
        channels=(4, 4), kernel_sizes=(3, 3), strides=(1, 1),
        learning_rate=3e-3, momentum=0.0,
        seed=5, output_dir=str(tmp_path / "run"),
    )
    run_experiment(config)
    export_views(tmp_path / "run")
    shards = make_shards(config, load_dataset(config))
    for shard in shards:
        aff = read_affinity_binary(
            tmp_path / "run" / "views" / f"affinity_client_{shard.client_id:04d}.bin")
        labels = np.sort(shard.labels)
        same = labels[:, None] == labels[None, :]
        np.fill_diagonal(same, False)
        off = ~(labels[:, None] == labels[None, :])
        mass_in = aff[same].sum() / same.sum()
        mass_out = aff[off].sum() / off.sum()
        assert mass_in >= mass_out
