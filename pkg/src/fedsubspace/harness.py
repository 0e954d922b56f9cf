"""Experiment orchestration: config handling, full runs, sweeps and exports.

A run is: load data -> partition -> build k-NN graphs -> federated training
-> per-client spectral clustering of the learned self-expressive matrices ->
ACC/NMI/AMI/ARI.  Everything derives from one master seed, so a (config,
seed) pair pins every number in the output.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding
from .autonet import (
    Architecture,
    Hyperparams,
    NetParams,
    SelfExpressiveParams,
    append_loss_trace,
    encode,
    init_decoder,
    init_encoder,
    load_checkpoint,
)
from .dataio import (
    Dataset,
    DatasetShard,
    PartitionSpec,
    load_image_dir,
    load_mnist_idx,
    partition,
    synthetic_subspaces,
    write_partition_manifest,
)
from .errors import ConfigError, FedSubspaceError
from .federation import (
    ClientHandle,
    FederationConfig,
    RoundReport,
    ServerState,
    init_federation,
    pretrain_clients,
    run_training,
    save_federation_checkpoint,
)
from .metrics import MetricsReport, evaluate, mean_report
from .spectral import (
    AffinityMatrix,
    affinity_from_r,
    kmeans,
    spectral_cluster,
    write_affinity_binary,
)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: synthetic | mnist | image_dir
    dataset: str = "synthetic"
    data_path: str | None = None
    labels_path: str | None = None
    resize: tuple[int, int] | None = None
    # synthetic generator
    synth_classes: int = 4
    synth_per_class: int = 40
    synth_height: int = 6
    synth_width: int = 6
    synth_subspace_dim: int = 3
    synth_noise: float = 0.01
    # partition
    clients: int = 4
    classes_per_client: int | None = None      # None -> every class
    samples_per_client: int | None = None      # None -> floor(n / clients)
    # protocol
    participation: float = 1.0
    rounds: int = 20
    local_epochs: int = 7
    pretrain_epochs: int = 5
    # objective
    lambda1: float = 1.0
    lambda2: float = 15.0
    lambda3: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    # graph and clustering
    knn_k: int = 5
    cluster_count: int | None = None           # None -> client's class count
    affinity_top_s: int | None = None
    # architecture
    channels: tuple[int, int] = (16, 8)
    kernel_sizes: tuple[int, int] = (5, 3)
    strides: tuple[int, int] = (2, 2)
    # optimiser
    learning_rate: float = 1e-3
    pretrain_learning_rate: float | None = None
    momentum: float = 0.9
    # execution
    seed: int = 0
    output_dir: str | None = None
    max_workers: int = 0
    checkpoint_interval: int = 0
    label: str | None = None

    _TUPLE_FIELDS = ("resize", "channels", "kernel_sizes", "strides")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in self._TUPLE_FIELDS:
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(data)
        for key in cls._TUPLE_FIELDS:
            if coerced.get(key) is not None:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def method_label(self) -> str:
        if self.label:
            return self.label
        return "centralized" if self.clients == 1 else "federated"

    def architecture(self) -> Architecture:
        return Architecture(self.channels, self.kernel_sizes, self.strides)

    def hyper(self) -> Hyperparams:
        return Hyperparams(self.lambda1, self.lambda2, self.lambda3, self.alpha, self.beta)

    def federation_config(self, checkpoint_dir: str | None = None) -> FederationConfig:
        return FederationConfig(
            hyper=self.hyper(),
            arch=self.architecture(),
            participation=self.participation,
            local_epochs=self.local_epochs,
            learning_rate=self.learning_rate,
            pretrain_learning_rate=self.pretrain_learning_rate,
            momentum=self.momentum,
            knn_k=self.knn_k,
            seed=self.seed,
            max_workers=self.max_workers,
            checkpoint_interval=self.checkpoint_interval,
            checkpoint_dir=checkpoint_dir,
        )


@dataclass
class RunResult:
    config: ExperimentConfig
    config_hash: str
    per_client: list[MetricsReport]
    mean: MetricsReport
    pooled: MetricsReport
    round_reports: list[RoundReport]
    wall_time: float
    output_dir: str | None


# ---------------------------------------------------------------------------
# staging


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synthetic":
        return synthetic_subspaces(
            classes=config.synth_classes,
            points_per_class=config.synth_per_class,
            height=config.synth_height,
            width=config.synth_width,
            subspace_dim=config.synth_subspace_dim,
            noise=config.synth_noise,
            seed=seeding.derive_seed(config.seed, seeding.SYNTH),
        )
    if config.dataset == "mnist":
        if not config.data_path or not config.labels_path:
            raise ConfigError("mnist dataset needs data_path and labels_path")
        return load_mnist_idx(config.data_path, config.labels_path)
    if config.dataset == "image_dir":
        if not config.data_path:
            raise ConfigError("image_dir dataset needs data_path")
        resize = config.resize or (32, 32)
        return load_image_dir(config.data_path, resize[0], resize[1])
    raise ConfigError(f"unknown dataset kind {config.dataset!r}")


def make_shards(config: ExperimentConfig, dataset: Dataset) -> list[DatasetShard]:
    q = config.classes_per_client or dataset.class_count
    spec = PartitionSpec(
        m=config.clients,
        q=q,
        seed=seeding.derive_seed(config.seed, seeding.PARTITION),
        samples_per_client=config.samples_per_client,
    )
    return partition(dataset, spec)


@dataclass
class TrainedRun:
    config: ExperimentConfig
    shards: list[DatasetShard]
    server: ServerState
    clients: list[ClientHandle]
    round_reports: list[RoundReport]
    wall_time: float
    output_dir: str | None


@contextmanager
def _stage(name: str):
    """Tag pipeline errors with the stage they came from."""
    try:
        yield
    except FedSubspaceError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def train_stage(config: ExperimentConfig) -> TrainedRun:
    """Partition the data and run the full federated protocol, writing
    checkpoints, loss traces and the run manifest when an output dir is set."""
    start = time.perf_counter()
    outdir = Path(config.output_dir) if config.output_dir else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)

    with _stage("load"):
        dataset = load_dataset(config)
    with _stage("partition"):
        shards = make_shards(config, dataset)
    fed_config = config.federation_config(
        checkpoint_dir=str(outdir / "checkpoints") if outdir else None
    )
    with _stage("federation"):
        server, clients = init_federation(shards, fed_config)
        if config.pretrain_epochs > 0:
            pretrain_clients(server, clients, config.pretrain_epochs, fed_config)
        reports = run_training(server, clients, fed_config, config.rounds)
    wall = time.perf_counter() - start

    if outdir:
        write_partition_manifest(shards, outdir / "partition.json")
        save_federation_checkpoint(server, clients, outdir / "checkpoints", None)
        _write_rounds_csv(reports, outdir / "rounds.csv")
        trace_dir = outdir / "loss"
        trace_dir.mkdir(exist_ok=True)
        for report in reports:
            for cid, trace in report.traces.items():
                append_loss_trace(trace_dir / f"client_{cid:04d}.csv", report.round, trace)
        _write_manifest(config, len(reports), outdir)
    return TrainedRun(config, shards, server, clients, reports, wall, config.output_dir)


def _write_manifest(config: ExperimentConfig, rounds_completed: int, outdir: Path) -> None:
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "rounds_completed": rounds_completed,
    }
    (outdir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _write_rounds_csv(reports: list[RoundReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client", "weight", "reconstruction", "regularizer_r",
                         "self_expression", "graph_alignment", "total"])
        for report in reports:
            for cid in report.participants:
                lb = report.final_losses[cid]
                writer.writerow([report.round, cid, report.weights_used[cid], *lb.as_tuple()])


def cluster_shard(r: np.ndarray, shard: DatasetShard, config: ExperimentConfig) -> np.ndarray:
    """Spectral labels for one client's learned self-expressive matrix."""
    k = config.cluster_count or len(shard.classes_present)
    if k < 2:
        return np.zeros(shard.n, dtype=np.int64)
    aff = affinity_from_r(r, top_s=config.affinity_top_s)
    seed = seeding.derive_seed(config.seed, seeding.CLUSTERING, shard.client_id)
    return spectral_cluster(aff, k, seed)


def evaluate_clients(
    client_rs: list[np.ndarray], shards: list[DatasetShard], config: ExperimentConfig
) -> tuple[list[MetricsReport], MetricsReport, MetricsReport, list[np.ndarray]]:
    """Cluster every client and score against its ground truth.

    Returns per-client reports, their arithmetic mean, a pooled report
    (all clients concatenated, predicted labels offset into disjoint ranges)
    and the per-client predicted labels.
    """
    per_client = []
    all_preds = []
    pooled_pred = []
    pooled_truth = []
    offset = 0
    for r, shard in zip(client_rs, shards):
        pred = cluster_shard(r, shard, config)
        all_preds.append(pred)
        per_client.append(evaluate(pred, shard.labels))
        pooled_pred.append(pred + offset)
        pooled_truth.append(shard.labels)
        offset += int(pred.max()) + 1
    pooled = evaluate(np.concatenate(pooled_pred), np.concatenate(pooled_truth))
    return per_client, mean_report(per_client), pooled, all_preds


def _write_metrics_csv(path, method: str, per_client, mean, pooled) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "client", "acc", "nmi", "ami", "ari"])
        for cid, report in enumerate(per_client):
            writer.writerow([method, cid, *report.as_dict().values()])
        writer.writerow([method, "mean", *mean.as_dict().values()])
        writer.writerow([method, "pooled", *pooled.as_dict().values()])


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Train, cluster and score one configuration end to end."""
    trained = train_stage(config)
    start = time.perf_counter()
    client_rs = [c.params.selfexpr.r for c in trained.clients]
    with _stage("clustering"):
        per_client, mean, pooled, _ = evaluate_clients(client_rs, trained.shards, config)
    wall = trained.wall_time + (time.perf_counter() - start)
    if trained.output_dir:
        _write_metrics_csv(Path(trained.output_dir) / "metrics.csv",
                           config.method_label(), per_client, mean, pooled)
    return RunResult(
        config=config,
        config_hash=config.content_hash(),
        per_client=per_client,
        mean=mean,
        pooled=pooled,
        round_reports=trained.round_reports,
        wall_time=wall,
        output_dir=trained.output_dir,
    )


# ---------------------------------------------------------------------------
# baseline


def raw_kmeans_baseline(
    shards: list[DatasetShard], config: ExperimentConfig
) -> tuple[list[MetricsReport], MetricsReport]:
    """k-means directly on raw pixel rows, per client; the reference floor."""
    reports = []
    for shard in shards:
        k = config.cluster_count or len(shard.classes_present)
        if k < 2:
            pred = np.zeros(shard.n, dtype=np.int64)
        else:
            seed = seeding.derive_seed(config.seed, seeding.BASELINE, shard.client_id)
            pred = kmeans(shard.samples, k, seed)
        reports.append(evaluate(pred, shard.labels))
    return reports, mean_report(reports)


# ---------------------------------------------------------------------------
# sweep

SWEEP_AXES = {
    "m": "clients",
    "clients": "clients",
    "samples_per_client": "samples_per_client",
    "q": "classes_per_client",
    "classes_per_client": "classes_per_client",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "lambda3": "lambda3",
    "r": "participation",
    "participation": "participation",
    "T": "rounds",
    "rounds": "rounds",
    "tau": "local_epochs",
    "local_epochs": "local_epochs",
    "k": "knn_k",
    "knn_k": "knn_k",
}


def sweep(config: ExperimentConfig, axis: str, values: list) -> list[RunResult]:
    """One run per axis value under per-run seeds derived from the master seed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(set(SWEEP_AXES))}")
    field = SWEEP_AXES[axis]
    results = []
    for idx, value in enumerate(values):
        run_seed = seeding.derive_seed(config.seed, seeding.SWEEP, idx)
        overrides = {field: value, "seed": run_seed}
        if config.output_dir:
            overrides["output_dir"] = str(Path(config.output_dir) / f"{field}_{idx:03d}")
        run_config = dataclasses.replace(config, **overrides)
        results.append(run_experiment(run_config))
    if config.output_dir:
        _write_sweep_csv(Path(config.output_dir) / "sweep.csv", field, values, results)
    return results


def _write_sweep_csv(path, field: str, values, results: list[RunResult]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([field, "method", "acc", "nmi", "ami", "ari"])
        for value, result in zip(values, results):
            writer.writerow([value, result.config.method_label(),
                             *result.mean.as_dict().values()])


# ---------------------------------------------------------------------------
# evaluate / export from a saved run


def _rebuild_from_manifest(run_dir: Path) -> tuple[ExperimentConfig, list[DatasetShard]]:
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"no {MANIFEST_NAME} under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    dataset = load_dataset(config)
    return config, make_shards(config, dataset)


def _load_client_params(run_dir: Path, shard: DatasetShard,
                        config: ExperimentConfig) -> NetParams:
    ckpt = run_dir / "checkpoints" / "final" / f"client_{shard.client_id:04d}.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint {ckpt}")
    arch = config.architecture()
    rng = np.random.default_rng(0)   # placeholder values, overwritten below
    params = NetParams(
        encoder=init_encoder(shard.image_shape, arch, rng),
        selfexpr=SelfExpressiveParams(np.zeros((shard.n, shard.n))),
        decoder=init_decoder(shard.image_shape, arch, rng),
        image_shape=shard.image_shape,
    )
    params.load_tensors(load_checkpoint(ckpt))
    return params


def evaluate_run_dir(run_dir) -> tuple[list[MetricsReport], MetricsReport, MetricsReport]:
    """Re-score a finished run from its manifest and final checkpoints."""
    run_dir = Path(run_dir)
    config, shards = _rebuild_from_manifest(run_dir)
    client_rs = [
        _load_client_params(run_dir, shard, config).selfexpr.r for shard in shards
    ]
    per_client, mean, pooled, _ = evaluate_clients(client_rs, shards, config)
    _write_metrics_csv(run_dir / "metrics.csv", config.method_label(),
                       per_client, mean, pooled)
    return per_client, mean, pooled


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Project rows onto their top-2 principal directions, deterministic signs."""
    centered = points - points.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros_like(vt[:1])])
    fixed = []
    for comp in components:
        lead = np.argmax(np.abs(comp))
        fixed.append(-comp if comp[lead] < 0 else comp)
    return centered @ np.vstack(fixed).T


def export_views(run: RunResult | str | Path) -> list[Path]:
    """Write per-client 2-D feature projections and label-sorted affinities.

    Needs a finished run directory holding the manifest and final checkpoints.
    """
    if isinstance(run, RunResult):
        if run.output_dir is None:
            raise ConfigError("run was executed without an output directory")
        run_dir = Path(run.output_dir)
    else:
        run_dir = Path(run)
    config, shards = _rebuild_from_manifest(run_dir)
    export_dir = run_dir / "views"
    export_dir.mkdir(exist_ok=True)
    written = []
    for shard in shards:
        params = _load_client_params(run_dir, shard, config)
        z = encode(params.encoder, shard.samples, shard.image_shape)
        coords = pca_2d(z)
        pca_path = export_dir / f"pca_client_{shard.client_id:04d}.csv"
        with open(pca_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "label"])
            for (x, y), label in zip(coords, shard.labels):
                writer.writerow([x, y, int(label)])
        written.append(pca_path)

        order = np.argsort(shard.labels, kind="stable")
        aff = affinity_from_r(params.selfexpr.r, top_s=config.affinity_top_s)
        sorted_aff = AffinityMatrix(w=np.ascontiguousarray(aff.w[order][:, order]))
        bin_path = export_dir / f"affinity_client_{shard.client_id:04d}.bin"
        write_affinity_binary(sorted_aff, bin_path)
        written.append(bin_path)
    return written
