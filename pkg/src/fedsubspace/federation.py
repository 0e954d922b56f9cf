"""In-process simulation of the federated training protocol.

Each round the server samples a client subset, ships the current global
encoder, lets participants run local full-batch epochs, and averages the
returned encoders with size-proportional weights renormalised over the
participant set.  Self-expressive matrices and decoders never leave their
client: the only tensors crossing the "wire" are encoder parameters.

The protocol is deterministic for a fixed master seed, and participant
training jobs are independent, so serial and thread-pool execution produce
bit-identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .autonet import (
    Architecture,
    EncoderParams,
    Hyperparams,
    LossBreakdown,
    NetParams,
    OptimizerState,
    SelfExpressiveParams,
    init_decoder,
    init_encoder,
    init_optimizer_state,
    loss,
    save_checkpoint,
    train_local,
)
from .dataio import DatasetShard
from .errors import ConfigError, NumericsError, ShapeError
from .graph import AdjacencyMatrix, knn_adjacency


@dataclass(frozen=True)
class FederationConfig:
    hyper: Hyperparams = Hyperparams()
    arch: Architecture = Architecture()
    participation: float = 1.0        # fraction of clients sampled per round
    local_epochs: int = 7
    learning_rate: float = 1e-3
    pretrain_learning_rate: float | None = None   # None -> learning_rate
    momentum: float = 0.9
    knn_k: int = 5
    seed: int = 0
    max_workers: int = 0              # 0 = train participants serially
    checkpoint_interval: int = 0      # rounds between snapshots; 0 = never
    checkpoint_dir: str | None = None


@dataclass
class ServerState:
    global_encoder: EncoderParams
    round: int
    rng: np.random.Generator


@dataclass
class ClientHandle:
    client_id: int
    shard: DatasetShard
    adjacency: AdjacencyMatrix
    params: NetParams
    optimizer: OptimizerState
    weight: float


@dataclass
class RoundReport:
    round: int
    participants: list[int]
    final_losses: dict[int, LossBreakdown]
    weights_used: dict[int, float]
    traces: dict[int, list[LossBreakdown]] = field(default_factory=dict)


def init_federation(
    shards: list[DatasetShard], config: FederationConfig
) -> tuple[ServerState, list[ClientHandle]]:
    """Build all client state: adjacency graphs, identical encoders copied
    from the fresh global one, zero self-expressive matrices, independently
    seeded decoders, and size-proportional aggregation weights."""
    if not shards:
        raise ConfigError("need at least one shard")
    for shard in shards:
        if shard.n < 1:
            raise ConfigError(f"client {shard.client_id} has an empty shard")
    sizes = np.array([s.n for s in shards], dtype=float)
    weights = sizes / sizes.sum()

    image_shape = shards[0].image_shape
    encoder_rng = seeding.derive_rng(config.seed, seeding.ENCODER_INIT)
    global_encoder = init_encoder(image_shape, config.arch, encoder_rng)

    clients = []
    for shard, weight in zip(shards, weights):
        decoder_rng = seeding.derive_rng(config.seed, seeding.DECODER_INIT, shard.client_id)
        params = NetParams(
            encoder=global_encoder.copy(),
            selfexpr=SelfExpressiveParams(np.zeros((shard.n, shard.n))),
            decoder=init_decoder(shard.image_shape, config.arch, decoder_rng),
            image_shape=shard.image_shape,
        )
        clients.append(ClientHandle(
            client_id=shard.client_id,
            shard=shard,
            adjacency=knn_adjacency(shard.samples, config.knn_k),
            params=params,
            optimizer=init_optimizer_state(params, config.learning_rate, config.momentum),
            weight=float(weight),
        ))
    server = ServerState(
        global_encoder=global_encoder,
        round=0,
        rng=seeding.derive_rng(config.seed, seeding.SERVER_SAMPLING),
    )
    return server, clients


def sample_clients(server: ServerState, m: int, participation: float) -> list[int]:
    """Uniform subset of max(1, round(r*m)) client ids, without replacement."""
    if not 0.0 < participation <= 1.0:
        raise ConfigError(f"participation must be in (0, 1], got {participation}")
    count = max(1, int(np.floor(participation * m + 0.5)))
    picked = server.rng.choice(m, size=count, replace=False)
    return sorted(int(i) for i in picked)


def aggregate(encoders: list[EncoderParams], weights: list[float]) -> EncoderParams:
    """Elementwise weighted mean of encoder stacks, weights renormalised to 1."""
    if not encoders:
        raise ConfigError("nothing to aggregate")
    if len(encoders) != len(weights):
        raise ShapeError("one weight per encoder required")
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or not np.isfinite(w).all():
        raise ConfigError("weights must be finite and nonnegative")
    total = w.sum()
    if total == 0.0:
        raise ConfigError("weights sum to zero")
    w = w / total
    assert abs(w.sum() - 1.0) <= 1e-12

    reference = encoders[0]
    out = reference.copy()
    for layer_idx, layer in enumerate(out.layers):
        for enc in encoders[1:]:
            other = enc.layers[layer_idx]
            if other.kernels.shape != layer.kernels.shape or other.stride != layer.stride:
                raise ShapeError("encoder shapes differ across clients")
        layer.kernels = sum(
            wi * enc.layers[layer_idx].kernels for wi, enc in zip(w, encoders)
        )
        layer.biases = sum(
            wi * enc.layers[layer_idx].biases for wi, enc in zip(w, encoders)
        )
    return out


def _client_update(client: ClientHandle, global_encoder: EncoderParams,
                   hyper: Hyperparams, epochs: int) -> list[LossBreakdown]:
    """Local step of one participant: adopt the broadcast encoder, keep the
    private R and decoder, train, and leave the new state on the client."""
    client.params.encoder = global_encoder.copy()
    try:
        params, state, trace = train_local(
            client.shard, client.params, hyper, client.adjacency, epochs, client.optimizer
        )
    except NumericsError as exc:
        raise NumericsError(f"client {client.client_id}: {exc}") from exc
    client.params = params
    client.optimizer = state
    return trace


def run_round(server: ServerState, clients: list[ClientHandle],
              config: FederationConfig) -> RoundReport:
    """One communication round: sample, broadcast, train, aggregate."""
    participants = sample_clients(server, len(clients), config.participation)
    broadcast = server.global_encoder

    def work(cid: int) -> tuple[int, list[LossBreakdown]]:
        return cid, _client_update(clients[cid], broadcast, config.hyper, config.local_epochs)

    if config.max_workers and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            results = dict(pool.map(work, participants))
    else:
        results = dict(work(cid) for cid in participants)

    weights = [clients[cid].weight for cid in participants]
    server.global_encoder = aggregate(
        [clients[cid].params.encoder for cid in participants], weights
    )
    server.round += 1

    normalised = np.asarray(weights) / np.sum(weights)
    final_losses = {}
    for cid in participants:
        trace = results[cid]
        final_losses[cid] = trace[-1] if trace else loss(
            clients[cid].params, config.hyper, clients[cid].shard.samples,
            clients[cid].adjacency,
        )
        assert not np.any(np.diag(clients[cid].params.selfexpr.r)), "diag(R) nonzero after round"
    return RoundReport(
        round=server.round,
        participants=participants,
        final_losses=final_losses,
        weights_used={cid: float(w) for cid, w in zip(participants, normalised)},
        traces=results,
    )


def pretrain_clients(server: ServerState, clients: list[ClientHandle],
                     epochs: int, config: FederationConfig) -> None:
    """Reconstruction-only warmup on every client, then one full aggregation.

    Runs before round 1 with all objective weights zeroed, so only the
    autoencoder trains (R stays at its zero init).  Uses its own learning
    rate when configured; optimizer velocities are reset afterwards, so the
    main phase starts from a clean state.  Does not consume the server's
    sampling stream or advance the round counter.
    """
    if epochs <= 0:
        return
    warmup = Hyperparams(lam1=0.0, lam2=0.0, lam3=0.0,
                         alpha=config.hyper.alpha, beta=config.hyper.beta)
    lr = config.pretrain_learning_rate
    if lr is not None:
        for client in clients:
            client.optimizer = init_optimizer_state(client.params, lr, config.momentum)
    for client in clients:
        _client_update(client, server.global_encoder, warmup, epochs)
    for client in clients:
        client.optimizer = init_optimizer_state(
            client.params, config.learning_rate, config.momentum)
    server.global_encoder = aggregate(
        [c.params.encoder for c in clients], [c.weight for c in clients]
    )


def run_training(server: ServerState, clients: list[ClientHandle],
                 config: FederationConfig, rounds: int) -> list[RoundReport]:
    """Run `rounds` federation rounds, snapshotting on the configured interval."""
    reports = []
    for _ in range(rounds):
        reports.append(run_round(server, clients, config))
        if (config.checkpoint_interval and config.checkpoint_dir
                and server.round % config.checkpoint_interval == 0):
            save_federation_checkpoint(server, clients, config.checkpoint_dir, server.round)
    return reports


def save_federation_checkpoint(server: ServerState, clients: list[ClientHandle],
                               directory, round_index: int | None = None) -> Path:
    """Write the global encoder and every client's tensors under one directory."""
    base = Path(directory)
    target = base / (f"round_{round_index:05d}" if round_index is not None else "final")
    target.mkdir(parents=True, exist_ok=True)
    encoder_tensors = []
    for i, layer in enumerate(server.global_encoder.layers):
        encoder_tensors.append((f"enc{i}.kernels", layer.kernels))
        encoder_tensors.append((f"enc{i}.biases", layer.biases))
    save_checkpoint(encoder_tensors, target / "global_encoder.ckpt")
    for client in clients:
        save_checkpoint(client.params.named_tensors(),
                        target / f"client_{client.client_id:04d}.ckpt")
    return target
