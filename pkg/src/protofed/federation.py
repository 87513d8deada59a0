"""Client/server round loop with prototype exchange and a communication ledger.

Each round: clients receive the aggregated model and the current global
prototype set, run local SGD epochs on the combined loss, rebuild per-class
prototypes from their updated features, optionally perturb them, and upload
model plus prototypes. The server aggregates models sample-weighted, reduces
pooled prototypes per class (or broadcasts them unreduced for the comparison
arm), and the loop repeats. Round 1 downloads an empty prototype set, so the
prototype loss contributes exactly zero until prototypes exist.

Determinism contract: all randomness is drawn from per-client or per-purpose
Philox streams, uploads are reduced in client-id order, and client updates
are independent, so results do not depend on the parallelism setting.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .datagen import FederatedDataset, build_federated_dataset
from .metrics import MetricsLog, RoundRecord, accuracy, feature_variance
from .model import (
    ModelParams,
    OptimizerState,
    aggregate_params,
    backward,
    forward_features,
    init_params,
    sgd_step,
)
from .numerics import STREAM_CLIENT, STREAM_MODEL_INIT, STREAM_PARTICIPATION, STREAM_SERVER, rng_stream
from .prototypes import (
    GlobalPrototypeSet,
    LocalPrototypeSet,
    broadcast_global_set,
    compute_global_prototypes,
    compute_local_prototypes,
    perturb_prototypes,
)


@dataclass
class ClientState:
    client_id: int
    domain_id: int
    x: np.ndarray
    y: np.ndarray
    params: ModelParams
    rng: np.random.Generator

    def __post_init__(self):
        if len(self.y) < 1:
            raise ValueError("client needs at least one sample")

    @property
    def sample_count(self) -> int:
        return int(len(self.y))


@dataclass
class UploadMessage:
    client_id: int
    params: ModelParams
    prototypes: LocalPrototypeSet
    sample_count: int


@dataclass
class DownloadMessage:
    params: ModelParams
    prototypes: GlobalPrototypeSet


@dataclass(frozen=True)
class LedgerRow:
    round_index: int
    uploaded_by_client: tuple[int, ...]
    downloaded_per_client: int
    model_scalars_exchanged: int

    @property
    def uploaded_total(self) -> int:
        return int(sum(self.uploaded_by_client))


@dataclass
class CommLedger:
    rows: list[LedgerRow] = field(default_factory=list)

    def totals(self) -> dict[str, int]:
        return {
            "prototypes_uploaded": sum(r.uploaded_total for r in self.rows),
            "prototypes_downloaded_per_client": sum(r.downloaded_per_client for r in self.rows),
            "model_scalars_exchanged": sum(r.model_scalars_exchanged for r in self.rows),
        }


@dataclass
class ServerState:
    params: ModelParams
    global_protos: GlobalPrototypeSet
    round_index: int
    cfg: ExperimentConfig
    seed: int = 0
    ledger: CommLedger = field(default_factory=CommLedger)


def _features_by_class(params: ModelParams, x, y) -> dict[int, np.ndarray]:
    z = forward_features(params, x)
    return {int(c): z[y == c] for c in np.unique(y)}


def local_update(
    client: ClientState, download: DownloadMessage, cfg: ExperimentConfig
) -> UploadMessage:
    """One client's round: adopt the download, train E epochs, rebuild and
    (optionally) perturb prototypes, and return the upload.

    The client's model field is left at the post-update value so callers can
    evaluate the local model. Momentum starts fresh each round.
    """
    params = download.params
    opt = OptimizerState(
        learning_rate=cfg.optimizer.learning_rate,
        momentum=cfg.optimizer.momentum,
        weight_decay=cfg.optimizer.weight_decay,
    )
    n = client.sample_count
    for _ in range(cfg.local_epochs):
        order = client.rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = backward(
                params, client.x[batch], client.y[batch], download.prototypes, cfg.loss
            )
            params = sgd_step(params, opt, grads)

    client.params = params
    feats = _features_by_class(params, client.x, client.y)
    protos = compute_local_prototypes(
        client.client_id, feats, cfg.local_mode, cfg.clustering, cfg.kmeans_k, client.rng
    )
    if cfg.privacy.enabled:
        protos = perturb_prototypes(protos, cfg.privacy, client.rng)
    return UploadMessage(client.client_id, params, protos, n)


def server_round(server: ServerState, uploads: list[UploadMessage]) -> tuple[ServerState, DownloadMessage]:
    """Aggregate uploaded models and prototypes into the next download."""
    if not uploads:
        raise ValueError("server_round needs at least one upload")
    uploads = sorted(uploads, key=lambda u: u.client_id)
    cfg = server.cfg
    new_round = server.round_index + 1

    new_params = aggregate_params([(u.params, u.sample_count) for u in uploads])
    local_sets = [u.prototypes for u in uploads]
    if cfg.broadcast_locals:
        new_protos = broadcast_global_set(local_sets, round_index=new_round)
    else:
        new_protos = compute_global_prototypes(
            local_sets,
            cfg.global_mode,
            cfg.clustering,
            cfg.kmeans_k,
            rng_stream(server.seed, STREAM_SERVER, new_round) if cfg.clustering != "finch" else None,
            weight_by_members=cfg.weight_global_average_by_members,
            round_index=new_round,
        )

    server.ledger.rows.append(
        LedgerRow(
            round_index=new_round,
            uploaded_by_client=tuple(u.prototypes.total() for u in uploads),
            downloaded_per_client=new_protos.total(),
            model_scalars_exchanged=2 * len(uploads) * new_params.scalar_count(),
        )
    )
    server.params = new_params
    server.global_protos = new_protos
    server.round_index = new_round
    return server, DownloadMessage(params=new_params, prototypes=new_protos)


def _evaluate_round(
    cfg: ExperimentConfig,
    ds: FederatedDataset,
    clients: list[ClientState],
    server: ServerState,
    uploads: list[UploadMessage],
) -> RoundRecord:
    by_domain_acc: dict[int, list[float]] = {d.domain_id: [] for d in cfg.domains}
    by_domain_protos: dict[int, list[float]] = {d.domain_id: [] for d in cfg.domains}
    client_accs = []
    pooled_feats: dict[int, list[np.ndarray]] = {}
    upload_by_client = {u.client_id: u for u in uploads}

    for c in clients:
        tx, ty = ds.domain_test[c.domain_id]
        acc = accuracy(c.params, tx, ty)
        client_accs.append(acc)
        by_domain_acc[c.domain_id].append(acc)
        counts = upload_by_client[c.client_id].prototypes.counts() if c.client_id in upload_by_client else {}
        if counts:
            by_domain_protos[c.domain_id].append(float(np.mean(list(counts.values()))))
        for m, feats in _features_by_class(c.params, tx, ty).items():
            pooled_feats.setdefault(m, []).append(feats)

    global_acc = float(
        np.mean([accuracy(server.params, tx, ty) for tx, ty in ds.domain_test])
    )
    return RoundRecord(
        round_index=server.round_index,
        domain_acc=tuple(float(np.mean(by_domain_acc[d.domain_id])) for d in cfg.domains),
        avg_acc=float(np.mean(client_accs)),
        global_acc=global_acc,
        feature_var=feature_variance({m: np.vstack(v) for m, v in pooled_feats.items()}),
        domain_proto_mean=tuple(
            float(np.mean(by_domain_protos[d.domain_id])) if by_domain_protos[d.domain_id] else 0.0
            for d in cfg.domains
        ),
        protos_uploaded=server.ledger.rows[-1].uploaded_total,
        protos_downloaded_per_client=server.ledger.rows[-1].downloaded_per_client,
        model_scalars_exchanged=server.ledger.rows[-1].model_scalars_exchanged,
    )


def run_training(cfg: ExperimentConfig, seed: int) -> MetricsLog:
    """Run the full round loop for one seed and return the metrics log."""
    started = time.perf_counter()
    ds = build_federated_dataset(
        cfg.num_classes, cfg.input_dim, list(cfg.domains), cfg.partition, seed
    )
    params0 = init_params(
        cfg.input_dim, list(cfg.hidden_dims), cfg.feature_dim, cfg.num_classes,
        rng_stream(seed, STREAM_MODEL_INIT),
    )
    clients = [
        ClientState(
            client_id=k,
            domain_id=ds.client_domain[k],
            x=ds.client_train[k][0],
            y=ds.client_train[k][1],
            params=params0,
            rng=rng_stream(seed, STREAM_CLIENT, k),
        )
        for k in range(ds.num_clients())
    ]
    server = ServerState(
        params=params0,
        global_protos=GlobalPrototypeSet(round_index=0),
        round_index=0,
        cfg=cfg,
        seed=seed,
    )

    initial_accs = []
    initial_by_domain = []
    for d in cfg.domains:
        tx, ty = ds.domain_test[d.domain_id]
        initial_by_domain.append(accuracy(params0, tx, ty))
    for c in clients:
        initial_accs.append(initial_by_domain[c.domain_id])

    log = MetricsLog(
        domain_names=cfg.domain_names(),
        initial_domain_acc=[float(a) for a in initial_by_domain],
        initial_avg_acc=float(np.mean(initial_accs)),
    )

    download = DownloadMessage(params=params0, prototypes=server.global_protos)
    for t in range(1, cfg.rounds + 1):
        participants = clients
        if cfg.participation_fraction < 1.0:
            k = max(1, int(np.ceil(cfg.participation_fraction * len(clients))))
            chosen = rng_stream(seed, STREAM_PARTICIPATION, t).choice(
                len(clients), size=k, replace=False
            )
            participants = [clients[i] for i in sorted(chosen)]

        if cfg.parallelism > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                uploads = list(pool.map(lambda c: local_update(c, download, cfg), participants))
        else:
            uploads = [local_update(c, download, cfg) for c in participants]

        server, download = server_round(server, uploads)
        log.rounds.append(_evaluate_round(cfg, ds, clients, server, uploads))

    log.wall_clock_seconds = time.perf_counter() - started
    return log
