"""Synthetic heterogeneous-domain datasets and label partitioning.

Every domain sees the same class anchors (unit vectors shared across the
experiment) through its own random orthogonal mixing, then adds isotropic
Gaussian noise whose scale is the domain's difficulty knob: small sigma makes
tight, easy classes, large sigma makes scattered, hard ones. Train and test
samples come from disjoint random streams of the same distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import (
    STREAM_ANCHORS,
    STREAM_DOMAIN_TEST,
    STREAM_DOMAIN_TRAIN,
    STREAM_PARTITION,
    STREAM_TRANSFORM,
    normalize_rows,
    rng_stream,
)


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    name: str
    sigma: float
    transform_seed: int
    n_train: int = 100
    n_test: int = 500
    clients: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        if self.clients < 1:
            raise ValueError("each domain needs at least one client")
        if not self.name or not all(c.isalnum() or c == "_" for c in self.name):
            raise ValueError(f"domain name {self.name!r} must be alphanumeric/underscore")


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "iid"
    dirichlet_alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("iid", "dirichlet"):
            raise ValueError(f"partition kind must be iid or dirichlet, got {self.kind!r}")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be > 0")


@dataclass
class FederatedDataset:
    num_classes: int
    input_dim: int
    domains: list[DomainSpec]
    client_domain: list[int]
    client_train: list[tuple[np.ndarray, np.ndarray]]
    domain_test: list[tuple[np.ndarray, np.ndarray]]

    def num_clients(self) -> int:
        return len(self.client_train)


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    """n labels as evenly split over classes as possible, lowest ids first."""
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    return np.repeat(np.arange(num_classes), counts)


def domain_transform(transform_seed: int, dim: int) -> np.ndarray:
    """Haar-random orthogonal mixing matrix, keyed by the transform seed only
    (two domains with equal seeds share the same geometry)."""
    g = rng_stream(transform_seed, STREAM_TRANSFORM).normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def class_anchors(seed: int, num_classes: int, dim: int) -> np.ndarray:
    """Shared class anchors, uniform on the unit sphere."""
    g = rng_stream(seed, STREAM_ANCHORS).normal(size=(num_classes, dim))
    return normalize_rows(g)


def _sample_domain(anchors, spec: DomainSpec, n, stream) -> tuple[np.ndarray, np.ndarray]:
    labels = _balanced_labels(n, anchors.shape[0])
    transformed = anchors @ domain_transform(spec.transform_seed, anchors.shape[1]).T
    x = transformed[labels] + stream.normal(0.0, spec.sigma, (n, anchors.shape[1]))
    return x, labels.astype(np.int64)


def generate_domains(
    num_classes: int, input_dim: int, specs: list[DomainSpec], seed: int
) -> tuple[list[tuple[np.ndarray, np.ndarray]], list[tuple[np.ndarray, np.ndarray]]]:
    """Per-domain (train, test) pools. Inputs may be signed; only extracted
    features are non-negative."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    if not specs:
        raise ValueError("need at least one domain spec")
    anchors = class_anchors(seed, num_classes, input_dim)
    train, test = [], []
    for spec in specs:
        train.append(
            _sample_domain(anchors, spec, spec.n_train, rng_stream(seed, STREAM_DOMAIN_TRAIN, spec.domain_id))
        )
        test.append(
            _sample_domain(anchors, spec, spec.n_test, rng_stream(seed, STREAM_DOMAIN_TEST, spec.domain_id))
        )
    return train, test


def largest_remainder_counts(proportions: np.ndarray, n: int) -> np.ndarray:
    """Integer split of n by proportions; remainders go to the largest
    fractional parts, ties to the lowest index."""
    quotas = np.asarray(proportions, dtype=np.float64) * n
    base = np.floor(quotas).astype(np.int64)
    short = n - int(base.sum())
    frac = quotas - base
    order = np.lexsort((np.arange(len(base)), -frac))
    base[order[:short]] += 1
    return base


def dirichlet_partition(
    labels, alpha: float, num_clients: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Split indices across clients with per-class Dirichlet(alpha) proportions.

    Every index lands on exactly one client; clients may receive zero samples
    of some classes (that is the point of label skew).
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(num_clients)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        props = rng.dirichlet(np.full(num_clients, alpha))
        counts = largest_remainder_counts(props, idx.size)
        start = 0
        for k in range(num_clients):
            out[k].extend(idx[start : start + counts[k]].tolist())
            start += counts[k]
    return [np.sort(np.asarray(ix, dtype=np.int64)) for ix in out]


def iid_partition(n: int, num_clients: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled near-equal split of n indices."""
    idx = rng.permutation(n)
    counts = largest_remainder_counts(np.full(num_clients, 1.0 / num_clients), n)
    splits = np.split(idx, np.cumsum(counts)[:-1])
    return [np.sort(s.astype(np.int64)) for s in splits]


def ensure_nonempty_parts(parts: list[np.ndarray]) -> list[np.ndarray]:
    """Move one index from the fullest part into any empty one (skewed
    Dirichlet draws can starve a client, but every client must train)."""
    parts = [p.copy() for p in parts]
    for k, p in enumerate(parts):
        if len(p) == 0:
            donor = int(np.argmax([len(q) for q in parts]))
            if len(parts[donor]) <= 1:
                raise ValueError("not enough samples to give every client one")
            parts[k] = parts[donor][:1]
            parts[donor] = parts[donor][1:]
    return parts


def build_federated_dataset(
    num_classes: int,
    input_dim: int,
    specs: list[DomainSpec],
    partition: PartitionSpec,
    seed: int,
) -> FederatedDataset:
    """Generate domains and hand each domain's train pool to its clients."""
    train_pools, test_pools = generate_domains(num_classes, input_dim, specs, seed)
    client_train: list[tuple[np.ndarray, np.ndarray]] = []
    client_domain: list[int] = []
    for spec, (x, y) in zip(specs, train_pools):
        rng = rng_stream(seed, STREAM_PARTITION, spec.domain_id)
        if spec.clients == 1:
            parts = [np.arange(len(y), dtype=np.int64)]
        elif partition.kind == "iid":
            parts = iid_partition(len(y), spec.clients, rng)
        else:
            parts = ensure_nonempty_parts(
                dirichlet_partition(y, partition.dirichlet_alpha, spec.clients, rng)
            )
        for ix in parts:
            client_train.append((x[ix], y[ix]))
            client_domain.append(spec.domain_id)
    return FederatedDataset(
        num_classes=num_classes,
        input_dim=input_dim,
        domains=list(specs),
        client_domain=client_domain,
        client_train=client_train,
        domain_test=test_pools,
    )


# CSV schema: train.csv has client_id, domain_id, label, x0..x{V-1};
# test.csv has domain_id, label, x0..x{V-1}. Floats use %.17g (lossless).

def dump_dataset_csv(ds: FederatedDataset, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xcols = [f"x{i}" for i in range(ds.input_dim)]
    train_path = out_dir / "train.csv"
    with open(train_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "domain_id", "label", *xcols])
        for k, (x, y) in enumerate(ds.client_train):
            for i in range(len(y)):
                w.writerow([k, ds.client_domain[k], int(y[i]), *(f"{v:.17g}" for v in x[i])])
    test_path = out_dir / "test.csv"
    with open(test_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain_id", "label", *xcols])
        for d, (x, y) in enumerate(ds.domain_test):
            for i in range(len(y)):
                w.writerow([d, int(y[i]), *(f"{v:.17g}" for v in x[i])])
    return [train_path, test_path]


def load_dataset_csv(num_classes: int, specs: list[DomainSpec], in_dir) -> FederatedDataset:
    """Rebuild a dataset from the dump_dataset_csv schema."""
    in_dir = Path(in_dir)
    by_client: dict[int, tuple[list, list, int]] = {}
    with open(in_dir / "train.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    input_dim = len(rows[0]) - 3
    for row in rows[1:]:
        k, d, y = int(row[0]), int(row[1]), int(row[2])
        xs, ys, _ = by_client.setdefault(k, ([], [], d))
        xs.append([float(v) for v in row[3:]])
        ys.append(y)
    by_domain: dict[int, tuple[list, list]] = {}
    with open(in_dir / "test.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        d, y = int(row[0]), int(row[1])
        xs, ys = by_domain.setdefault(d, ([], []))
        xs.append([float(v) for v in row[2:]])
        ys.append(y)
    client_train = []
    client_domain = []
    for k in sorted(by_client):
        xs, ys, d = by_client[k]
        client_train.append((np.asarray(xs), np.asarray(ys, dtype=np.int64)))
        client_domain.append(d)
    domain_test = [
        (np.asarray(by_domain[d][0]), np.asarray(by_domain[d][1], dtype=np.int64))
        for d in sorted(by_domain)
    ]
    return FederatedDataset(
        num_classes=num_classes,
        input_dim=input_dim,
        domains=list(specs),
        client_domain=client_domain,
        client_train=client_train,
        domain_test=domain_test,
    )
