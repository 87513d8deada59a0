"""Class prototype generation at the client and server levels.

A prototype is a representative feature-space vector for one class: either
the plain mean of the class's vectors ("average" mode) or one center per
discovered cluster ("cluster" mode). Client-side sets summarize private
features; the server pools the received prototypes per class and reduces them
again with the same two modes. Optional Gaussian perturbation masks the
uploaded vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import Partition, cluster_centers, cluster_points
from .numerics import as_vector


@dataclass(frozen=True)
class Prototype:
    class_id: int
    vector: np.ndarray
    member_count: int

    def __post_init__(self):
        object.__setattr__(self, "vector", as_vector(self.vector))
        if self.member_count < 1:
            raise ValueError("member_count must be positive")


@dataclass
class LocalPrototypeSet:
    """One client's per-class prototype lists."""

    client_id: int
    by_class: dict[int, list[Prototype]] = field(default_factory=dict)

    def classes(self) -> list[int]:
        return sorted(self.by_class)

    def counts(self) -> dict[int, int]:
        return {m: len(self.by_class[m]) for m in self.classes()}

    def total(self) -> int:
        return sum(len(v) for v in self.by_class.values())


@dataclass
class GlobalPrototypeSet:
    """Server-side per-class prototype lists distributed to every client."""

    by_class: dict[int, list[Prototype]] = field(default_factory=dict)
    round_index: int = 0

    def classes(self) -> list[int]:
        return sorted(self.by_class)

    def counts(self) -> dict[int, int]:
        return {m: len(self.by_class[m]) for m in self.classes()}

    def total(self) -> int:
        return sum(len(v) for v in self.by_class.values())

    def is_empty(self) -> bool:
        return self.total() == 0

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All prototype vectors as one matrix plus their class ids, ordered
        by (class_id, position); empty set yields (0, 0)-shaped arrays."""
        vecs, cls = [], []
        for m in self.classes():
            for p in self.by_class[m]:
                vecs.append(p.vector)
                cls.append(m)
        if not vecs:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return np.stack(vecs), np.asarray(cls, dtype=np.int64)


@dataclass(frozen=True)
class PrivacyConfig:
    enabled: bool = False
    noise_scale: float = 0.05
    perturb_prob: float = 0.1
    dp_sgd: bool = False

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ValueError("perturb_prob must be in [0, 1]")
        if self.dp_sgd:
            raise ValueError(
                "dp_sgd model-parameter noise is not supported; only prototype "
                "perturbation is implemented"
            )


def _as_feature_matrix(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) feature array, got {f.shape}")
    return f


def compute_local_prototypes(
    client_id: int,
    features_by_class: dict[int, np.ndarray],
    mode: str,
    clustering: str = "finch",
    kmeans_k: int = 2,
    rng: np.random.Generator | None = None,
) -> LocalPrototypeSet:
    """Summarize per-class features into prototypes.

    ``average`` emits one mean prototype per class; ``cluster`` emits one
    prototype per cluster found by the configured backend. Classes with no
    features are simply absent (non-IID partitions may miss classes).
    """
    if mode not in ("average", "cluster"):
        raise ValueError(f"unknown local prototype mode {mode!r}")
    out = LocalPrototypeSet(client_id=client_id)
    for m in sorted(features_by_class):
        feats = features_by_class[m]
        if feats is None or len(feats) == 0:
            continue
        feats = _as_feature_matrix(feats)
        out.by_class[m] = _reduce(m, feats, mode, clustering, kmeans_k, rng)
    return out


def _reduce(class_id, vectors, mode, clustering, kmeans_k, rng) -> list[Prototype]:
    if mode == "average":
        return [Prototype(class_id, vectors.mean(axis=0), vectors.shape[0])]
    part: Partition = cluster_points(vectors, clustering, kmeans_k, rng)
    centers = cluster_centers(part, vectors)
    sizes = part.sizes()
    return [Prototype(class_id, centers[j], int(sizes[j])) for j in range(part.num_clusters)]


def pool_by_class(local_sets: list[LocalPrototypeSet]) -> dict[int, list[Prototype]]:
    """Union of prototypes per class, in (client_id, class position) order."""
    pooled: dict[int, list[Prototype]] = {}
    for ls in sorted(local_sets, key=lambda s: s.client_id):
        for m in ls.classes():
            pooled.setdefault(m, []).extend(ls.by_class[m])
    return pooled


def compute_global_prototypes(
    local_sets: list[LocalPrototypeSet],
    mode: str,
    clustering: str = "finch",
    kmeans_k: int = 2,
    rng: np.random.Generator | None = None,
    weight_by_members: bool = False,
    round_index: int = 0,
) -> GlobalPrototypeSet:
    """Reduce pooled client prototypes per class into the global set.

    ``average`` takes the unweighted mean over pooled prototypes (set
    ``weight_by_members`` to weight by each prototype's member count);
    ``cluster`` re-clusters the pooled vectors. Member counts accumulate so a
    global prototype records how many raw samples stand behind it.
    """
    if not local_sets:
        raise ValueError("need at least one local prototype set")
    if mode not in ("average", "cluster"):
        raise ValueError(f"unknown global prototype mode {mode!r}")
    pooled = pool_by_class(local_sets)
    out = GlobalPrototypeSet(round_index=round_index)
    for m in sorted(pooled):
        protos = pooled[m]
        vectors = np.stack([p.vector for p in protos])
        members = np.array([p.member_count for p in protos])
        if mode == "average":
            if weight_by_members:
                mean = (vectors * members[:, None]).sum(axis=0) / members.sum()
            else:
                mean = vectors.mean(axis=0)
            out.by_class[m] = [Prototype(m, mean, int(members.sum()))]
        else:
            part = cluster_points(vectors, clustering, kmeans_k, rng)
            centers = cluster_centers(part, vectors)
            out.by_class[m] = [
                Prototype(m, centers[j], int(members[part.assignments == j].sum()))
                for j in range(part.num_clusters)
            ]
    return out


def broadcast_global_set(local_sets: list[LocalPrototypeSet], round_index: int = 0) -> GlobalPrototypeSet:
    """Pass every pooled local prototype through unreduced (the no-global-
    clustering comparison arm)."""
    return GlobalPrototypeSet(by_class=pool_by_class(local_sets), round_index=round_index)


def perturb_prototypes(
    local_set: LocalPrototypeSet, cfg: PrivacyConfig, rng: np.random.Generator
) -> LocalPrototypeSet:
    """Additive Gaussian masking of prototype vectors before upload.

    Each coordinate independently receives N(0, noise_scale^2) noise with
    probability ``perturb_prob``. Member counts and class structure are
    preserved. Draw order is fixed (sorted classes, list order, mask before
    noise) so a given stream always produces the same perturbation.
    """
    if not cfg.enabled:
        raise ValueError("perturb_prototypes called with privacy disabled")
    out = LocalPrototypeSet(client_id=local_set.client_id)
    for m in local_set.classes():
        perturbed = []
        for proto in local_set.by_class[m]:
            d = proto.vector.shape[0]
            mask = rng.random(d) < cfg.perturb_prob
            noise = rng.normal(0.0, cfg.noise_scale, d)
            perturbed.append(replace(proto, vector=proto.vector + mask * noise))
        out.by_class[m] = perturbed
    return out
