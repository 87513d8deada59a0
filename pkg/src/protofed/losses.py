"""Prototype-alignment losses and cross-entropy, with analytic feature gradients.

The prototype loss has two parts. The contrastive term is an InfoNCE-style
ratio over powered cosine similarities: raising cosine to a fractional
exponent inflates small similarities more than large ones, which pushes the
denominator (other-class) terms apart harder than it rewards the numerator.
The correction term drives the summed same-class similarity back toward the
class's prototype count, compensating the intra-class slack the exponent
introduces. Exponent 1 with the correction off recovers plain prototype
InfoNCE.

Everything here is a pure scalar-path reference implementation; the batched
training path lives in :mod:`protofed.kernels` and is tested against these
functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import EPS_ZERO, as_vector, log_sum_exp
from .prototypes import GlobalPrototypeSet


@dataclass(frozen=True)
class LossConfig:
    """Hyper-parameters of the combined local loss.

    temperature > 0 concentrates the contrastive softmax; sparsity in (0, 1]
    is the similarity exponent (1 disables sharpening); proto_weight >= 0
    scales the prototype loss against cross-entropy; the two term flags
    implement the component ablation.
    """

    temperature: float = 0.07
    sparsity: float = 0.25
    proto_weight: float = 100.0
    contrast_term: bool = True
    correction_term: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must be in (0, 1]")
        if self.proto_weight < 0:
            raise ValueError("proto_weight must be >= 0")


def powered_cosine(z, g, sparsity: float) -> float:
    """cos(z, g) ** sparsity with cosine clamped into [0, 1] first.

    Negative or degenerate-norm cosines map to 0 before exponentiation, so
    the result always lies in [0, 1]. For non-negative inputs (the feature
    extractor's range) the clamp is inert.
    """
    z = as_vector(z)
    g = as_vector(g)
    if z.shape[0] != g.shape[0]:
        raise ValueError(f"dimension mismatch: {z.shape[0]} vs {g.shape[0]}")
    nz = np.linalg.norm(z)
    ng = np.linalg.norm(g)
    if nz < EPS_ZERO or ng < EPS_ZERO:
        return 0.0
    c = min(max(float(np.dot(z, g) / (nz * ng)), 0.0), 1.0)
    return c ** sparsity


def _class_similarities(z, protos: GlobalPrototypeSet, sparsity):
    """Powered similarities against every prototype, with class ids."""
    vecs, cls = protos.stacked()
    if vecs.shape[0] == 0:
        raise ValueError("prototype set is empty; apply the bootstrap rule upstream")
    s = np.array([powered_cosine(z, v, sparsity) for v in vecs])
    return s, cls


def contrastive_loss(z, y: int, protos: GlobalPrototypeSet, hyper: LossConfig) -> float:
    """-log of the same-class share of exp(similarity / temperature) mass."""
    s, cls = _class_similarities(z, protos, hyper.sparsity)
    own = cls == y
    if not np.any(own):
        raise ValueError(f"no prototype for class {y}")
    a = s / hyper.temperature
    return log_sum_exp(a) - log_sum_exp(a[own])


def correction_loss(z, y: int, protos: GlobalPrototypeSet, hyper: LossConfig) -> float:
    """|sum of same-class powered similarities - class prototype count|."""
    s, cls = _class_similarities(z, protos, hyper.sparsity)
    own = cls == y
    if not np.any(own):
        raise ValueError(f"no prototype for class {y}")
    return float(abs(s[own].sum() - own.sum()))


def prototype_loss(z, y: int, protos: GlobalPrototypeSet, hyper: LossConfig) -> float:
    """Sum of the enabled prototype-loss terms; disabled terms contribute 0."""
    total = 0.0
    if hyper.contrast_term:
        total += contrastive_loss(z, y, protos, hyper)
    if hyper.correction_term:
        total += correction_loss(z, y, protos, hyper)
    return total


def cross_entropy(logits, y: int) -> float:
    """-log softmax(logits)[y], stabilized through log-sum-exp."""
    logits = as_vector(logits)
    if not 0 <= y < logits.shape[0]:
        raise ValueError(f"class {y} out of range for {logits.shape[0]} logits")
    return log_sum_exp(logits) - float(logits[y])


def prototype_loss_grad_z(z, y: int, protos: GlobalPrototypeSet, hyper: LossConfig) -> np.ndarray:
    """Exact gradient of the (unweighted) prototype loss with respect to z.

    Prototypes are constants. At the correction term's absolute-value kink
    the zero subgradient is returned; where the cosine clamp is active the
    similarity is locally constant, so its gradient is zero.
    """
    z = as_vector(z)
    vecs, cls = protos.stacked()
    if vecs.shape[0] == 0:
        raise ValueError("prototype set is empty; apply the bootstrap rule upstream")
    own = cls == y
    if not np.any(own):
        raise ValueError(f"no prototype for class {y}")

    nz = np.linalg.norm(z)
    grad = np.zeros_like(z)
    if nz < EPS_ZERO:
        return grad
    zn = z / nz

    craw = np.empty(vecs.shape[0])
    s = np.empty(vecs.shape[0])
    dsdc = np.empty(vecs.shape[0])
    pn = np.empty_like(vecs)
    for j, v in enumerate(vecs):
        ng = np.linalg.norm(v)
        pn[j] = 0.0 if ng < EPS_ZERO else v / ng
        craw[j] = float(zn @ pn[j])
        cc = min(max(craw[j], 0.0), 1.0)
        s[j] = cc ** hyper.sparsity
        dsdc[j] = hyper.sparsity * cc ** (hyper.sparsity - 1.0) if cc > 0.0 else 0.0

    dlds = np.zeros_like(s)
    if hyper.contrast_term:
        a = s / hyper.temperature
        ea = np.exp(a - a.max())
        soft_all = ea / ea.sum()
        soft_own = np.where(own, ea, 0.0) / ea[own].sum()
        dlds += (soft_all - soft_own) / hyper.temperature
    if hyper.correction_term:
        dlds += np.where(own, np.sign(s[own].sum() - own.sum()), 0.0)

    w = dlds * dsdc
    return (pn.T @ w - float(w @ craw) * zn) / nz


def batch_local_loss(features, labels, protos: GlobalPrototypeSet, hyper: LossConfig, logits) -> float:
    """Mean over the batch of proto_weight * prototype loss + cross-entropy.

    Bootstrap rule: a sample whose class has no prototype yet (in particular
    the empty first-round set) contributes zero prototype loss.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    counts = protos.counts()
    total = 0.0
    for i in range(features.shape[0]):
        yi = int(labels[i])
        if hyper.proto_weight != 0.0 and counts.get(yi, 0) > 0:
            total += hyper.proto_weight * prototype_loss(features[i], yi, protos, hyper)
        total += cross_entropy(logits[i], yi)
    return total / features.shape[0]
