"""Shared classification network: rectified MLP extractor plus linear head.

The extractor applies a rectifier after every layer, including the last, so
features are always component-wise non-negative; that keeps feature/prototype
cosines inside [0, 1], which the powered-cosine loss relies on. The head maps
features to raw logits (softmax lives inside the cross-entropy). Training
steps are functional: they return new parameter values and never mutate
inputs, so clients can run concurrently on shared downloads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .losses import LossConfig
from .prototypes import GlobalPrototypeSet


@dataclass(frozen=True)
class ModelParams:
    """Extractor layer (weights, bias) pairs plus the classifier head.

    Layer weights are (out, in); the chain must run input_dim -> ... ->
    feature_dim, and the head maps feature_dim -> num_classes.
    """

    extractor: tuple[tuple[np.ndarray, np.ndarray], ...]
    head_w: np.ndarray
    head_b: np.ndarray
    input_dim: int
    feature_dim: int
    num_classes: int

    def __post_init__(self):
        fan = self.input_dim
        for i, (w, b) in enumerate(self.extractor):
            if w.ndim != 2 or w.shape[1] != fan or b.shape != (w.shape[0],):
                raise ValueError(f"extractor layer {i} shape mismatch: {w.shape} after {fan}")
            fan = w.shape[0]
        if fan != self.feature_dim:
            raise ValueError(f"extractor ends at {fan}, expected feature_dim {self.feature_dim}")
        if self.head_w.shape != (self.num_classes, self.feature_dim):
            raise ValueError(f"head weights {self.head_w.shape} != (M, D)")
        if self.head_b.shape != (self.num_classes,):
            raise ValueError("head bias shape mismatch")
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters contain non-finite values")

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.extractor:
            out.extend((w, b))
        out.extend((self.head_w, self.head_b))
        return out

    def scalar_count(self) -> int:
        return int(sum(a.size for a in self.arrays()))


@dataclass(frozen=True)
class Gradients:
    """Per-parameter gradients, shaped exactly like the model arrays."""

    extractor: tuple[tuple[np.ndarray, np.ndarray], ...]
    head_w: np.ndarray
    head_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.extractor:
            out.extend((w, b))
        out.extend((self.head_w, self.head_b))
        return out


@dataclass
class OptimizerState:
    """Classical momentum SGD with weight decay folded into the gradient."""

    learning_rate: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 1e-5
    velocity: list[np.ndarray] | None = None


def _rebuild(template: ModelParams, arrays: list[np.ndarray]) -> ModelParams:
    n_layers = len(template.extractor)
    ext = tuple((arrays[2 * i], arrays[2 * i + 1]) for i in range(n_layers))
    return ModelParams(
        extractor=ext,
        head_w=arrays[2 * n_layers],
        head_b=arrays[2 * n_layers + 1],
        input_dim=template.input_dim,
        feature_dim=template.feature_dim,
        num_classes=template.num_classes,
    )


def init_params(
    input_dim: int,
    hidden_dims: list[int],
    feature_dim: int,
    num_classes: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Uniform[-a, a] weights with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    dims = [input_dim, *hidden_dims, feature_dim]
    ext = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        ext.append((rng.uniform(-a, a, (fan_out, fan_in)), np.zeros(fan_out)))
    a = np.sqrt(6.0 / (feature_dim + num_classes))
    head_w = rng.uniform(-a, a, (num_classes, feature_dim))
    return ModelParams(
        extractor=tuple(ext),
        head_w=head_w,
        head_b=np.zeros(num_classes),
        input_dim=input_dim,
        feature_dim=feature_dim,
        num_classes=num_classes,
    )


def _as_batch(x, dim, what) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{what} must have dimension {dim}, got shape {arr.shape}")
    return arr


def forward_features(params: ModelParams, x) -> np.ndarray:
    """Extractor output; non-negative by construction. Accepts one vector or
    a batch and returns the matching shape."""
    single = np.asarray(x).ndim == 1
    h = _as_batch(x, params.input_dim, "input")
    for w, b in params.extractor:
        h = np.maximum(h @ w.T + b, 0.0)
    return h[0] if single else h


def forward_logits(params: ModelParams, z) -> np.ndarray:
    """Affine head on features; no activation."""
    single = np.asarray(z).ndim == 1
    zb = _as_batch(z, params.feature_dim, "feature")
    out = zb @ params.head_w.T + params.head_b
    return out[0] if single else out


def local_loss(params: ModelParams, x, y, protos: GlobalPrototypeSet, hyper: LossConfig) -> float:
    """Batch-mean total loss (reference path; backward computes its own)."""
    from .losses import batch_local_loss

    z = forward_features(params, x)
    logits = forward_logits(params, z)
    return batch_local_loss(z, y, protos, hyper, logits)


def backward(
    params: ModelParams,
    x,
    y,
    protos: GlobalPrototypeSet,
    hyper: LossConfig,
) -> tuple[float, Gradients]:
    """Batch-mean loss and exact analytic gradients of every parameter.

    Prototypes are constants (no gradient flows into them). The bootstrap
    rule applies per sample: with no prototype for a sample's class, its
    prototype-loss term and gradient are exactly zero.
    """
    xb = _as_batch(x, params.input_dim, "input")
    yb = np.asarray(y, dtype=np.int64).ravel()
    n = xb.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if yb.shape[0] != n:
        raise ValueError("labels do not match batch size")
    if np.any((yb < 0) | (yb >= params.num_classes)):
        raise ValueError("label out of range")

    # forward, caching pre-activations
    hs = [xb]
    pre = []
    h = xb
    for w, b in params.extractor:
        a = h @ w.T + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        hs.append(h)
    z = h
    logits = z @ params.head_w.T + params.head_b

    # cross-entropy value and gradient
    shift = logits - logits.max(axis=1, keepdims=True)
    log_den = np.log(np.exp(shift).sum(axis=1))
    ce = float(np.mean(log_den - shift[np.arange(n), yb]))
    p = np.exp(shift) / np.exp(shift).sum(axis=1, keepdims=True)
    p[np.arange(n), yb] -= 1.0
    dlogits = p / n

    # prototype loss value and feature gradient
    proto_term = 0.0
    dz_proto = np.zeros_like(z)
    vecs, cls = protos.stacked()
    if hyper.proto_weight != 0.0 and vecs.shape[0] > 0:
        loss_i, dz_i = kernels.proto_loss_batch(
            z, yb, vecs, cls,
            hyper.sparsity, hyper.temperature,
            hyper.contrast_term, hyper.correction_term,
        )
        proto_term = hyper.proto_weight * float(loss_i.sum()) / n
        dz_proto = (hyper.proto_weight / n) * dz_i

    dz = dlogits @ params.head_w + dz_proto
    head_w_g = dlogits.T @ z
    head_b_g = dlogits.sum(axis=0)

    ext_grads: list[tuple[np.ndarray, np.ndarray]] = []
    g = dz
    for (w, _), a, h_in in zip(reversed(params.extractor), reversed(pre), reversed(hs[:-1])):
        g = g * (a > 0.0)
        ext_grads.append((g.T @ h_in, g.sum(axis=0)))
        g = g @ w
    ext_grads.reverse()

    grads = Gradients(extractor=tuple(ext_grads), head_w=head_w_g, head_b=head_b_g)
    return ce + proto_term, grads


def sgd_step(params: ModelParams, opt: OptimizerState, grads: Gradients) -> ModelParams:
    """v <- momentum * v + (g + wd * theta); theta <- theta - lr * v."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(
        p.shape != g.shape for p, g in zip(p_arrays, g_arrays)
    ):
        raise ValueError("gradient shapes do not match parameters")
    if opt.velocity is None:
        opt.velocity = [np.zeros_like(a) for a in p_arrays]
    new_arrays = []
    for i, (theta, g) in enumerate(zip(p_arrays, g_arrays)):
        v = opt.momentum * opt.velocity[i] + g + opt.weight_decay * theta
        opt.velocity[i] = v
        new_arrays.append(theta - opt.learning_rate * v)
    return _rebuild(params, new_arrays)


def aggregate_params(uploads: list[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count-weighted element-wise mean of client models."""
    if not uploads:
        raise ValueError("nothing to aggregate")
    ref = uploads[0][0]
    ref_shapes = [a.shape for a in ref.arrays()]
    total = 0
    for params, n_k in uploads:
        if n_k <= 0:
            raise ValueError("sample counts must be positive")
        if [a.shape for a in params.arrays()] != ref_shapes:
            raise ValueError("upload shapes differ")
        total += n_k
    acc = [np.zeros_like(a) for a in ref.arrays()]
    for params, n_k in uploads:
        w = n_k / total
        for i, a in enumerate(params.arrays()):
            acc[i] = acc[i] + w * a
    return _rebuild(ref, acc)
