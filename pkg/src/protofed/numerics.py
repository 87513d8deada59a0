"""Shared dense-vector primitives and seeded random streams.

All arithmetic in this package is 64-bit floating point. Randomness comes
from numpy's Philox generator, a counter-based bijection whose output for a
given (seed, path) is identical across platforms and runs; every consumer
derives its own stream through :func:`rng_stream` so that no two components
ever share generator state.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

# Norms below this threshold count as zero when normalizing or computing
# cosine similarities; avoids NaN from degenerate (all-zero) features.
EPS_ZERO = 1e-12

# Stream path tags. rng_stream(seed, tag, ...) with distinct tags guarantees
# disjoint streams for every purpose within one experiment seed.
STREAM_ANCHORS = 1
STREAM_TRANSFORM = 2
STREAM_DOMAIN_TRAIN = 3
STREAM_DOMAIN_TEST = 4
STREAM_PARTITION = 5
STREAM_MODEL_INIT = 6
STREAM_CLIENT = 7
STREAM_SERVER = 8
STREAM_PARTICIPATION = 9


def rng_stream(seed: int, *path: int) -> np.random.Generator:
    """Return a Philox generator for the stream addressed by (seed, *path).

    The same (seed, path) always yields the same draw sequence. Streams with
    different paths are statistically independent. Generators are stateful
    and single-owner: never share one between concurrent tasks.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def as_vector(values) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, raising on NaN/Inf."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    return v


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between u and v, in [-1, 1].

    Returns 0.0 when either norm is below ``EPS_ZERO``. Raises on dimension
    mismatch.
    """
    u = as_vector(u)
    v = as_vector(v)
    if u.shape[0] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < EPS_ZERO or nv < EPS_ZERO:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def normalize(u) -> np.ndarray:
    """u / ||u||, or the zero vector when ||u|| < EPS_ZERO."""
    u = as_vector(u)
    n = np.linalg.norm(u)
    if n < EPS_ZERO:
        return np.zeros_like(u)
    return u / n


def log_sum_exp(xs: Sequence[float] | np.ndarray) -> float:
    """log(sum(exp(xs))) via max-shift; finite for all finite inputs."""
    a = np.asarray(xs, dtype=np.float64)
    if a.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if not np.all(np.isfinite(a)):
        raise ValueError("log_sum_exp input contains non-finite values")
    m = float(np.max(a))
    return m + float(np.log(np.sum(np.exp(a - m))))


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise normalize a 2-D array; rows with near-zero norm become zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < EPS_ZERO, 1.0, norms)
    out = x / safe
    out[norms[:, 0] < EPS_ZERO] = 0.0
    return out
